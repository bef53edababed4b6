"""Image manifests: a CSV ``path,label`` mapping file next to the images."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from . import vision
from .errors import ConfigurationError, FormatError, ParseError

HEADER = ("path", "label")


@dataclass(frozen=True)
class Manifest:
    root: str
    entries: tuple  # (relative path, label) pairs
    class_labels: tuple

    def __post_init__(self):
        seen = set()
        for path, label in self.entries:
            if path in seen:
                raise ConfigurationError(f"duplicate manifest path {path!r}")
            seen.add(path)
            if label not in self.class_labels:
                raise ConfigurationError(f"label {label!r} of {path!r} not in class list")

    def __len__(self):
        return len(self.entries)

    def label_indices(self, class_labels=None) -> np.ndarray:
        order = {c: i for i, c in enumerate(class_labels or self.class_labels)}
        missing = sorted({lab for _, lab in self.entries} - set(order))
        if missing:
            raise ConfigurationError(f"manifest labels {missing} not among model classes {list(order)}")
        return np.array([order[lab] for _, lab in self.entries], np.int64)

    def path(self, i):
        return os.path.join(self.root, self.entries[i][0])


def to_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(entries)
    return buf.getvalue()


def parse_manifest(text, root=".", class_labels=None) -> Manifest:
    """Class order defaults to order of first appearance."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != HEADER:
        raise FormatError("manifest must start with the header 'path,label'", offset=0)
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise ParseError(f"expected 'path,label', got {row!r}", line=lineno)
        entries.append((row[0].strip(), row[1].strip()))
    if class_labels is None:
        class_labels = tuple(dict.fromkeys(lab for _, lab in entries))
    return Manifest(str(root), tuple(entries), tuple(class_labels))


def read_manifest(path, class_labels=None) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read(), os.path.dirname(os.path.abspath(path)), class_labels)


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(entries))


def load_images(manifest: Manifest, indices=None):
    """Read the images; errors name the offending path."""
    idx = range(len(manifest)) if indices is None else indices
    out = []
    for i in idx:
        p = manifest.path(i)
        try:
            out.append(vision.read_image(p))
        except OSError as exc:
            raise OSError(f"cannot read image {p}: {exc.strerror or exc}") from exc
        except FormatError as exc:
            raise FormatError(f"{p}: {exc}") from exc
    return out


def load_tensors(manifest: Manifest, input_shape, class_labels=None, mean=vision.DEFAULT_MEAN,
                 std=vision.DEFAULT_STD):
    """``(x, y)`` ready for the network; images must already match ``input_shape``."""
    c, h, w = input_shape
    images = load_images(manifest)
    for (path, _), img in zip(manifest.entries, images):
        if img.shape != (h, w, c):
            raise ConfigurationError(f"{path}: image is {img.shape[1]}x{img.shape[0]}x{img.shape[2]}, "
                                     f"model expects {w}x{h}x{c}")
    x = vision.images_to_batch(images, mean, std) if images else np.zeros((0, c, h, w), np.float32)
    return x, manifest.label_indices(class_labels)
