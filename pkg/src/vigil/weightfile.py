"""Binary weight file.

Layout (little-endian)::

    b"VGL1"                          magic
    u32                              format version (1)
    u32 + UTF-8                      canonical model config text
    u32                              tensor count
    per tensor: u16 + UTF-8 name, u8 rank, u32[rank] extents, f32 payload
    u32                              CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from . import configtext
from .errors import FormatError, IntegrityError
from .model import ModelSpec, ModelWeights, check_weights, param_shapes, render_spec, spec_from_config

MAGIC = b"VGL1"
VERSION = 1
_BUFFER_SUFFIXES = (".running_mean", ".running_var")


def encode(spec: ModelSpec, weights: ModelWeights, extra=()) -> bytes:
    check_weights(spec, weights)
    text = render_spec(spec, [("seed", str(weights.seed)), *extra]).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(text)) + text
    tensors = weights.tensors()
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes):
    """Return ``(spec, weights, provenance)`` where provenance holds the extra config keys."""
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a vigil weight file", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    (text_len,) = r.unpack("<I", "config length")
    text_at = r.pos
    raw_text = r.take(text_len, "config text")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B", "tensor rank")
        shape = r.unpack(f"<{rank}I", "tensor extents")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    body_end = r.pos
    (stored,) = r.unpack("<I", "checksum")
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after checksum", offset=r.pos)
    actual = zlib.crc32(r.data[:body_end])
    if stored != actual:
        raise IntegrityError(f"CRC-32 mismatch: stored {stored:08x}, computed {actual:08x}", offset=body_end)
    # decoded only after the checksum, so a flipped byte reports as corruption
    try:
        text = raw_text.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config text is not UTF-8", offset=text_at) from None

    cfg = configtext.parse(text)
    model_cfg = {k: v for k, v in cfg.items() if k in _SPEC_KEYS or k.startswith("layer.")}
    provenance = {k: v for k, v in cfg.items() if k not in model_cfg}
    spec = spec_from_config(model_cfg)
    params_shape, _ = param_shapes(spec)
    params = {k: v for k, v in tensors.items() if k in params_shape}
    buffers = {k: v for k, v in tensors.items() if k.endswith(_BUFFER_SUFFIXES)}
    if len(params) + len(buffers) != len(tensors):
        unknown = sorted(set(tensors) - set(params) - set(buffers))
        raise FormatError(f"tensors not described by the embedded spec: {unknown}")
    weights = ModelWeights(params, buffers, int(provenance.pop("seed", 0)))
    check_weights(spec, weights)
    return spec, weights, provenance


_SPEC_KEYS = {"input_channels", "input_height", "input_width", "width_multiplier", "head", "classes"}


def save_weights(spec, weights, path, extra=()):
    with open(path, "wb") as fh:
        fh.write(encode(spec, weights, extra))


def load_weights(path):
    """Return ``(spec, weights)``."""
    spec, weights, _ = load_weights_with_provenance(path)
    return spec, weights


def load_weights_with_provenance(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def file_crc(path):
    """The trailing CRC-32 stored in a weight file."""
    with open(path, "rb") as fh:
        data = fh.read()
    return struct.unpack("<I", data[-4:])[0]
