"""``vigil`` command line: gen-synth, train, eval, detect, augment, bench.

Exit codes: 0 success, 1 usage or validation error, 2 I/O or file-format
error, 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import ExitStack
from dataclasses import replace

import numpy as np

from . import configtext, dataset, fatigue, metrics, synth, train, vision, weightfile
from . import model as M
from .errors import AlignmentError, FormatError, NumericError, ParseError, VigilError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("vigil")


class UsageError(VigilError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} needs an explicit --seed")
    return args.seed


def _read_config(args, required=False):
    if args.config is None:
        if required:
            raise UsageError(f"{args.command} needs --config")
        return {}
    return configtext.read_file(args.config)


def _labels_for(num_classes):
    if num_classes <= len(synth.DEFAULT_CLASSES):
        return list(synth.DEFAULT_CLASSES[:num_classes])
    if num_classes <= len(synth.SFDDD_CLASSES):
        return list(synth.SFDDD_CLASSES[:num_classes])
    return [f"class_{i}" for i in range(num_classes)]


# -- gen-synth ---------------------------------------------------------------------------

def cmd_gen_synth(args, out=sys.stdout):
    seed = _require_seed(args)
    if args.classes < 1 or args.per_class < 1 or args.size < 8:
        raise UsageError("need classes >= 1, per-class >= 1 and size >= 8")
    labels = args.labels.split(",") if args.labels else _labels_for(args.classes)
    if len(labels) != args.classes:
        raise UsageError(f"{len(labels)} labels given for {args.classes} classes")
    entries = []
    for cls, i, img in synth.generate_images(args.classes, args.per_class, args.size, seed):
        rel = f"{labels[cls]}/{i:04d}.ppm"
        os.makedirs(os.path.join(args.out_dir, labels[cls]), exist_ok=True)
        vision.write_image(os.path.join(args.out_dir, rel), img)
        entries.append((rel, labels[cls]))
    path = os.path.join(args.out_dir, "manifest.csv")
    dataset.write_manifest(path, entries)
    print(f"wrote {len(entries)} images and {path}", file=out)
    return EXIT_OK


# -- train / eval ----------------------------------------------------------------------

def _model_spec(args, manifest):
    if args.model_config:
        spec = M.spec_from_config(configtext.read_file(args.model_config))
        return spec
    first = vision.read_image(manifest.path(0))
    h, w, c = first.shape
    spec = M.tiny_spec(manifest.class_labels, (h, w))
    return replace(spec, input_shape=(c, h, w))


def cmd_train(args, out=sys.stdout):
    seed = _require_seed(args)
    cfg = _read_config(args, required=True)
    config, fraction = train.config_from_text(cfg, seed)
    manifest = dataset.read_manifest(args.manifest)
    if not len(manifest):
        raise UsageError("manifest has no entries")
    spec = _model_spec(args, manifest)
    x, y = dataset.load_tensors(manifest, spec.input_shape, spec.class_labels)
    split = train.split_dataset(len(y), fraction, seed)
    tr = (x[split.train_indices], y[split.train_indices])
    va = (x[split.val_indices], y[split.val_indices])

    def report(rec):
        print(f"epoch {rec.epoch:3d}  lr {rec.lr:.4g}  loss {rec.train_loss:.4f}  "
              f"acc {rec.train_acc:.4f}  val_acc {rec.val_acc:.4f}  {rec.wall_ms:.0f} ms", file=out)

    weights, trainlog = train.fit(spec, M.build_model(spec, seed), tr, config, va, on_epoch=report)
    weightfile.save_weights(spec, weights, args.out, extra=[("split_fraction", repr(fraction))])
    log_path = args.log or os.path.splitext(args.out)[0] + ".log.csv"
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trainlog.to_csv())
    print(f"wrote {args.out} (crc {weightfile.file_crc(args.out):08x}) and {log_path}", file=out)
    return EXIT_OK


def cmd_eval(args, out=sys.stdout):
    spec, weights, prov = weightfile.load_weights_with_provenance(args.weights)
    manifest = dataset.read_manifest(args.manifest, spec.class_labels)
    x, y = dataset.load_tensors(manifest, spec.input_shape, spec.class_labels)
    if not args.all:
        fraction = float(prov.get("split_fraction", 0.8))
        idx = train.split_dataset(len(y), fraction, weights.seed).val_indices
        x, y = x[idx], y[idx]
    _, _, pred = train.evaluate(spec, weights, x, y)
    report = metrics.per_class_metrics(metrics.confusion(y, pred, spec.num_classes))
    text = report.to_csv(list(spec.class_labels))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    out.write(text)
    return EXIT_OK


# -- detect ------------------------------------------------------------------------------

def _frame_files(frames_dir):
    names = sorted(n for n in os.listdir(frames_dir) if n.lower().endswith((".ppm", ".pgm")))
    return [os.path.join(frames_dir, n) for n in names]


def _count_landmark_frames(path):
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.split()[:1] == ["frame"])


def cmd_detect(args, out=sys.stdout):
    if not args.frames and not args.landmarks:
        raise UsageError("detect needs --frames and/or --landmarks")
    if args.weights and not args.frames:
        raise UsageError("--weights needs --frames to classify")
    if args.frames and not args.weights:
        raise UsageError("--frames needs --weights")
    fcfg = fatigue.config_from_text(_read_config(args))
    files = _frame_files(args.frames) if args.frames else None
    if files is not None and args.landmarks:
        n_marks = _count_landmark_frames(args.landmarks)
        if n_marks != len(files):
            raise AlignmentError(f"frame count mismatch: {len(files)} images in {args.frames}, "
                                 f"{n_marks} landmark frames in {args.landmarks}")
    if files is not None and not files:
        raise UsageError(f"no .ppm/.pgm frames in {args.frames}")
    spec = weights = None
    if args.weights:
        spec, weights = weightfile.load_weights(args.weights)
    state = fatigue.FatigueState()
    with ExitStack() as stack:
        marks = None
        if args.landmarks:
            marks = fatigue.iter_landmarks(stack.enter_context(open(args.landmarks, encoding="utf-8")))
        n = len(files) if files is not None else None
        i = 0
        while n is None or i < n:
            frame = next(marks, None) if marks is not None else None
            if marks is not None and frame is None:
                break
            if frame is not None:
                rec = {"frame": frame.frame_index, "ts_ms": frame.timestamp_ms}
            else:
                rec = {"frame": i, "ts_ms": int(round(i * 1000.0 / args.fps))}
            if files is not None:
                img = vision.read_image(files[i])
                c, h, w = spec.input_shape
                if img.shape[:2] != (h, w):
                    img = vision.resize(img, w, h)
                label, probs = M.predict(spec, weights, vision.image_to_tensor(img))
                rec["label"] = label
                rec["probs"] = [round(float(p), 6) for p in probs]
            if frame is not None:
                closed, mouth = fatigue.classify_frame(frame, fcfg)
                state.update(frame.timestamp_ms, closed, mouth, fcfg)
                rec.update(eye_closed=closed, mouth_open=mouth, perclos_pct=round(state.perclos_pct, 6),
                           drowsy=state.drowsy, yawns=state.yawn_event_count)
            out.write(json.dumps(rec) + "\n")
            i += 1
    return EXIT_OK


# -- augment -----------------------------------------------------------------------------

def cmd_augment(args, out=sys.stdout):
    seed = _require_seed(args)
    if args.multiplier < 0:
        raise UsageError("multiplier must be >= 0")
    policy = vision.policy_from_config(_read_config(args))
    manifest = dataset.read_manifest(args.manifest)
    entries = []
    for i, (rel, label) in enumerate(manifest.entries):
        src = manifest.path(i)
        with open(src, "rb") as fh:
            raw = fh.read()
        img = vision.decode_ppm(raw)
        os.makedirs(os.path.dirname(os.path.join(args.out_dir, rel)) or args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, rel), "wb") as fh:
            fh.write(raw)
        entries.append((rel, label))
        stem, ext = os.path.splitext(rel)
        for j in range(args.multiplier):
            aug = vision.augment_sample(img, policy, np.random.SeedSequence([seed, i, j]))
            data = raw if np.array_equal(aug, img) else vision.encode_ppm(aug)
            vrel = f"{stem}_aug{j}{ext}"
            with open(os.path.join(args.out_dir, vrel), "wb") as fh:
                fh.write(data)
            entries.append((vrel, label))
    path = os.path.join(args.out_dir, "manifest.csv")
    dataset.write_manifest(path, entries)
    print(f"wrote {len(entries)} entries to {path}", file=out)
    return EXIT_OK


# -- bench -------------------------------------------------------------------------------

def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--input-size expects HxW, got {text!r}") from None
    return h, w


def cmd_bench(args, out=sys.stdout):
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    spec, weights = weightfile.load_weights(args.weights)
    shape = spec.input_shape
    if args.input_size:
        shape = (shape[0], *_parse_size(args.input_size))
    threads = args.threads or 1
    report = metrics.bench_inference(spec, weights, shape, args.iterations, args.warmup, threads)
    print(report.to_text(), file=out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------

def _add_globals(p, default):
    p.add_argument("--seed", type=int, default=default, help="seed for every random choice")
    p.add_argument("--config", default=default, help="key = value config file for the command")
    p.add_argument("--threads", type=int, default=default, help="BLAS thread count")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser():
    parser = _Parser(prog="vigil", description=__doc__.splitlines()[0])
    _add_globals(parser, None)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, argparse.SUPPRESS)
        p.set_defaults(func=fn)
        return p

    p = verb("gen-synth", cmd_gen_synth, "render a synthetic labelled image set")
    p.add_argument("out_dir")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--labels", help="comma-separated class names")

    p = verb("train", cmd_train, "train a model on a manifest (--config: train config)")
    p.add_argument("manifest")
    p.add_argument("--model-config", help="model stack; default is the 0.25-width tiny stack")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--log", help="epoch log CSV (default: <out>.log.csv)")

    p = verb("eval", cmd_eval, "per-class precision/recall/F1 on the held-out split")
    p.add_argument("manifest")
    p.add_argument("weights")
    p.add_argument("--all", action="store_true", help="score every manifest entry")
    p.add_argument("--out", help="also write the CSV here")

    p = verb("detect", cmd_detect, "per-frame distraction and fatigue records as JSON lines")
    p.add_argument("--frames", help="directory of .ppm/.pgm frames, processed in name order")
    p.add_argument("--landmarks", help="68-point landmark file")
    p.add_argument("--weights")
    p.add_argument("--fps", type=float, default=30.0, help="frame rate used for ts_ms without landmarks")
    p.add_argument("--out", help="write records here instead of stdout")

    p = verb("augment", cmd_augment, "expand a manifest with augmented variants (--config: policy)")
    p.add_argument("manifest")
    p.add_argument("--multiplier", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = verb("bench", cmd_bench, "single-frame forward latency")
    p.add_argument("weights")
    p.add_argument("--input-size", help="HxW, default the model's own")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--csv", help="also write the report as CSV")
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with ExitStack() as stack:
            if args.threads is not None and args.command != "bench":
                from threadpoolctl import threadpool_limits
                stack.enter_context(threadpool_limits(limits=args.threads))
            if getattr(args, "out", None) and args.command == "detect":
                out = stack.enter_context(open(args.out, "w", encoding="utf-8"))
            return args.func(args, out)
    except NumericError as exc:
        print(f"vigil: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        if isinstance(exc, ParseError):
            print(f"vigil: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"vigil: {exc}", file=sys.stderr)
        return EXIT_IO
    except (VigilError, ValueError) as exc:
        print(f"vigil: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
