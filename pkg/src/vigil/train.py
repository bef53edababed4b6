"""Losses, SGD, learning-rate schedules, regularization, splits and the fit loop."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import configtext, model as M, tensor as T
from .errors import ConfigurationError, NumericError, RangeError

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
SCHEDULES = ("constant", "step", "exponential", "piecewise")


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``schedule`` selects how :func:`lr_at` evolves the rate:

    * ``constant``: ``base_lr`` throughout.
    * ``step``: multiply by ``decay`` every ``decay_period`` epochs.
    * ``exponential``: multiply by ``decay`` after every optimizer step.
    * ``piecewise``: ``boundaries`` maps a starting epoch to its rate.
    """

    epochs: int
    base_lr: float
    batch_size: int = 64
    schedule: str = "constant"
    decay: float = 0.95
    decay_period: int = 1
    boundaries: tuple[tuple[int, float], ...] = ()
    l1_lambda: float = 0.0
    l2_lambda: float = 0.0
    seed: int = 0
    loss: str = "ce"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.base_lr < 0 or not math.isfinite(self.base_lr):
            raise ConfigurationError(f"base_lr must be finite and >= 0, got {self.base_lr}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 < self.decay <= 1:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")
        if self.decay_period < 1:
            raise ConfigurationError(f"decay_period must be >= 1, got {self.decay_period}")
        if self.schedule == "piecewise":
            if not self.boundaries:
                raise ConfigurationError("piecewise schedule needs boundaries")
            starts = [b for b, _ in self.boundaries]
            if any(b2 <= b1 for b1, b2 in zip(starts, starts[1:])):
                raise ConfigurationError(f"piecewise boundaries must be strictly increasing, got {starts}")
            if any(r <= 0 for _, r in self.boundaries):
                raise ConfigurationError("piecewise rates must be positive")
        if self.l1_lambda < 0 or self.l2_lambda < 0:
            raise ConfigurationError("regularization strengths must be >= 0")
        if self.loss not in ("ce", "bce"):
            raise ConfigurationError(f"loss must be 'ce' or 'bce', got {self.loss!r}")


_TRAIN_KEYS = {"epochs", "base_lr", "batch_size", "schedule", "decay", "decay_period", "boundaries",
               "l1_lambda", "l2_lambda", "loss", "split_fraction"}


def config_from_text(cfg: dict, seed: int, strict=True) -> tuple[TrainConfig, float]:
    """Build a :class:`TrainConfig` (and the split fraction) from parsed config text.

    ``epochs`` and ``base_lr`` are required; there is no silent default for either.
    """
    if strict:
        configtext.check_known(cfg, _TRAIN_KEYS, "train config")
    boundaries = ()
    if "boundaries" in cfg:
        try:
            pairs = [item.split(":") for item in cfg["boundaries"].split(",") if item.strip()]
            boundaries = tuple((int(a), float(b)) for a, b in pairs)
        except ValueError:
            raise ConfigurationError(f"boundaries: expected 'epoch:rate,...', got {cfg['boundaries']!r}") from None
    config = TrainConfig(
        epochs=configtext.get_int(cfg, "epochs"),
        base_lr=configtext.get_float(cfg, "base_lr"),
        batch_size=configtext.get_int(cfg, "batch_size", 64),
        schedule=cfg.get("schedule", "constant"),
        decay=configtext.get_float(cfg, "decay", 0.95),
        decay_period=configtext.get_int(cfg, "decay_period", 1),
        boundaries=boundaries,
        l1_lambda=configtext.get_float(cfg, "l1_lambda", 0.0),
        l2_lambda=configtext.get_float(cfg, "l2_lambda", 0.0),
        seed=seed,
        loss=cfg.get("loss", "ce"),
    )
    fraction = configtext.get_float(cfg, "split_fraction", 0.8)
    if not 0 < fraction < 1:
        raise ConfigurationError(f"split_fraction must be in (0, 1), got {fraction}")
    return config, fraction


# -- losses and regularization --------------------------------------------------------

def bce_loss(p, y):
    """Binary cross-entropy on a probability; returns ``(loss, dloss/dlogit)``.

    The gradient assumes ``p = sigmoid(logit)`` and is ``p - y``.
    """
    p = np.asarray(p, np.float64)
    y = np.asarray(y, np.float64)
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    grad = p - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def ce_loss(probs, y):
    """Multi-class cross-entropy ``-ln probs[y]``; returns ``(loss, dloss/dlogits)``.

    ``probs`` is ``(K,)`` or ``(N, K)`` softmax output; the fused gradient is
    ``probs - onehot(y)``.
    """
    probs = np.asarray(probs, np.float64)
    single = probs.ndim == 1
    p2 = np.atleast_2d(probs)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.arange(len(y))
    loss = -np.log(np.maximum(p2[rows, y], PROB_CLAMP))
    grad = p2.copy()
    grad[rows, y] -= 1
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def reg_penalty(tensors, l1_lambda, l2_lambda):
    """``l1 * sum|w| + 0.5 * l2 * sum w^2`` and per-tensor gradients.

    ``tensors`` is a dict or a sequence of arrays; gradients come back in the
    same structure. ``sign(0)`` is 0.
    """
    items = tensors.items() if isinstance(tensors, dict) else enumerate(tensors)
    total = 0.0
    grads = {}
    for key, w in items:
        w64 = np.asarray(w, np.float64)
        total += l1_lambda * np.abs(w64).sum() + 0.5 * l2_lambda * (w64 * w64).sum()
        g = l1_lambda * np.sign(w64) + l2_lambda * w64
        grads[key] = g.astype(np.asarray(w).dtype if np.asarray(w).dtype.kind == "f" else np.float64)
    if not isinstance(tensors, dict):
        grads = [grads[i] for i in range(len(grads))]
    return float(total), grads


# -- schedules and optimizer -------------------------------------------------------

def lr_at(config: TrainConfig, global_step: int, epoch: int) -> float:
    """Learning rate for optimizer step ``global_step`` inside ``epoch`` (both 0-based)."""
    base = float(config.base_lr)
    if config.schedule == "constant":
        return base
    if config.schedule == "exponential":
        return base * float(config.decay) ** int(global_step)
    if config.schedule == "step":
        return base * float(config.decay) ** (int(epoch) // config.decay_period)
    rate = base
    for start, r in config.boundaries:
        if epoch >= start:
            rate = float(r)
    return rate


def sgd_step(weights: dict, grads: dict, lr: float) -> dict:
    """Plain SGD: ``w - lr * g`` for every tensor; returns new arrays."""
    step = np.float32(lr)
    return {name: (w - step * grads[name]).astype(w.dtype, copy=False) if name in grads else w.copy()
            for name, w in weights.items()}


# -- splits ------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    val_indices: np.ndarray
    fraction: float
    seed: int


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(n: int, fraction: float = 0.8, seed: int = 0) -> SplitPlan:
    """Shuffle ``range(n)`` by ``seed`` and send the first ``round(fraction * n)`` to training."""
    if n < 0 or not 0 <= fraction <= 1:
        raise ConfigurationError(f"bad split: n={n}, fraction={fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = _round_half_up(fraction * n)
    return SplitPlan(np.sort(perm[:cut]), np.sort(perm[cut:]), fraction, seed)


def kfold_split(n: int, k: int, seed: int = 0) -> list[SplitPlan]:
    """``k`` folds whose validation sets partition ``range(n)``; sizes differ by at most one."""
    if not 1 <= k <= n:
        raise ConfigurationError(f"k-fold needs 1 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    plans = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i]) if k > 1 else np.empty(0, int)
        plans.append(SplitPlan(np.sort(train), np.sort(val), 1 - len(val) / n, seed))
    return plans


# -- training loop -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    HEADER = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc", "wall_ms")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for r in self.records:
            writer.writerow([r.epoch] + [f"{v:.6g}" for v in
                                         (r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_ms)])
        return buf.getvalue()


def _batch_loss(spec, config, logits, labels):
    """Mean data loss, per-sample correctness and ``dL/dlogits``."""
    logits = np.asarray(logits, np.float64)
    n = len(labels)
    if config.loss == "bce":
        if spec.head != "sigmoid":
            raise ConfigurationError("bce loss needs a sigmoid head")
        p = T.sigmoid(logits[:, 0])
        loss, g = bce_loss(p, labels)
        dlogits = (g / n)[:, None]
        pred = (p > 0.5).astype(np.int64)
    else:
        if spec.head != "softmax":
            raise ConfigurationError("ce loss needs a softmax head")
        probs = T.softmax(logits)
        loss, g = ce_loss(probs, labels)
        dlogits = g / n
        pred = np.argmax(probs, axis=1)
    return float(loss.mean()), pred == labels, dlogits.astype(np.float32)


def evaluate(spec, weights, x, y, config=None, batch_size=256):
    """Inference-mode mean loss, accuracy and predicted indices."""
    config = config or TrainConfig(epochs=0, base_lr=0.0, loss="bce" if spec.head == "sigmoid" else "ce")
    total_loss, preds = 0.0, []
    for start in range(0, len(y), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        logits = M.forward(spec, weights, xb)
        loss, _, _ = _batch_loss(spec, config, logits, yb)
        total_loss += loss * len(yb)
        preds.append(M.decide(spec, logits)[0])
    if not len(y):
        return 0.0, 0.0, np.empty(0, np.int64)
    pred = np.concatenate(preds)
    return total_loss / len(y), float(np.mean(pred == y)), pred


def _check_dataset(spec, x, y, what):
    x = np.asarray(x)
    y = np.asarray(y, np.int64)
    if len(x) != len(y):
        raise ConfigurationError(f"{what}: {len(x)} inputs but {len(y)} labels")
    if len(y) and (y.min() < 0 or y.max() >= spec.num_classes):
        raise RangeError(f"{what}: labels must lie in [0, {spec.num_classes})")
    return x, y


def fit(spec, weights, train, config: TrainConfig, val=None, on_epoch=None):
    """Mini-batch SGD training.

    ``train`` and ``val`` are ``(x, y)`` pairs of ``float32`` image tensors and
    integer labels. Each epoch reshuffles with a generator seeded once from
    ``config.seed``; the last short batch is kept and averaged over its own
    size. Returns new ``(weights, TrainLog)``; the input weights are untouched.
    """
    x, y = _check_dataset(spec, *train, "train")
    if len(y) == 0:
        raise ConfigurationError("empty training set")
    if val is not None:
        vx, vy = _check_dataset(spec, *val, "val")
    reg_names = M.regularized_names(spec)
    weights = weights.copy()
    rng = np.random.default_rng(config.seed)
    trainlog = TrainLog()
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(y))
        loss_sum = correct = 0.0
        epoch_lr = lr_at(config, step, epoch)
        for b, start in enumerate(range(0, len(y), config.batch_size)):
            idx = order[start:start + config.batch_size]
            tape = M.forward_train(spec, weights, x[idx])
            data_loss, hits, dlogits = _batch_loss(spec, config, tape.logits, y[idx])
            penalty, reg_grads = 0.0, {}
            if config.l1_lambda or config.l2_lambda:
                penalty, reg_grads = reg_penalty({n: weights.params[n] for n in reg_names},
                                                 config.l1_lambda, config.l2_lambda)
            total = data_loss + penalty
            if not math.isfinite(total):
                raise NumericError(f"non-finite loss {total} at epoch {epoch}, batch {b} "
                                   f"(step={step}, data loss={data_loss}, penalty={penalty})")
            grads = M.backward(spec, weights, tape, dlogits)
            for name, g in reg_grads.items():
                grads[name] = grads[name] + g
            lr = lr_at(config, step, epoch)
            weights.params = sgd_step(weights.params, grads, lr)
            weights.buffers = {**weights.buffers, **tape.buffers}
            loss_sum += total * len(idx)
            correct += float(hits.sum())
            step += 1
        val_loss = val_acc = float("nan")
        if val is not None and len(vy):
            val_loss, val_acc, _ = evaluate(spec, weights, vx, vy, config)
        rec = EpochRecord(epoch, epoch_lr, loss_sum / len(y), correct / len(y), val_loss, val_acc,
                          (time.perf_counter() - t0) * 1000.0)
        trainlog.records.append(rec)
        log.info("epoch %d lr=%.4g loss=%.4f acc=%.4f val_acc=%.4f", epoch, epoch_lr, rec.train_loss,
                 rec.train_acc, val_acc)
        if on_epoch is not None:
            on_epoch(rec)
    return weights, trainlog


# -- hyperparameter search -------------------------------------------------------------

@dataclass
class GridResult:
    best_config: TrainConfig
    best_index: int
    cells: list[tuple[dict, float]]


def grid_search(spec, dataset, grid: dict, template: TrainConfig, fraction: float = 0.8) -> GridResult:
    """Train one model per grid cell on a seeded split and score it on the held-out part.

    Cells are enumerated in declaration order (last key varies fastest); ties
    on validation accuracy go to the earliest cell.
    """
    names = list(grid)
    valid = {f.name for f in fields(TrainConfig)}
    bad = [n for n in names if n not in valid]
    if bad:
        raise ConfigurationError(f"grid keys are not TrainConfig fields: {bad}")
    x, y = _check_dataset(spec, *dataset, "dataset")
    split = split_dataset(len(y), fraction, template.seed)
    train = (x[split.train_indices], y[split.train_indices])
    val = (x[split.val_indices], y[split.val_indices])
    cells = []
    best_index, best_acc = -1, -1.0
    for i, values in enumerate(itertools.product(*(grid[n] for n in names))):
        overrides = dict(zip(names, values))
        config = replace(template, **overrides)
        weights, _ = fit(spec, M.build_model(spec, template.seed), train, config)
        _, acc, _ = evaluate(spec, weights, *val, config)
        cells.append((overrides, acc))
        if acc > best_acc:
            best_index, best_acc = i, acc
    if best_index < 0:
        raise ConfigurationError("empty grid")
    return GridResult(replace(template, **cells[best_index][0]), best_index, cells)
