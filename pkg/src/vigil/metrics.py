"""Classification metrics, confusion matrices and inference latency."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from .errors import ConfigurationError, RangeError

REFERENCE_LATENCY_MS = 80.0


def confusion(true_labels, predicted_labels, num_classes) -> np.ndarray:
    """K x K counts, rows = true class, columns = predicted class."""
    t = np.asarray(true_labels, np.int64).ravel()
    p = np.asarray(predicted_labels, np.int64).ravel()
    if t.shape != p.shape:
        raise ConfigurationError(f"{len(t)} true labels but {len(p)} predictions")
    if num_classes < 1:
        raise ConfigurationError("need at least one class")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise RangeError(f"{name} label out of range [0, {num_classes})")
    return np.bincount(t * num_classes + p, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    undefined: bool = False  # some ratio was 0/0 and reported as 0


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple
    accuracy: float

    def to_csv(self, labels=None) -> str:
        labels = labels or [str(i) for i in range(len(self.classes))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for name, m in zip(labels, self.classes):
            w.writerow([name, f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}", m.support])
        w.writerow(["__accuracy__", f"{self.accuracy:.4f}", "", "", ""])
        return buf.getvalue()


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def per_class_metrics(cm) -> MetricsReport:
    cm = np.asarray(cm, np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ConfigurationError(f"confusion matrix must be square, got {cm.shape}")
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    rows = []
    for k in range(len(cm)):
        precision, u1 = _ratio(int(tp[k]), int(predicted[k]))
        recall, u2 = _ratio(int(tp[k]), int(actual[k]))
        f1, u3 = _ratio(2 * precision * recall, precision + recall)
        rows.append(ClassMetrics(precision, recall, f1, int(actual[k]), u1 or u2 or u3))
    total = int(cm.sum())
    accuracy = int(tp.sum()) / total if total else 0.0
    return MetricsReport(tuple(rows), accuracy)


def micro_recall(cm) -> float:
    cm = np.asarray(cm, np.int64)
    tp = int(np.trace(cm))
    fn = int(cm.sum() - tp)
    return _ratio(tp, tp + fn)[0]


# -- latency ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyReport:
    count: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    min_ms: float
    max_ms: float
    threads: int = 1

    @classmethod
    def from_samples(cls, samples_ms, threads=1):
        s = np.sort(np.asarray(samples_ms, np.float64))
        if not s.size:
            raise ConfigurationError("latency report needs at least one sample")
        # order statistics taken from the sample itself keep min <= p50 <= p95 <= max
        def q(f):
            return float(s[min(len(s) - 1, int(np.ceil(f * len(s))) - 1)]) if len(s) > 1 else float(s[0])
        return cls(len(s), float(s.mean()), q(0.5), q(0.95), float(s[0]), float(s[-1]), threads)

    def to_csv(self) -> str:
        head = "count,mean_ms,p50_ms,p95_ms,min_ms,max_ms,threads\n"
        return head + (f"{self.count},{self.mean_ms:.4f},{self.p50_ms:.4f},{self.p95_ms:.4f},"
                       f"{self.min_ms:.4f},{self.max_ms:.4f},{self.threads}\n")

    def to_text(self, reference_ms=REFERENCE_LATENCY_MS) -> str:
        return (f"forward latency over {self.count} runs ({self.threads} thread(s)): "
                f"mean {self.mean_ms:.3f} ms, p50 {self.p50_ms:.3f}, p95 {self.p95_ms:.3f}, "
                f"min {self.min_ms:.3f}, max {self.max_ms:.3f}\n"
                f"reference detection time: {reference_ms:.0f} ms; measured mean {self.mean_ms:.3f} ms")


def bench_inference(spec, weights, input_shape=None, iterations=50, warmup=5, threads=1, seed=0):
    """Time single-frame forwards with a monotonic clock.

    BLAS threads are pinned to ``threads`` for the duration so single-threaded
    numbers stay comparable across machines.
    """
    from threadpoolctl import threadpool_limits

    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise ConfigurationError(f"warmup must be >= 0, got {warmup}")
    if input_shape is not None and tuple(input_shape) != tuple(spec.input_shape):
        spec = M.with_input_size(spec, input_shape[-2], input_shape[-1])
    x = np.random.default_rng(seed).standard_normal((1, *spec.input_shape)).astype(np.float32)
    samples = []
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            M.forward(spec, weights, x)
        for _ in range(iterations):
            t0 = time.perf_counter_ns()
            M.forward(spec, weights, x)
            samples.append((time.perf_counter_ns() - t0) / 1e6)
    return LatencyReport.from_samples(samples, threads)
