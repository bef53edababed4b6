import numpy as np
import pytest

from vigil import metrics
from vigil import model as M
from vigil.errors import ConfigurationError, RangeError


def test_confusion_examples():
    assert np.array_equal(metrics.confusion([0, 1, 2], [0, 1, 2], 3), np.eye(3, dtype=int))
    cm = metrics.confusion([1], [2], 3)
    assert cm[1, 2] == 1 and cm.sum() == 1
    assert not metrics.confusion([], [], 4).any()
    with pytest.raises(RangeError):
        metrics.confusion([0, 3], [0, 1], 3)
    with pytest.raises(ConfigurationError):
        metrics.confusion([0, 1], [0], 3)


def safe_driving_fixture():
    # class 0: TP 48, FN 1 (predicted as class 1), FP 2 (class 1 predicted as class 0)
    return np.array([[48, 1], [2, 49]])


def test_safe_driving_row():
    m = metrics.per_class_metrics(safe_driving_fixture()).classes[0]
    assert round(m.precision, 2) == 0.96 and round(m.recall, 2) == 0.98
    assert m.precision == 48 / 50 and m.recall == 48 / 49


def test_f1_and_undefined():
    report = metrics.per_class_metrics(np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0]]))
    assert report.classes[0].f1 == pytest.approx(0.5)
    absent = report.classes[2]
    assert (absent.precision, absent.recall, absent.f1, absent.undefined) == (0.0, 0.0, 0.0, True)
    assert not report.classes[0].undefined


@pytest.mark.parametrize("seed", range(50))
def test_identities_on_random_matrices(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 11))
    cm = rng.integers(0, 30, (k, k)) * (rng.random((k, k)) < 0.7)
    report = metrics.per_class_metrics(cm)
    total = cm.sum()
    assert report.accuracy == (np.trace(cm) / total if total else 0.0)
    assert metrics.micro_recall(cm) == report.accuracy
    for m in report.classes:
        assert all(0 <= v <= 1 for v in (m.precision, m.recall, m.f1))


def test_csv_schema():
    text = metrics.per_class_metrics(safe_driving_fixture()).to_csv(["safe_driving", "texting"])
    lines = text.splitlines()
    assert lines[0] == "class,precision,recall,f1,support"
    assert lines[1] == "safe_driving,0.9600,0.9796,0.9697,49"
    assert lines[-1] == "__accuracy__,0.9700,,,"


def test_latency_report_ordering():
    single = metrics.LatencyReport.from_samples([3.0])
    assert single.mean_ms == single.p50_ms == single.min_ms == single.max_ms == single.p95_ms == 3.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = metrics.LatencyReport.from_samples(rng.exponential(5, int(rng.integers(1, 200))))
        assert r.min_ms <= r.p50_ms <= r.p95_ms <= r.max_ms
        assert r.min_ms <= r.mean_ms <= r.max_ms


def test_bench_inference_smoke():
    spec = M.tiny_spec(("a", "b", "c", "d", "e"))
    weights = M.build_model(spec, 0)
    r = metrics.bench_inference(spec, weights, None, iterations=1, warmup=0)
    assert r.count == 1 and r.mean_ms == r.max_ms and r.threads == 1
    assert "80 ms" in r.to_text()
    with pytest.raises(ConfigurationError):
        metrics.bench_inference(spec, weights, None, iterations=0)
