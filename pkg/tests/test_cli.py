import io
import json
import os

import numpy as np
import pytest

from vigil import cli, dataset, fatigue, synth, train, weightfile
from vigil.errors import ParseError

TRAIN_CFG = "epochs = 2\nbase_lr = 0.5\nbatch_size = 16\nschedule = exponential\n"


def run(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code, _ = run("--seed", 3, "gen-synth", root / "data", "--per-class", 10)
    assert code == 0
    cfg = root / "train.cfg"
    cfg.write_text(TRAIN_CFG)
    code, text = run("--seed", 3, "--config", cfg, "train", root / "data" / "manifest.csv", "--out", root / "w.vgl")
    assert code == 0, text
    return root


def read_tree(d):
    return {os.path.relpath(os.path.join(p, n), d): open(os.path.join(p, n), "rb").read()
            for p, _, names in os.walk(d) for n in names}


# -- gen-synth ------------------------------------------------------------------------------

def test_gen_synth_layout(corpus):
    m = dataset.read_manifest(corpus / "data" / "manifest.csv")
    assert len(m) == 50 and m.class_labels == synth.DEFAULT_CLASSES
    assert m.entries[0] == ("safe_driving/0000.ppm", "safe_driving")


def test_gen_synth_deterministic(tmp_path, corpus):
    assert run("gen-synth", tmp_path / "a", "--per-class", 10, "--seed", 3)[0] == 0
    assert read_tree(tmp_path / "a") == read_tree(corpus / "data")


def test_seed_is_mandatory(tmp_path):
    assert run("gen-synth", tmp_path / "x")[0] == cli.EXIT_USAGE
    assert not (tmp_path / "x").exists()


def test_unknown_verb_is_usage_error():
    assert run("frobnicate")[0] == cli.EXIT_USAGE


# -- train / eval ---------------------------------------------------------------------------

def test_train_writes_artifacts(corpus):
    log = (corpus / "w.log.csv").read_text().splitlines()
    assert log[0] == "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_ms" and len(log) == 3
    spec, weights, prov = weightfile.load_weights_with_provenance(corpus / "w.vgl")
    assert weights.seed == 3 and float(prov["split_fraction"]) == 0.8
    assert spec.class_labels == synth.DEFAULT_CLASSES


def test_train_is_reproducible(corpus, tmp_path):
    code, _ = run("--seed", 3, "--config", corpus / "train.cfg", "train", corpus / "data" / "manifest.csv",
                  "--out", tmp_path / "again.vgl")
    assert code == 0
    assert (tmp_path / "again.vgl").read_bytes() == (corpus / "w.vgl").read_bytes()


def test_train_failures(corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    manifest.write_text("path,label\nmissing.ppm,a\n")
    code, _ = run("--seed", 1, "--config", corpus / "train.cfg", "train", manifest, "--out", tmp_path / "w.vgl")
    assert code == cli.EXIT_IO
    model_cfg = tmp_path / "model.cfg"
    model_cfg.write_text(_two_class_model())
    code, _ = run("--seed", 1, "--config", corpus / "train.cfg", "train", corpus / "data" / "manifest.csv",
                  "--model-config", model_cfg, "--out", tmp_path / "w.vgl")
    assert code == cli.EXIT_USAGE
    assert run("--config", corpus / "train.cfg", "train", corpus / "data" / "manifest.csv",
               "--out", tmp_path / "w.vgl")[0] == cli.EXIT_USAGE


def _two_class_model():
    from vigil import model as M
    return M.render_spec(M.tiny_spec(("a", "b")))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_exit_code(corpus, tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text("epochs = 3\nbase_lr = 1e30\nbatch_size = 16\n")
    code, _ = run("--seed", 3, "--config", cfg, "train", corpus / "data" / "manifest.csv", "--out", tmp_path / "w.vgl")
    assert code == cli.EXIT_NUMERIC


def test_eval_csv(corpus):
    code, text = run("eval", corpus / "data" / "manifest.csv", corpus / "w.vgl")
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "class,precision,recall,f1,support"
    assert [ln.split(",")[0] for ln in lines[1:6]] == list(synth.DEFAULT_CLASSES)
    assert sum(int(ln.split(",")[4]) for ln in lines[1:6]) == 10  # 20 % of 50 held out
    code, text = run("eval", corpus / "data" / "manifest.csv", corpus / "w.vgl", "--all")
    assert sum(int(ln.split(",")[4]) for ln in text.splitlines()[1:6]) == 50


def accuracy(csv_text):
    return float(csv_text.strip().splitlines()[-1].split(",")[1])


def test_converged_toy_run_and_permuted_labels(tmp_path):
    assert run("--seed", 5, "gen-synth", tmp_path / "d", "--classes", 3, "--per-class", 20)[0] == 0
    cfg = tmp_path / "t.cfg"
    cfg.write_text("epochs = 30\nbase_lr = 2.0\nbatch_size = 16\nschedule = exponential\n")
    assert run("--seed", 5, "--config", cfg, "train", tmp_path / "d" / "manifest.csv",
               "--out", tmp_path / "w.vgl")[0] == 0
    # score exactly the training split of the run
    full = dataset.read_manifest(tmp_path / "d" / "manifest.csv")
    idx = train.split_dataset(len(full), 0.8, 5).train_indices
    dataset.write_manifest(tmp_path / "d" / "train_only.csv", [full.entries[i] for i in idx])
    code, text = run("eval", tmp_path / "d" / "train_only.csv", tmp_path / "w.vgl", "--all")
    assert code == 0 and accuracy(text) == 1.0
    # rotate the class order of the head: every prediction moves to another label
    spec, w = weightfile.load_weights(tmp_path / "w.vgl")
    fc = [n for n in w.params if n.endswith(".fc.weights")][0]
    w.params[fc] = np.roll(w.params[fc], 1, axis=0)
    bias = fc.replace("weights", "bias")
    w.params[bias] = np.roll(w.params[bias], 1)
    weightfile.save_weights(spec, w, tmp_path / "perm.vgl")
    code, text = run("eval", tmp_path / "d" / "manifest.csv", tmp_path / "perm.vgl", "--all")
    assert code == 0 and accuracy(text) <= 1 / 3


def test_corrupt_weight_file_is_io_error(corpus, tmp_path):
    data = bytearray((corpus / "w.vgl").read_bytes())
    data[0] = ord("X")
    (tmp_path / "bad.vgl").write_bytes(bytes(data))
    assert run("eval", corpus / "data" / "manifest.csv", tmp_path / "bad.vgl")[0] == cli.EXIT_IO


# -- detect -----------------------------------------------------------------------------------

def write_trace(path, frames):
    path.write_text(fatigue.format_landmarks(frames))


def test_detect_landmarks_only(tmp_path):
    write_trace(tmp_path / "lm.txt", synth.landmark_trace(50, 2, closed_prob=0.5, yawn_prob=0.05))
    code, text = run("detect", "--landmarks", tmp_path / "lm.txt")
    assert code == 0
    records = [json.loads(line) for line in text.splitlines()]
    assert len(records) == 50 and [r["frame"] for r in records] == list(range(50))
    assert all(set(r) == {"frame", "ts_ms", "eye_closed", "mouth_open", "perclos_pct", "drowsy", "yawns"}
               for r in records)


def test_detect_all_closed_becomes_drowsy(tmp_path):
    frames = [fatigue.LandmarkFrame(i, i * 100, synth.face_landmarks(eye_open=0.1)) for i in range(700)]
    write_trace(tmp_path / "lm.txt", frames)
    cfg = tmp_path / "f.cfg"
    cfg.write_text("window_ms = 60000\nperclos_threshold_pct = 20\n")
    code, text = run("--config", cfg, "detect", "--landmarks", tmp_path / "lm.txt")
    records = [json.loads(line) for line in text.splitlines()]
    oracle = fatigue.perclos_oracle([(f.timestamp_ms, True) for f in frames], 60000)
    assert code == 0 and [r["perclos_pct"] for r in records] == oracle
    assert records[-1]["drowsy"] and records[-1]["perclos_pct"] == 100.0
    assert not records[1]["drowsy"]  # still warming up


def test_detect_frames_and_landmarks(corpus, tmp_path):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    for i in range(3):
        (frames_dir / f"{i:03d}.ppm").write_bytes((corpus / "data" / "safe_driving" / f"{i:04d}.ppm").read_bytes())
    write_trace(tmp_path / "lm.txt", synth.landmark_trace(3, 0))
    code, text = run("detect", "--frames", frames_dir, "--landmarks", tmp_path / "lm.txt", "--weights",
                     corpus / "w.vgl")
    assert code == 0
    records = [json.loads(line) for line in text.splitlines()]
    assert len(records) == 3
    for r in records:
        assert r["label"] in synth.DEFAULT_CLASSES and len(r["probs"]) == 5 and "perclos_pct" in r
    code, text = run("detect", "--frames", frames_dir, "--weights", corpus / "w.vgl")
    assert code == 0 and all("perclos_pct" not in json.loads(line) for line in text.splitlines())


def test_detect_misaligned_and_empty(corpus, tmp_path):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    (frames_dir / "0.ppm").write_bytes((corpus / "data" / "safe_driving" / "0000.ppm").read_bytes())
    write_trace(tmp_path / "lm.txt", synth.landmark_trace(4, 0))
    err = io.StringIO()
    import contextlib
    with contextlib.redirect_stderr(err):
        code, _ = run("detect", "--frames", frames_dir, "--landmarks", tmp_path / "lm.txt", "--weights",
                      corpus / "w.vgl")
    assert code == cli.EXIT_USAGE and "1 images" in err.getvalue() and "4 landmark frames" in err.getvalue()
    assert run("detect")[0] == cli.EXIT_USAGE


# -- augment ------------------------------------------------------------------------------------

def test_augment_counts_and_determinism(corpus, tmp_path):
    policy = tmp_path / "p.cfg"
    policy.write_text("rot_deg = -10,10\nbrightness = -20,20\ncrop_frac = 0,0.1\n")
    args = ("--seed", 9, "--config", policy, "augment", corpus / "data" / "manifest.csv", "--multiplier", 2)
    assert run(*args, "--out-dir", tmp_path / "a")[0] == 0
    assert run(*args, "--out-dir", tmp_path / "b")[0] == 0
    m = dataset.read_manifest(tmp_path / "a" / "manifest.csv")
    assert len(m) == 150
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")
    src = dataset.read_manifest(corpus / "data" / "manifest.csv")
    assert dict(m.entries)["safe_driving/0000_aug1.ppm"] == "safe_driving"
    assert set(src.entries) <= set(m.entries)


def test_augment_empty_policy_copies_bytes(corpus, tmp_path):
    assert run("--seed", 1, "augment", corpus / "data" / "manifest.csv", "--out-dir", tmp_path / "c")[0] == 0
    tree = read_tree(tmp_path / "c")
    original = (corpus / "data" / "texting_left_hand" / "0004.ppm").read_bytes()
    assert tree[os.path.join("texting_left_hand", "0004_aug0.ppm")] == original
    assert tree[os.path.join("texting_left_hand", "0004.ppm")] == original


# -- bench --------------------------------------------------------------------------------------

def test_bench(corpus, tmp_path):
    code, text = run("bench", corpus / "w.vgl", "--iterations", 3, "--csv", tmp_path / "lat.csv")
    assert code == 0 and "reference detection time: 80 ms" in text and "measured mean" in text
    assert (tmp_path / "lat.csv").read_text().startswith("count,mean_ms,p50_ms,p95_ms,min_ms,max_ms,threads\n")
    assert run("bench", corpus / "w.vgl", "--iterations", 0)[0] == cli.EXIT_USAGE


# -- manifest ---------------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    entries = [("a/1.ppm", "x"), ("b/2.ppm", "y"), ("c,odd/3.ppm", "x")]
    dataset.write_manifest(tmp_path / "m.csv", entries)
    m = dataset.read_manifest(tmp_path / "m.csv")
    assert list(m.entries) == entries and m.class_labels == ("x", "y")
    (tmp_path / "bad.csv").write_text("path,label\nonly-one-field\n")
    with pytest.raises(ParseError, match="line 2"):
        dataset.read_manifest(tmp_path / "bad.csv")
