import subprocess
import sys

import numpy as np
import pytest

from lesionkit import ingest
from lesionkit.cli import main
from lesionkit.ensemble import load_ensemble, load_final
from lesionkit.ingest import PredictionTensor, SampleManifest
from lesionkit.splits import load_folds
import oracles


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    S, C, R = 30, 3, 4
    labels = np.concatenate([np.arange(C), rng.integers(0, C, S - C)])
    recs = [(f"s{i:02d}", f"g{i // 2}", int(c)) for i, c in enumerate(labels)]
    recs += [("x0", "gx", 0, "histopathology", "secondary"), ("x1", "gx", 2, "confocal", "secondary")]
    manifest = SampleManifest.from_records(recs, C)
    ingest.save_manifest(manifest, tmp_path / "manifest.csv")
    # only primary samples carry features and predictions
    primary = SampleManifest.from_records(recs[:S], C)
    ingest.save_manifest(primary, tmp_path / "primary.csv")
    X = np.eye(C)[labels] * 2 + rng.normal(scale=0.5, size=(S, C))
    ingest.save_features(primary.sample_ids, X, tmp_path / "features.csv")
    ids = tuple(primary.sample_ids)

    def tensor(prefix, n):
        logits = 1.5 * np.eye(C)[labels][None, :, None, :] + rng.normal(size=(n, S, R, C))
        p = np.exp(logits)
        return PredictionTensor(tuple(f"{prefix}{m}" for m in range(n)), ids, p / p.sum(axis=-1, keepdims=True))

    ingest.save_predictions(tensor("full", 1), tmp_path / "full.csv")
    ingest.save_predictions(tensor("cv", 5), tmp_path / "cv.csv")
    return tmp_path


def run(*args):
    return main([str(a) for a in args])


def test_split(workspace):
    assert run("split", "--manifest", workspace / "manifest.csv", "--k", 5, "--seed", 7,
               "--out", workspace / "folds.csv") == 0
    folds = load_folds(workspace / "folds.csv")
    manifest = ingest.load_manifest(workspace / "manifest.csv")
    assert oracles.check_split_invariants(manifest, folds, 5) == []


def test_weights_from_counts(tmp_path):
    ingest.save_counts(ingest.ClassCounts(oracles.HAM_COUNTS), tmp_path / "counts.csv")
    assert run("weights", "--counts", tmp_path / "counts.csv", "--mode", "invfreq", "--out", tmp_path / "w.csv") == 0
    rows = [line.split(",") for line in (tmp_path / "w.csv").read_text().splitlines()[1:]]
    assert float(rows[1][1]) == pytest.approx(1.49366, abs=1e-5)
    assert float(rows[5][1]) == pytest.approx(87.08696, abs=1e-5)


def test_weights_from_manifest_ignores_secondary(workspace):
    out = workspace / "w.csv"
    assert run("weights", "--manifest", workspace / "manifest.csv", "--mode", "invfreq-c",
               "--out", out, "--counts-out", workspace / "c.csv") == 0
    counts = ingest.load_counts(workspace / "c.csv")
    assert counts.total == 30


def test_crops(tmp_path):
    assert run("crops", "--n", 36, "--out", tmp_path / "o.csv") == 0
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "crop_index,row,col" and len(lines) == 37
    assert lines[7] == "6,45,0"


def test_train_evaluate_report(workspace):
    w = workspace
    assert run("split", "--manifest", w / "primary.csv", "--k", 3, "--out", w / "folds.csv") == 0
    assert run("train", "--manifest", w / "primary.csv", "--features", w / "features.csv", "--folds",
               w / "folds.csv", "--fold", 0, "--epochs", 20, "--eval-every", 5, "--batch-size", 8,
               "--out-dir", w) == 0
    for name in ("model_best.csv", "model_last.csv", "history.csv"):
        assert (w / name).exists()
    assert run("evaluate", "--manifest", w / "primary.csv", "--model", w / "model_best.csv",
               "--features", w / "features.csv", "--out", w / "pred.csv", "--report", w / "r.csv") == 0
    t = ingest.load_predictions(w / "pred.csv", ingest.load_manifest(w / "primary.csv"))
    assert t.shape == (1, 30, 1, 3)


def test_train_balanced_batches(workspace):
    w = workspace
    assert run("train", "--manifest", w / "primary.csv", "--features", w / "features.csv",
               "--balance", "batch", "--epochs", 3, "--batch-size", 6, "--out-dir", w) == 0


def test_meta_train_and_predict(workspace, capsys):
    w = workspace
    assert run("meta-train", "--manifest", w / "primary.csv", "--predictions", w / "cv.csv",
               "--cv", 3, "--out", w / "meta.csv") == 0
    assert "CV mean WACC" in capsys.readouterr().out
    assert run("meta-predict", "--manifest", w / "primary.csv", "--meta", w / "meta.csv",
               "--predictions", w / "cv.csv", "--out", w / "mp.csv") == 0
    t = ingest.load_predictions(w / "mp.csv", ingest.load_manifest(w / "primary.csv"))
    assert t.shape == (5, 30, 1, 3)
    assert set(np.unique(t.values)) <= {0.0, 1.0}


def test_meta_train_non_convergence_exit_3(workspace, capsys):
    w = workspace
    code = run("meta-train", "--manifest", w / "primary.csv", "--predictions", w / "cv.csv",
               "--max-passes", 1, "--tol", 1e-9, "--out", w / "meta.csv")
    assert code == 3
    assert "NoConvergence" in capsys.readouterr().err
    assert (w / "meta.csv").exists()


def test_ensemble_search_and_final(workspace):
    w = workspace
    assert run("ensemble-search", "--manifest", w / "primary.csv", "--predictions", w / "cv.csv",
               "--top-k", 4, "--out", w / "ens.csv") == 0
    spec = load_ensemble(w / "ens.csv")
    assert 1 <= len(spec.members) <= 4
    out = w / "final"
    out.mkdir()
    assert run("final", "--manifest", w / "primary.csv", "--full", w / "full.csv", "--cv", w / "cv.csv",
               "--ensemble", w / "ens.csv", "--out-dir", out) == 0
    ids, probs = load_final(out / "final_predictions.csv")
    assert len(ids) == 30
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (out / "report.csv").exists()
    assert run("report", "--manifest", w / "primary.csv", "--final", out / "final_predictions.csv",
               "--out", w / "report2.csv") == 0
    assert (w / "report2.csv").read_text() == (out / "report.csv").read_text()


def test_report_per_fold_rows(workspace):
    w = workspace
    run("split", "--manifest", w / "primary.csv", "--k", 3, "--out", w / "folds.csv")
    run("final", "--manifest", w / "primary.csv", "--cv", w / "cv.csv", "--out-dir", w, "--no-report")
    assert not (w / "report.csv").exists()
    assert run("report", "--manifest", w / "primary.csv", "--final", w / "final_predictions.csv",
               "--folds", w / "folds.csv", "--out", w / "r.csv") == 0
    text = (w / "r.csv").read_text()
    assert "accuracy_fold_2," in text and "accuracy_fold_mean," in text


def test_final_is_byte_identical(workspace):
    w = workspace
    outs = []
    for name in ("a", "b"):
        (w / name).mkdir()
        run("final", "--manifest", w / "primary.csv", "--full", w / "full.csv", "--cv", w / "cv.csv",
            "--out-dir", w / name)
        outs.append((w / name / "final_predictions.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_file(workspace):
    cfg = workspace / "run.cfg"
    cfg.write_text(f"# defaults\nmanifest = {workspace / 'manifest.csv'}\nk = 4\n")
    assert run("--config", cfg, "split", "--out", workspace / "folds.csv") == 0
    assert load_folds(workspace / "folds.csv").k == 4


def test_validation_exit_2(workspace, capsys):
    bad = workspace / "bad.csv"
    bad.write_text("sample_id,group_id,label\na,g,0\na,h,1\n")
    assert run("split", "--manifest", bad) == 2
    assert "DuplicateSampleId" in capsys.readouterr().err
    assert run("crops", "--n", 10) == 2


def test_io_exit_4(tmp_path, capsys):
    assert run("split", "--manifest", tmp_path / "missing.csv") == 4
    assert "InputOutputError" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lesionkit", "crops", "--n", "4", "--out", str(tmp_path / "o.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and (tmp_path / "o.csv").exists()
