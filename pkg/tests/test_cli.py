import csv
from pathlib import Path

import numpy as np
import pytest

from rotbnn.cli import main, read_config
from rotbnn.nn.checkpoint import load_checkpoint, write_blob

REPO = Path(__file__).resolve().parents[1]
SMOKE = REPO / "configs" / "synthetic_smoke.cfg"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "a"
    code = main(["train", "--config", str(SMOKE), "--variant", "rbnn", "--seed", "1", "--out", str(out)])
    return code, out


class TestTrain:
    def test_artifacts(self, smoke_run):
        code, out = smoke_run
        assert code == 0
        for name in ("metrics.csv", "run.cfg", "cosine.svg", "flip_rate.svg", "quant_error.svg", "alpha.svg"):
            assert (out / name).is_file(), name
        assert (out / "checkpoint" / "manifest.txt").is_file()
        rows = list(csv.DictReader(open(out / "metrics.csv", encoding="utf-8")))
        assert len(rows) == 3 * 2

    def test_manifest_records_resolved_config(self, smoke_run):
        _, out = smoke_run
        train_kw, data_kw = read_config(out / "run.cfg")
        # command line beats the config file
        assert train_kw["seed"] == 1 and train_kw["epochs"] == 3
        assert data_kw["dataset"] == "synthetic" and data_kw["mean"] == "0.0"

    def test_manifest_replay_is_byte_identical(self, smoke_run, tmp_path):
        _, out = smoke_run
        assert main(["train", "--config", str(out / "run.cfg"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()

    def test_variant_b_selects_xnor_path(self, tmp_path):
        assert main(["train", "--config", str(SMOKE), "--variant", "B", "--epochs", "1", "--out", str(tmp_path)]) == 0
        net = load_checkpoint(tmp_path / "checkpoint")
        assert net.variant.name == "B"
        assert not net.variant.rotate and not net.variant.approx
        assert all(layer.rotation is None for layer in net.binarized_layers)

    def test_missing_data_dir(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--dataset", "mnist", "--out", tmp_path)
        assert code == 2 and "--data-dir" in err

    def test_nonexistent_data_dir(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--dataset", "mnist", "--data-dir", tmp_path / "nope", "--out", tmp_path)
        assert code == 2 and "--data-dir" in err

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[train]\nlearning_rate = 0.1\n")
        code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path)
        assert code == 2 and "learning_rate" in err

    def test_bad_value(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[train]\nepochs = many\n")
        assert run(capsys, "train", "--config", cfg, "--out", tmp_path)[0] == 2

    def test_unknown_flag(self, capsys):
        assert run(capsys, "train", "--frobnicate")[0] == 2

    def test_runtime_failure_is_exit_1(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "train", "--config", SMOKE, "--epochs", "1", "--out", blocker / "sub")
        assert code == 1 and err


class TestEval:
    def test_checkpoint(self, capsys, smoke_run):
        _, out = smoke_run
        code, text, _ = run(capsys, "eval", "--checkpoint", out / "checkpoint", "--dataset", "synthetic")
        assert code == 0 and text.startswith("test_acc ")

    def test_missing_checkpoint(self, capsys, tmp_path):
        assert run(capsys, "eval", "--checkpoint", tmp_path / "none", "--dataset", "synthetic")[0] == 1


def _analysis(out):
    return list(csv.DictReader(open(out / "analysis.csv", encoding="utf-8")))


class TestAnalyze:
    def test_synthetic_alignment(self, capsys, tmp_path):
        code, text, _ = run(capsys, "analyze", "--synthetic", 256, "--seed", 7, "--out", tmp_path)
        assert code == 0 and "objective history:" in text
        (row,) = _analysis(tmp_path)
        assert float(row["cos_after"]) >= float(row["cos_before"])
        assert (row["n1"], row["n2"]) == ("16", "16")

    def test_degenerate_single_weight(self, capsys, tmp_path):
        code, _, _ = run(capsys, "analyze", "--synthetic", 1, "--seed", 0, "--out", tmp_path)
        assert code == 0
        (row,) = _analysis(tmp_path)
        assert (row["n1"], row["n2"]) == ("1", "1")
        assert np.isfinite(float(row["cos_after"]))

    def test_checkpoint_per_layer_table(self, capsys, smoke_run, tmp_path):
        _, out = smoke_run
        code, text, _ = run(capsys, "analyze", "--checkpoint", out / "checkpoint", "--out", tmp_path)
        assert code == 0
        rows = _analysis(tmp_path)
        assert [r["tensor"] for r in rows] == ["dense2", "dense3"]
        assert all(float(r["cos_after"]) >= float(r["cos_before"]) - 1e-12 for r in rows)

    def test_weights_blob(self, capsys, tmp_path):
        w = np.random.default_rng(0).standard_normal(64)
        with open(tmp_path / "w.bin", "wb") as fh:
            write_blob(fh, w)
        code, _, _ = run(capsys, "analyze", "--weights", tmp_path / "w.bin", "--out", tmp_path)
        assert code == 0 and _analysis(tmp_path)[0]["n"] == "64"

    def test_malformed_blob(self, capsys, tmp_path):
        (tmp_path / "w.bin").write_bytes(b"\x10\x00\x00\x00\x00")
        code, _, err = run(capsys, "analyze", "--weights", tmp_path / "w.bin")
        assert code == 1 and "CheckpointError" in err

    def test_zero_synthetic(self, capsys):
        assert run(capsys, "analyze", "--synthetic", 0)[0] == 2


class TestBench:
    def test_single_size(self, capsys, tmp_path):
        assert run(capsys, "bench", "--sizes", 16, "--repeats", 1, "--out", tmp_path)[0] == 0
        rows = list(csv.DictReader(open(tmp_path / "bench.csv", encoding="utf-8")))
        assert len(rows) == 1 and rows[0]["n"] == "16"

    def test_rotations_match_at_64(self, capsys, tmp_path):
        run(capsys, "bench", "--sizes", 64, "--repeats", 1, "--out", tmp_path)
        (row,) = csv.DictReader(open(tmp_path / "bench.csv", encoding="utf-8"))
        assert float(row["max_abs_diff"]) <= 1e-9

    def test_bad_sizes(self, capsys, tmp_path):
        assert run(capsys, "bench", "--sizes", "a,b", "--out", tmp_path)[0] == 2
