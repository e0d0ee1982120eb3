import csv
import json

import numpy as np
import pytest

from pfeddl.cli import main
from pfeddl.config import QUICKSTART_HYPER, build_config, sweep_hyper
from pfeddl.dataio import load_matrix, save_labels, save_matrix
from pfeddl.errors import ConfigurationError

TINY = {
    "profile": "quickstart",
    "data": {"synthetic": {"d": 12, "k_true": 4, "g_true": 2, "n_sites": 2, "n_per_site": 16, "sparsity": 1}},
    "hyper": {"k": 4, "g": 2, "eta": 0.05, "iters_local": 2, "iters_fed": 3, "iters_pretrain": 40},
    "folds": 2,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def write_site(root, name, d, n, rng):
    site = root / name
    site.mkdir()
    save_matrix(site / "X.txt", rng.standard_normal((d, n)))
    save_labels(site / "Y.txt", rng.integers(0, 2, n))
    return site


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        cfg = build_config(TINY, seed=5, folds=3, out=tmp_path / "o")
        assert cfg.hyper.seed == 5 and cfg.synthetic.seed == 5
        assert cfg.folds == 3 and cfg.out == tmp_path / "o"
        assert cfg.hyper.k == 4 and cfg.hyper.lambda2 == QUICKSTART_HYPER.lambda2

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            build_config({"hyper": {"bogus": 1}})

    def test_bad_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["train", "--config", str(bad)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_sweep_k_keeps_global_fraction(self):
        hyper = QUICKSTART_HYPER.with_(k=20, g=15)
        assert (sweep_hyper(hyper, "k", "8").k, sweep_hyper(hyper, "k", "8").g) == (8, 6)
        assert sweep_hyper(hyper, "lambda2", "0.5").lambda2 == 0.5
        with pytest.raises(ConfigurationError):
            sweep_hyper(hyper, "seed", 1)
        with pytest.raises(ConfigurationError):
            sweep_hyper(hyper, "eta", "fast")


class TestSynth:
    def test_writes_sites(self, tmp_path, capsys):
        out = tmp_path / "fed"
        assert main(["synth", "--profile", "quickstart", "--out", str(out)]) == 0
        for i in range(4):
            assert load_matrix(out / f"site_{i}" / "X.txt").shape == (64, 150)
        assert (out / "ground_truth" / "global_atoms.txt").exists()
        assert json.loads((out / "spec.json").read_text())["d"] == 64
        assert "wrote 4 sites" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        main(["synth", "--config", str(self._tiny(tmp_path)), "--out", str(tmp_path / "a")])
        main(["synth", "--config", str(self._tiny(tmp_path)), "--out", str(tmp_path / "b")])
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_unwritable_leaves_nothing(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--profile", "quickstart", "--out", str(blocker / "fed")]) != 0
        assert "error" in capsys.readouterr().err
        assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]

    def test_refuses_nonempty_output(self, tmp_path):
        out = tmp_path / "fed"
        out.mkdir()
        (out / "keep.txt").write_text("mine")
        assert main(["synth", "--profile", "quickstart", "--out", str(out)]) == 1
        assert (out / "keep.txt").read_text() == "mine"

    @staticmethod
    def _tiny(tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(TINY))
        return path


class TestTrain:
    def test_synthetic_run_outputs(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
        report = (out / "report.txt").read_text()
        assert report.rstrip().endswith("status ok")
        for name in ("rounds.jsonl", "objective.csv", "alignment.json", "objective.png", "timing.jsonl"):
            assert (out / name).exists(), name
        rows = list(csv.reader((out / "objective.csv").open()))
        assert len(rows) == 1 + TINY["hyper"]["iters_fed"] * 2
        assert load_matrix(out / "models" / "site_0" / "D.txt").shape == (12, 4)

    def test_site_directories(self, tmp_path, rng):
        sites = [write_site(tmp_path, f"s{i}", 6, 12, rng) for i in range(2)]
        out = tmp_path / "run"
        args = ["train", "--profile", "quickstart", "--sites", *map(str, sites), "--folds", "2", "--out", str(out), "--no-figures"]
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"hyper": {"k": 3, "g": 1, "iters_local": 1, "iters_fed": 1, "iters_pretrain": 5}}))
        before = {p: p.read_bytes() for s in sites for p in s.iterdir()}
        assert main([*args, "--config", str(cfg)]) == 0
        assert "s0" in (out / "report.txt").read_text()
        assert {p: p.read_bytes() for s in sites for p in s.iterdir()} == before
        assert not (out / "objective.png").exists()

    def test_missing_site_file(self, tmp_path, capsys):
        site = tmp_path / "s0"
        site.mkdir()
        save_labels(site / "Y.txt", [0, 1])
        assert main(["train", "--sites", str(site), "--out", str(tmp_path / "o")]) != 0
        assert str(site / "X.txt") in capsys.readouterr().err

    def test_both_sources_is_config_error(self, tmp_path, capsys):
        data = {"data": {"synthetic": {}, "sites": ["a"]}}
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(data))
        assert main(["train", "--config", str(cfg)]) == 2


class TestAlign:
    def test_single_site_identity(self, tmp_path, rng, capsys):
        site = write_site(tmp_path, "only", 8, 10, rng)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"hyper": {"k": 4, "g": 2, "iters_pretrain": 5, "eta": 0.05}}))
        out = tmp_path / "al"
        assert main(["align", "--config", str(cfg), "--sites", str(site), "--out", str(out)]) == 0
        record = json.loads((out / "alignment.json").read_text())
        assert record["permutations"][0]["perm"] == [0, 1, 2, 3]
        assert record["permutations"][0]["signs"] == [1, 1, 1, 1]
        assert record["total_weight"] == 0.0
        assert (out / "aligned" / "only_D.txt").exists()

    def test_inconsistent_dimensions_named(self, tmp_path, rng, capsys):
        a = write_site(tmp_path, "a", 8, 10, rng)
        b = write_site(tmp_path, "b", 9, 10, rng)
        assert main(["align", "--sites", str(a), str(b), "--out", str(tmp_path / "o")]) != 0
        err = capsys.readouterr().err
        assert "d=8" in err and "d=9" in err

    def test_planted_demo(self, tmp_path, capsys):
        assert main(["align", "--planted-demo", "--out", str(tmp_path / "demo")]) == 0
        text = capsys.readouterr().out
        assert "total path weight 0" in text
        record = json.loads((tmp_path / "demo" / "alignment.json").read_text())
        assert len(record["rounds"]) == 8


class TestSweep:
    def test_k_sweep(self, tmp_path, tiny_config):
        out = tmp_path / "sw"
        args = ["sweep", "--config", str(tiny_config), "--param", "k", "--values", "8", "16", "32", "--out", str(out)]
        assert main(args) == 0
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert [r["k"] for r in rows] == ["8", "16", "32"]
        assert all(r["status"] == "ok" and 0 <= float(r["mean_accuracy"]) <= 1 for r in rows)
        assert (out / "sweep.png").exists()

    def test_empty_range(self, tmp_path, capsys):
        data = dict(TINY, sweep={"param": "k", "values": []})
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(data))
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "empty" in capsys.readouterr().err

    def test_failing_value_recorded(self, tmp_path, tiny_config):
        out = tmp_path / "sw"
        args = ["sweep", "--config", str(tiny_config), "--param", "k", "--values", "0", "4", "--out", str(out), "--no-figures"]
        assert main(args) == 1
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert rows[0]["status"].startswith("failed") and rows[0]["mean_accuracy"] == ""
        assert rows[1]["status"] == "ok"


def test_seeded_train_reports_repeat(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_config), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.txt").read_bytes() == (tmp_path / "b" / "report.txt").read_bytes()
    assert np.array_equal(load_matrix(tmp_path / "a" / "models" / "site_1" / "S.txt"), load_matrix(tmp_path / "b" / "models" / "site_1" / "S.txt"))
