import json
import subprocess
import sys

import numpy as np
import pytest

from nearnet.cli import EXIT_ASSERTION, EXIT_INPUT, EXIT_OK, EXIT_USAGE, load_family, main
from nearnet.data import RawDataset, save_tu_dataset
from nearnet.synth import SamplerConfig, sample_dataset
from helpers import random_graph


@pytest.fixture(scope="module")
def family_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("family")
    assert main(["generate", "--count", "60", "--mean", "2.0", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


class TestGenerate:
    def test_layout(self, family_dir):
        assert len(list((family_dir / "graphs").glob("graph_*.txt"))) == 60
        header = (family_dir / "labels.tsv").read_text().splitlines()[0]
        assert header.split("\t") == ["graph_id", "n_param", "artfcc", "artfcycle6"]
        m = _manifest(family_dir)
        assert m["command"] == "generate" and m["seed"] == 7 and m["num_graphs"] == 60

    def test_round_trip_matches_sampler(self, family_dir):
        loaded = load_family(family_dir)
        fresh = sample_dataset(SamplerConfig(60, 2.0, 7))
        assert [f.graph for f in loaded] == [f.graph for f in fresh]
        assert all(np.array_equal(a.colors, b.colors) for a, b in zip(loaded, fresh))

    def test_default_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NEARNET_OUT", str(tmp_path / "root"))
        assert main(["generate", "--count", "3"]) == EXIT_OK
        (run,) = (tmp_path / "root").iterdir()
        assert run.name.startswith("generate-")
        assert _manifest(run)["config_hash"] in run.name


class TestVerify:
    def test_family_passes(self, family_dir, tmp_path):
        assert main(["verify-family", "--in", str(family_dir), "--out", str(tmp_path)]) == EXIT_OK
        assert json.loads((tmp_path / "verify_family.json").read_text())["num_failed"] == 0

    def test_corrupt_graph_fails(self, family_dir, tmp_path):
        import shutil

        bad = tmp_path / "bad"
        shutil.copytree(family_dir, bad)
        g0 = bad / "graphs" / "graph_00000.txt"
        lines = g0.read_text().splitlines()
        n, m = lines[0].split()
        g0.write_text("\n".join([f"{n} {int(m) - 1}"] + lines[1:-1]) + "\n")
        assert main(["verify-family", "--in", str(bad), "--out", str(tmp_path / "o")]) == EXIT_ASSERTION
        assert main(["verify-collapse", "--in", str(bad), "--trials", "1", "--out", str(tmp_path / "c")]) == EXIT_INPUT

    def test_missing_input(self, tmp_path):
        assert main(["verify-family", "--in", str(tmp_path / "nope")]) == EXIT_INPUT

    @pytest.mark.parametrize("readout", ["mean", "sum"])
    def test_collapse(self, family_dir, tmp_path, readout, capsys):
        args = ["verify-collapse", "--in", str(family_dir), "--readout", readout, "--trials", "3", "--out", str(tmp_path)]
        assert main(args) == EXIT_OK
        assert capsys.readouterr().out.strip().endswith("PASS")
        report = json.loads((tmp_path / "collapse_report.json").read_text())
        assert max(report["max_distance"]) < 1e-8

    def test_near_variant_separates(self, family_dir, tmp_path):
        args = ["verify-collapse", "--in", str(family_dir), "--variant", "c", "--trials", "5", "--out", str(tmp_path)]
        assert main(args) == EXIT_OK


class TestUsage:
    @pytest.mark.parametrize(
        "argv",
        [[], ["bogus"], ["generate", "--count", "x"], ["train-toy", "--task", "artfcc"], ["verify-collapse"]],
    )
    def test_bad_flags(self, argv):
        assert main(argv) == EXIT_USAGE

    def test_bad_value(self, tmp_path):
        assert main(["generate", "--count", "0", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_module_entry_point(self):
        done = subprocess.run([sys.executable, "-m", "nearnet", "--version"], capture_output=True, text=True)
        assert done.returncode == 0 and "nearnet" in done.stdout


class TestTrainAndExport:
    def test_train_toy_then_export(self, tmp_path):
        run = tmp_path / "run"
        argv = ["train-toy", "--task", "artfcc", "--variant", "c", "--epochs", "2", "--count", "50", "--out", str(run)]
        assert main(argv) == EXIT_OK
        report = json.loads((run / "report.json").read_text())
        assert len(report["val_acc"]) == 2
        assert (run / "curves.csv").exists() and (run / "curves.json").exists()
        assert _manifest(run)["best_epoch"] == report["best_epoch"]
        merged = tmp_path / "merged"
        assert main(["export", "--in", str(run), "--out", str(merged)]) == EXIT_OK
        assert "c" in json.loads((merged / "curves.json").read_text())

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": {"num_layers": 1, "hidden_dim": 4, "dropout": 0.0}, "batch_size": 16}))
        argv = ["train-toy", "--task", "artfcycle6", "--variant", "m", "--epochs", "1", "--count", "40",
                "--config", str(cfg), "--out", str(tmp_path / "r")]
        assert main(argv) == EXIT_OK

    def test_export_missing(self, tmp_path):
        assert main(["export", "--in", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_INPUT


class TestCVBench:
    @pytest.fixture
    def tu_dir(self, tmp_path):
        rng = np.random.default_rng(0)
        graphs = [random_graph(rng, n=int(rng.integers(3, 9))) for _ in range(24)]
        labels = np.array([g.num_edges % 2 for g in graphs])
        labels[:2] = [0, 1]
        raw = RawDataset("TINY", graphs, labels, [0, 1], node_labels=[rng.integers(0, 3, g.num_nodes) for g in graphs])
        save_tu_dataset(raw, tmp_path / "data" / "TINY")
        return tmp_path / "data"

    def test_single_point(self, tu_dir, tmp_path, capsys):
        argv = ["cv-bench", "--dataset", "TINY", "--dir", str(tu_dir), "--variant", "c", "--grid", "none",
                "--epochs", "2", "--folds", "3", "--out", str(tmp_path / "o")]
        assert main(argv) == EXIT_OK
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert 0.0 <= summary["best"]["mean"] <= 1.0
        assert capsys.readouterr().out.startswith("TINY\tNEAR-c\t")

    def test_config_grid(self, tu_dir, tmp_path):
        cfg = tmp_path / "bench.json"
        cfg.write_text(json.dumps({
            "dataset": "TINY", "dir": str(tu_dir), "variant": "e", "grid": "full",
            "grid_values": {"hidden_dim": [4, 8]}, "epochs": 2, "folds": 3,
            "model": {"num_layers": 2},
        }))
        assert main(["cv-bench", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert len(summary["grid"]) == 2

    def test_missing_dataset(self, tmp_path):
        argv = ["cv-bench", "--dataset", "MUTAG", "--dir", str(tmp_path), "--out", str(tmp_path / "o")]
        assert main(argv) == EXIT_INPUT
