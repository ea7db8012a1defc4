import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from nearnet.data import DatasetBundle
from nearnet.graph import Graph
from nearnet.harness import (
    BENCHMARK_GRID,
    FoldReport,
    RunConfig,
    _batches,
    cv_grid,
    export_curves,
    family_bundle,
    grid_points,
    kfold_cv,
    max_pairwise_linf,
    run_toy,
    separation_pair,
    stratified_folds,
    toy_split,
    train,
    verify_collapse,
)
from nearnet.layers import ModelConfig
from nearnet.synth import FamilyGraph, SamplerConfig, WHITE, sample_dataset
from helpers import brute_triangles, random_graph

NO_BN = dict(mlp_batchnorm=False, layer_output_bn=False, classifier_batchnorm=False)


def small_bundle(seed=0, count=40, labels=None):
    rng = np.random.default_rng(seed)
    gs = [random_graph(rng, n=int(rng.integers(3, 8))) for _ in range(count)]
    y = np.array([g.num_edges % 2 for g in gs]) if labels is None else np.asarray(labels)
    feats = [np.ones((g.num_nodes, 1)) for g in gs]
    return DatasetBundle(gs, y, feats, {"num_classes": 2})


def quick_config(**model_kw):
    model = ModelConfig(num_layers=2, hidden_dim=8, dropout=0.0, **model_kw)
    return RunConfig(model=model, epochs=3, batch_size=8, lr=1e-2, decay=1.0)


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(model=ModelConfig(variant="m", readout="mean"), epochs=7, seed=3)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_grid_point(self):
        cfg = RunConfig().with_grid_point({"hidden_dim": 64, "lr": 1e-2, "batch_size": 64, "readout": "mean"})
        assert cfg.model.hidden_dim == 64 and cfg.model.readout == "mean"
        assert cfg.lr == 1e-2 and cfg.batch_size == 64

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)

    def test_benchmark_grid_size(self):
        points = grid_points(BENCHMARK_GRID)
        assert len(points) == 32
        assert len({tuple(sorted(p.items())) for p in points}) == 32


class TestFoldReport:
    def test_ties_break_to_earliest(self):
        r = FoldReport(val_acc=[0.5, 0.8, 0.8, 0.7])
        assert r.best_epoch == 1
        assert r.best_val_acc == 0.8

    def test_dict_round_trip(self):
        r = FoldReport([1.0], [0.5], [0.9], [0.6], {"fold": 2}, "x.npz")
        back = FoldReport.from_dict(json.loads(json.dumps(r.to_dict())))
        assert back.to_dict() == r.to_dict()


class TestBatches:
    def test_trailing_singleton_merged(self):
        chunks = _batches(np.arange(9), 4)
        assert [len(c) for c in chunks] == [4, 5]
        assert np.array_equal(np.concatenate(chunks), np.arange(9))

    def test_single_graph(self):
        assert [len(c) for c in _batches(np.arange(1), 4)] == [1]


class TestTrain:
    def test_zero_learning_rate(self):
        data = small_bundle()
        cfg = replace(quick_config(**NO_BN), lr=0.0, batch_size=len(data), epochs=4)
        report = train(cfg, data, data)
        for curve in (report.train_loss, report.train_acc, report.val_loss, report.val_acc):
            assert len(set(curve)) == 1
        # the parameters themselves never move
        fresh = train(replace(cfg, epochs=1), data, data).model
        for (_, a, _), (_, b, _) in zip(report.model.named_parameters(), fresh.named_parameters()):
            assert np.array_equal(a, b)

    def test_curves_are_valid(self):
        data = small_bundle()
        report = train(quick_config(variant="e"), data.subset(range(30)), data.subset(range(30, 40)))
        assert len(report.val_acc) == 3
        assert all(np.isfinite(report.train_loss + report.val_loss))
        assert all(0 <= a <= 1 for a in report.train_acc + report.val_acc)

    def test_memorizes_single_graph(self):
        g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)])
        one = DatasetBundle([g], np.array([1]), [np.ones((5, 1))], {"num_classes": 2})
        cfg = replace(quick_config(classifier_batchnorm=False), epochs=30)
        report = train(cfg, one, one)
        assert report.train_acc[-1] == 1.0
        assert report.train_loss[-1] < report.train_loss[0]

    def test_seeded_rerun_is_identical(self):
        data = small_bundle()
        cfg = replace(quick_config(variant="h"), seed=5)
        cfg = replace(cfg, model=replace(cfg.model, dropout=0.5))
        a = train(cfg, data.subset(range(30)), data.subset(range(30, 40)))
        b = train(cfg, data.subset(range(30)), data.subset(range(30, 40)))
        assert a.to_dict() == b.to_dict()
        c = train(replace(cfg, seed=6), data.subset(range(30)), data.subset(range(30, 40)))
        assert c.to_dict() != a.to_dict()

    def test_checkpoint(self, tmp_path):
        from nearnet.layers import NEARModel
        from nearnet.nn import load_checkpoint

        data = small_bundle()
        path = tmp_path / "final.npz"
        report = train(quick_config(), data, data, checkpoint=path)
        assert report.checkpoint == str(path)
        clone = NEARModel(report.model.cfg, 1, 2, np.random.default_rng(99))
        extra = load_checkpoint(clone, path)
        assert extra["epochs"] == 3
        for (_, a, _), (_, b, _) in zip(report.model.named_parameters(), clone.named_parameters()):
            assert np.array_equal(a, b)

    def test_empty_split(self):
        data = small_bundle()
        empty = data.subset([])
        with pytest.raises(ValueError):
            train(quick_config(), data, empty)


class TestFolds:
    def test_partition_and_stratification(self):
        labels = np.array([0] * 47 + [1] * 23 + [2] * 9)
        folds = stratified_folds(labels, 7, seed=1)
        allidx = np.concatenate(folds)
        assert np.array_equal(np.sort(allidx), np.arange(len(labels)))
        for c in range(3):
            counts = [int(np.sum(labels[f] == c)) for f in folds]
            assert max(counts) - min(counts) <= 1

    def test_188_graphs(self):
        labels = np.array([0] * 125 + [1] * 63)
        sizes = sorted(len(f) for f in stratified_folds(labels, 10, seed=0))
        assert set(sizes) == {18, 19}
        assert sum(sizes) == 188

    def test_seeded(self):
        labels = np.arange(30) % 3
        a = stratified_folds(labels, 5, 4)
        assert all(np.array_equal(x, y) for x, y in zip(a, stratified_folds(labels, 5, 4)))

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            stratified_folds(np.array([0, 1, 0]), 4, 0)


class TestKFold:
    def test_majority_prior(self):
        # indistinguishable graphs: any model predicts one class for all of them
        g = Graph(3, [(0, 1), (1, 2)])
        labels = np.array([1] * 30 + [0] * 20)
        data = DatasetBundle([g] * 50, labels, [np.ones((3, 1))] * 50, {"num_classes": 2})
        summary = kfold_cv(replace(quick_config(**NO_BN), epochs=6), data, k=5)
        assert summary.mean == pytest.approx(0.6, abs=1e-12)

    def test_mean_within_fold_range(self):
        data = small_bundle(count=50)
        summary = kfold_cv(quick_config(variant="c"), data, k=5)
        at_best = [r.val_acc[summary.best_epoch] for r in summary.fold_reports]
        assert min(at_best) <= summary.mean <= max(at_best)
        assert summary.std == pytest.approx(np.std(at_best))
        assert summary.best_epoch == int(np.argmax(summary.mean_curve))
        assert len(summary.fold_reports) == 5

    def test_parallel_matches_serial(self):
        data = small_bundle(count=30)
        cfg = replace(quick_config(), epochs=2)
        a = kfold_cv(cfg, data, k=3, jobs=1)
        b = kfold_cv(cfg, data, k=3, jobs=2)
        assert a.to_dict() == b.to_dict()

    def test_grid(self):
        data = small_bundle(count=30)
        grid = {"hidden_dim": [4, 8], "lr": [1e-2]}
        (best_point, best), results = cv_grid(replace(quick_config(), epochs=2), data, grid)
        assert len(results) == 2
        assert best.mean == max(s.mean for _, s in results)
        assert best_point in [p for p, _ in results]


class TestToy:
    def test_split(self):
        tr, va = toy_split(1000, 3)
        assert len(va) == 100 and len(tr) == 900
        assert not set(tr) & set(va)
        assert np.array_equal(toy_split(1000, 3)[1], va)

    def test_family_bundle_labels(self):
        sample = sample_dataset(SamplerConfig(30, 2.0, 1))
        bundle = family_bundle(sample, "artfcc")
        assert bundle.feature_dim == 2
        assert set(bundle.graph_labels.tolist()) <= {0, 1}

    def test_short_run(self):
        report = run_toy("artfcycle6", "c", seed=1, epochs=2, count=60)
        assert report.meta["variant"] == "c"
        assert sum(report.meta["class_priors"]) == pytest.approx(1.0)
        assert len(report.val_acc) == 2

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            run_toy("artfx", "c", epochs=1)


@pytest.fixture(scope="module")
def sample():
    return sample_dataset(SamplerConfig(40, 2.0, 11))


class TestCollapse:

    @pytest.mark.parametrize("readout", ["mean", "sum"])
    def test_plain_model_collapses(self, sample, readout):
        report = verify_collapse(sample, ModelConfig(readout=readout), trials=4, seed=2)
        assert report.passed
        assert max(report.max_distance) < 1e-8
        if readout == "sum":
            assert report.cross_n_distance and min(report.cross_n_distance) > 0

    def test_count_variant_separates(self, sample):
        report = verify_collapse(sample, ModelConfig(), trials=10, seed=3, near_variants=("c",))
        s = report.separation["c"]
        i, j = s["pair"]
        assert sample[i].n_param == sample[j].n_param
        assert brute_triangles(sample[i].graph) != brute_triangles(sample[j].graph)
        assert s["fraction_separated"] >= 0.95

    def test_trained_model_still_collapses(self, sample):
        report = run_toy("artfcc", "none", seed=2, epochs=3, count=80)
        check = verify_collapse(sample, None, model=report.model)
        assert check.passed and check.trials == 1

    def test_non_member_raises(self, sample):
        g = sample[0]
        broken = FamilyGraph(g.graph, np.full(g.graph.num_nodes, WHITE), g.n_param)
        with pytest.raises(ValueError, match="not a family member"):
            verify_collapse(list(sample[:3]) + [broken], ModelConfig(), trials=1)

    def test_rejects_near_config(self, sample):
        with pytest.raises(ValueError):
            verify_collapse(sample, ModelConfig(variant="c"), trials=1)

    def test_separation_pair_search(self, sample):
        i, j = separation_pair(sample)
        assert sample[i].n_param == sample[j].n_param
        assert separation_pair(sample[:1]) is None

    def test_max_pairwise(self):
        reps = np.array([[0.0, 1.0], [0.5, -1.0], [0.2, 0.0]])
        assert max_pairwise_linf(reps) == 2.0
        assert max_pairwise_linf(reps[:1]) == 0.0

    def test_summary_lines(self, sample):
        lines = verify_collapse(sample, ModelConfig(readout="mean"), trials=2).summary_lines()
        assert lines[-1] == "PASS"


class TestExport:
    def test_csv_and_json(self, tmp_path):
        reports = {
            "none": FoldReport([1.0, 0.9], [0.5, 0.6], [1.1, 1.0], [0.4, 0.5], {"seed": 0}),
            "c": FoldReport([0.8, 0.5], [0.6, 0.9], [0.7, 0.4], [0.7, 0.95]),
        }
        csv_path, json_path = export_curves(reports, tmp_path / "out" / "curves.csv")
        rows = list(csv.DictReader(open(csv_path)))
        assert len(rows) == 8
        assert rows[0] == {"variant": "none", "epoch": "0", "split": "train", "loss": "1.0", "accuracy": "0.5"}
        summary = json.loads(json_path.read_text())
        assert summary["c"]["best_epoch"] == 1 and summary["c"]["best_val_acc"] == 0.95

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_curves(FoldReport([1.0], [1.0], [1.0], [1.0]), blocker / "sub" / "c")
