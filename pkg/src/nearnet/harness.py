"""Training loops, cross-validation, the collapse verifier and curve export."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DatasetBundle
from .layers import VARIANTS, GraphBatch, ModelConfig, NEARModel
from .nn import AdamState, BatchNorm, adam_step, flatten_parameters, save_checkpoint, softmax_cross_entropy
from .synth import LABELERS, FamilyGraph, SamplerConfig, initial_features, sample_dataset, verify_family
from .graph import triangle_count

log = logging.getLogger(__name__)

BENCHMARK_GRID = {
    "batch_size": [32, 64],
    "hidden_dim": [32, 64],
    "dropout": [0.0, 0.5],
    "readout": ["mean", "sum"],
    "lr": [1e-2, 1e-3],
}

COLLAPSE_TOL = 1e-8
SEPARATION_TOL = 1e-3


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-4
    decay: float = 0.99
    seed: int = 0
    folds: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        return cls(model=model, **d)

    def with_grid_point(self, point: dict) -> "RunConfig":
        model_keys = {"hidden_dim", "dropout", "readout", "variant", "num_layers"}
        mk = {k: v for k, v in point.items() if k in model_keys}
        rk = {k: v for k, v in point.items() if k not in model_keys}
        return replace(self, model=replace(self.model, **mk), **rk)


@dataclass
class FoldReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    checkpoint: str | None = None
    model: NEARModel | None = field(default=None, repr=False, compare=False)

    @property
    def best_epoch(self) -> int:
        # ties go to the earliest epoch
        return int(np.argmax(self.val_acc)) if self.val_acc else -1

    @property
    def best_val_acc(self) -> float:
        return float(self.val_acc[self.best_epoch])

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
            "meta": self.meta,
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        return cls(d["train_loss"], d["train_acc"], d["val_loss"], d["val_acc"], d.get("meta", {}), d.get("checkpoint"))


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    # a lone trailing graph would give classifier batch norm a single row
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def evaluate(model: NEARModel, data: DatasetBundle, chunk: int = 256) -> tuple[float, float]:
    """Eval-mode mean cross-entropy and accuracy over ``data``."""
    total_loss, correct = 0.0, 0
    for batch, H0, y in data.chunks(chunk):
        _, logits = model.forward(batch, H0, train=False)
        model._cache = None
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return total_loss / len(data), correct / len(data)


def train(
    config: RunConfig,
    train_set: DatasetBundle,
    val_set: DatasetBundle,
    num_classes: int | None = None,
    checkpoint=None,
) -> FoldReport:
    """Adam training with per-epoch shuffling; validation after every epoch.

    Training metrics are the sample-weighted averages over the epoch's
    train-mode minibatches; validation metrics come from an eval-mode pass.
    With ``checkpoint`` set, the final parameters are saved there.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if train_set.feature_dim != val_set.feature_dim:
        raise ValueError("train and validation feature widths differ")
    num_classes = num_classes or max(train_set.num_classes, val_set.num_classes)
    init_rng, shuffle_rng, drop_rng = _streams(config.seed, 3)
    model = NEARModel(config.model, train_set.feature_dim, num_classes, init_rng)
    flat_p, flat_g = flatten_parameters(model)
    params, grads = {"all": flat_p}, {"all": flat_g}
    state = AdamState(lr=config.lr, decay=config.decay)
    report = FoldReport(model=model)

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for idx in _batches(order, config.batch_size):
            batch = GraphBatch([train_set.graphs[i] for i in idx])
            H0 = np.concatenate([train_set.node_features[i] for i in idx])
            y = train_set.graph_labels[idx]
            flat_g.fill(0.0)
            _, logits = model.forward(batch, H0, train=True, rng=drop_rng)
            loss, g = softmax_cross_entropy(logits, y)
            model.backward(g)
            adam_step(params, grads, state)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        state.end_epoch()
        report.train_loss.append(loss_sum / len(train_set))
        report.train_acc.append(correct / len(train_set))
        vl, va = evaluate(model, val_set)
        report.val_loss.append(vl)
        report.val_acc.append(va)
        log.debug("epoch %d train %.4f/%.3f val %.4f/%.3f", epoch, report.train_loss[-1], report.train_acc[-1], vl, va)
    if checkpoint is not None:
        save_checkpoint(model, checkpoint, {"config": config.to_dict(), "epochs": config.epochs})
        report.checkpoint = str(checkpoint)
    return report


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Validation index sets of a seeded stratified k-fold partition."""
    from sklearn.model_selection import StratifiedKFold

    labels = np.asarray(labels)
    if k > len(labels):
        raise ValueError(f"cannot make {k} folds from {len(labels)} graphs")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return [np.sort(val) for _, val in skf.split(np.zeros(len(labels)), labels)]


@dataclass
class CVSummary:
    mean: float
    std: float
    best_epoch: int
    fold_reports: list[FoldReport]
    config: dict

    @property
    def mean_curve(self) -> np.ndarray:
        return np.mean([r.val_acc for r in self.fold_reports], axis=0)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "best_epoch": self.best_epoch,
            "config": self.config,
            "folds": [r.to_dict() for r in self.fold_reports],
        }


def _run_fold(args):
    config, dataset, val_idx, fold_id = args
    train_idx = np.setdiff1d(np.arange(len(dataset)), val_idx)
    cfg = replace(config, seed=int(np.random.SeedSequence([config.seed, fold_id]).generate_state(1)[0]))
    report = train(cfg, dataset.subset(train_idx), dataset.subset(val_idx), dataset.num_classes)
    report.model = None
    report.meta["fold"] = fold_id
    return report


def kfold_cv(config: RunConfig, dataset: DatasetBundle, k: int | None = None, jobs: int = 1) -> CVSummary:
    """Epoch-wise cross-fold average of validation accuracy; report its max.

    ``std`` is the spread of fold accuracies at that best epoch.
    """
    k = k or config.folds
    folds = stratified_folds(dataset.graph_labels, k, config.seed)
    tasks = [(config, dataset, val, i) for i, val in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_fold, tasks))
    else:
        reports = [_run_fold(t) for t in tasks]
    acc = np.array([r.val_acc for r in reports])
    curve = acc.mean(axis=0)
    best = int(np.argmax(curve))
    return CVSummary(float(curve[best]), float(acc[:, best].std()), best, reports, config.to_dict())


def grid_points(grid: dict) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def cv_grid(base: RunConfig, dataset: DatasetBundle, grid: dict | None = None, jobs: int = 1):
    """Best grid point by peak cross-fold mean accuracy; ties keep the earlier point."""
    grid = BENCHMARK_GRID if grid is None else grid
    results = []
    for point in grid_points(grid):
        summary = kfold_cv(base.with_grid_point(point), dataset, jobs=jobs)
        log.info("grid %s -> %.4f (%.4f) @ epoch %d", point, summary.mean, summary.std, summary.best_epoch)
        results.append((point, summary))
    best_i = max(range(len(results)), key=lambda i: (results[i][1].mean, -i))
    return results[best_i], results


# ---------------------------------------------------------------------------
# toy tasks
# ---------------------------------------------------------------------------


TOY_CONFIG = RunConfig(
    model=ModelConfig(num_layers=5, hidden_dim=32, readout="sum", dropout=0.5),
    epochs=300,
    batch_size=32,
    lr=1e-4,
    decay=0.99,
)


def family_bundle(sample: list[FamilyGraph], task: str) -> DatasetBundle:
    label = LABELERS[task]
    return DatasetBundle(
        [fg.graph for fg in sample],
        np.array([label(fg.graph) for fg in sample], dtype=np.int64),
        [initial_features(fg) for fg in sample],
        {"name": task, "num_classes": 2, "n_param": [fg.n_param for fg in sample]},
    )


def toy_split(n: int, seed: int, val_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 90]))).permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def run_toy(
    task: str,
    variant: str,
    seed: int = 0,
    epochs: int = 300,
    count: int = 1000,
    mean: float = 2.0,
    config: RunConfig | None = None,
) -> FoldReport:
    """One toy experiment on a fixed 90/10 split of a freshly sampled family."""
    if task not in LABELERS:
        raise ValueError(f"unknown toy task {task!r}; choose from {sorted(LABELERS)}")
    sample = sample_dataset(SamplerConfig(count, mean, seed))
    data = family_bundle(sample, task)
    priors = np.bincount(data.graph_labels, minlength=2) / len(data)
    if np.any(priors == 0):
        raise ValueError(f"seed {seed} gives a single-class {task} sample")
    tr, va = toy_split(len(data), seed)
    base = config or TOY_CONFIG
    cfg = replace(base, epochs=epochs, seed=seed, model=replace(base.model, variant=variant))
    report = train(cfg, data.subset(tr), data.subset(va), 2)
    report.meta.update(
        task=task,
        variant=variant,
        seed=seed,
        class_priors=priors.tolist(),
        val_class_priors=(np.bincount(data.graph_labels[va], minlength=2) / len(va)).tolist(),
    )
    return report


# ---------------------------------------------------------------------------
# collapse verification
# ---------------------------------------------------------------------------


def randomize_batchnorm(model: NEARModel, rng: np.random.Generator) -> None:
    """Give every batch-norm layer random affine parameters and running statistics."""

    def visit(m):
        if isinstance(m, BatchNorm):
            d = len(m.params["scale"])
            m.params["scale"][:] = rng.uniform(0.5, 2.0, d)
            m.params["shift"][:] = rng.normal(0.0, 0.5, d)
            m.buffers["running_mean"][:] = rng.normal(0.0, 0.5, d)
            m.buffers["running_var"][:] = rng.uniform(0.5, 2.0, d)
        for c in m.children.values():
            visit(c)

    visit(model)


def representations(model: NEARModel, graphs, features) -> np.ndarray:
    """Eval-mode h_G^(rep) for each graph (rows)."""
    batch = GraphBatch(list(graphs))
    rep, _ = model.forward(batch, np.concatenate(features), train=False)
    model._cache = None
    return rep.concatenated


def max_pairwise_linf(reps: np.ndarray) -> float:
    if len(reps) < 2:
        return 0.0
    return float(np.max(reps.max(axis=0) - reps.min(axis=0)))


def separation_pair(sample: list[FamilyGraph]) -> tuple[int, int] | None:
    """First two graphs (by index) with equal N and different triangle counts."""
    tri = [triangle_count(fg.graph) for fg in sample]
    for i, fg in enumerate(sample):
        for j in range(i):
            if sample[j].n_param == fg.n_param and tri[j] != tri[i]:
                return j, i
    return None


@dataclass
class CollapseReport:
    readout: str
    trials: int
    max_distance: list[float]
    cross_n_distance: list[float]
    separation: dict
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_lines(self) -> list[str]:
        scope = "all graphs" if self.readout == "mean" else "equal-N groups"
        lines = [
            f"readout={self.readout} trials={self.trials}",
            f"plain model: max L-inf distance over {scope} = {max(self.max_distance):.3e} (tol {COLLAPSE_TOL:g})",
        ]
        if self.cross_n_distance:
            lines.append(f"cross-N distance (informational): min {min(self.cross_n_distance):.3e}")
        for v, s in self.separation.items():
            if s.get("fraction_separated") is not None:
                lines.append(
                    f"NEAR-{v}: separation pair distance > {SEPARATION_TOL:g} in "
                    f"{s['fraction_separated']:.0%} of draws (median {s['median_distance']:.3e})"
                )
        lines.append("PASS" if self.passed else "FAIL")
        return lines


def verify_collapse(
    sample: list[FamilyGraph],
    config: ModelConfig,
    trials: int = 20,
    seed: int = 0,
    near_variants=("c", "e", "m", "h"),
    model: NEARModel | None = None,
) -> CollapseReport:
    """Check that a 1-hop model cannot tell family graphs apart.

    Mean readout: all of ``sample`` must share one representation.  Sum
    readout: graphs with equal N must.  Each NEAR variant is run on the
    same draws and its distance on a designated equal-N pair with different
    triangle counts is recorded.

    Passing a (e.g. trained) plain ``model`` checks that one parameter set
    instead of random draws; NEAR variants are then skipped.
    """
    for i, fg in enumerate(sample):
        problems = verify_family(fg)
        if problems:
            raise ValueError(f"graph {i} is not a family member: {problems}")
    if model is not None:
        config = model.cfg
    if config.variant != "none":
        raise ValueError("collapse is checked on the plain model; pass variant='none'")

    graphs = [fg.graph for fg in sample]
    feats = [initial_features(fg) for fg in sample]
    ns = np.array([fg.n_param for fg in sample])
    groups = [np.flatnonzero(ns == n) for n in np.unique(ns)]
    pair = separation_pair(sample)

    fixed = model
    if fixed is not None:
        trials, near_variants = 1, ()
    max_distance, cross, sep = [], [], {v: [] for v in near_variants}
    for t, rng in enumerate(_streams(seed, trials)):
        model_seed = int(rng.integers(2**63))
        if fixed is None:
            model = NEARModel(config, 2, 2, np.random.Generator(np.random.PCG64(model_seed)))
            randomize_batchnorm(model, rng)
        reps = representations(model, graphs, feats)
        if config.readout == "mean":
            max_distance.append(max_pairwise_linf(reps))
        else:
            max_distance.append(max(max_pairwise_linf(reps[g]) for g in groups))
            if len(groups) > 1:
                centers = np.array([reps[g[0]] for g in groups])
                gaps = [np.max(np.abs(centers[a] - centers[b])) for a in range(len(groups)) for b in range(a)]
                cross.append(float(min(gaps)))
        if pair is not None:
            for v in near_variants:
                nm = NEARModel(replace(config, variant=v), 2, 2, np.random.Generator(np.random.PCG64(model_seed)))
                randomize_batchnorm(nm, np.random.Generator(np.random.PCG64(model_seed + 1)))
                r = representations(nm, [graphs[pair[0]], graphs[pair[1]]], [feats[pair[0]], feats[pair[1]]])
                sep[v].append(float(np.max(np.abs(r[0] - r[1]))))

    separation = {}
    for v, ds in sep.items():
        separation[v] = {
            "pair": None if pair is None else list(pair),
            "distances": ds,
            "fraction_separated": float(np.mean(np.array(ds) > SEPARATION_TOL)) if ds else None,
            "median_distance": float(np.median(ds)) if ds else None,
        }
    passed = bool(max(max_distance) < COLLAPSE_TOL)
    return CollapseReport(config.readout, trials, max_distance, cross, separation, passed)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_curves(reports: dict, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (long format) and ``<path>.json`` for named reports."""
    if isinstance(reports, FoldReport):
        reports = {reports.meta.get("variant", "run"): reports}
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "epoch", "split", "loss", "accuracy"])
        for name, r in reports.items():
            for e in range(len(r.val_acc)):
                w.writerow([name, e, "train", repr(r.train_loss[e]), repr(r.train_acc[e])])
                w.writerow([name, e, "val", repr(r.val_loss[e]), repr(r.val_acc[e])])
    summary = {
        name: {
            "best_epoch": r.best_epoch,
            "best_val_acc": r.best_val_acc,
            "final_val_acc": r.val_acc[-1],
            "final_val_loss": r.val_loss[-1],
            "meta": r.meta,
        }
        for name, r in reports.items()
    }
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return csv_path, json_path


__all__ = [
    "BENCHMARK_GRID",
    "RunConfig",
    "FoldReport",
    "CVSummary",
    "CollapseReport",
    "TOY_CONFIG",
    "VARIANTS",
    "train",
    "evaluate",
    "kfold_cv",
    "cv_grid",
    "stratified_folds",
    "run_toy",
    "verify_collapse",
    "export_curves",
]
