"""Command-line entry point.

Exit codes:

    0  success
    2  usage error (bad flags)
    3  a checked assertion failed (verify-family, verify-collapse)
    4  input error (missing or malformed files)

Progress goes to stderr; results go to files under the output directory,
which defaults to ``$NEARNET_OUT/<command>-<config hash>`` (``NEARNET_OUT``
defaults to ``./runs``).  Every command writes ``manifest.json`` there.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data import DatasetFormatError, encode_node_features, load_tu_dataset
from .graph import GraphError, read_edge_list, write_edge_list
from .harness import (
    BENCHMARK_GRID,
    TOY_CONFIG,
    FoldReport,
    RunConfig,
    cv_grid,
    export_curves,
    kfold_cv,
    run_toy,
    verify_collapse,
)
from .layers import VARIANTS, ModelConfig
from .synth import LABELERS, FamilyGraph, SamplerConfig, sample_dataset, verify_family

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ASSERTION = 3
EXIT_INPUT = 4

log = logging.getLogger("nearnet")


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# output directory and manifest
# ---------------------------------------------------------------------------


def _settings(args) -> dict:
    skip = {"func", "out", "verbose"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def output_dir(args) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        root = Path(os.environ.get("NEARNET_OUT", "runs"))
        out = root / f"{args.command}-{config_hash(_settings(args))}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, args, argv, extra: dict | None = None) -> Path:
    import sklearn

    if kernels.HAVE_NUMBA:
        import numba

        numba_version = numba.__version__
    else:
        numba_version = None
    settings = _settings(args)
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "settings": settings,
        "config_hash": config_hash(settings),
        "seed": settings.get("seed"),
        "backend": kernels.BACKEND,
        "versions": {
            "nearnet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba_version,
            "scikit-learn": sklearn.__version__,
        },
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


# ---------------------------------------------------------------------------
# family dataset on disk
# ---------------------------------------------------------------------------
#
#   graphs/graph_00000.txt   edge list ("n m" header, then "u v" rows, 0-based)
#   colors.txt               one line per graph: node colors as a 0/1 string
#   labels.tsv               graph_id  n_param  artfcc  artfcycle6


def save_family(sample: list[FamilyGraph], root: Path) -> None:
    gdir = root / "graphs"
    gdir.mkdir(parents=True, exist_ok=True)
    colors, rows = [], ["graph_id\tn_param\tartfcc\tartfcycle6"]
    for i, fg in enumerate(sample):
        write_edge_list(fg.graph, gdir / f"graph_{i:05d}.txt")
        colors.append("".join(str(int(c)) for c in fg.colors))
        labels = [LABELERS[t](fg.graph) for t in ("artfcc", "artfcycle6")]
        rows.append(f"{i}\t{fg.n_param}\t{labels[0]}\t{labels[1]}")
    (root / "colors.txt").write_text("\n".join(colors) + "\n")
    (root / "labels.tsv").write_text("\n".join(rows) + "\n")


def load_family(root: Path) -> list[FamilyGraph]:
    labels_path, colors_path = root / "labels.tsv", root / "colors.txt"
    for p in (labels_path, colors_path):
        if not p.exists():
            raise InputError(f"missing {p}")
    rows = [ln.split("\t") for ln in labels_path.read_text().splitlines()[1:] if ln.strip()]
    colors = [ln.strip() for ln in colors_path.read_text().splitlines() if ln.strip()]
    if len(rows) != len(colors):
        raise InputError(f"{labels_path} lists {len(rows)} graphs, {colors_path} has {len(colors)}")
    out = []
    for (gid, n_param, *_), col in zip(rows, colors):
        path = root / "graphs" / f"graph_{int(gid):05d}.txt"
        if not path.exists():
            raise InputError(f"missing {path}")
        try:
            g = read_edge_list(path)
        except GraphError as exc:
            raise InputError(str(exc)) from None
        if len(col) != g.num_nodes or set(col) - {"0", "1"}:
            raise InputError(f"{colors_path}: bad color string for graph {gid}")
        out.append(FamilyGraph(g, np.array([int(c) for c in col], dtype=np.int8), int(n_param)))
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args, argv) -> int:
    out = output_dir(args)
    sample = sample_dataset(SamplerConfig(args.count, args.mean, args.seed))
    save_family(sample, out)
    log.info("wrote %d graphs to %s", len(sample), out)
    write_manifest(out, args, argv, {"num_graphs": len(sample)})
    return EXIT_OK


def cmd_verify_family(args, argv) -> int:
    sample = load_family(Path(args.input))
    failures = {}
    for i, fg in enumerate(sample):
        problems = verify_family(fg)
        if problems:
            failures[i] = problems
    out = output_dir(args)
    result = {"num_graphs": len(sample), "num_failed": len(failures), "failures": failures}
    (out / "verify_family.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    write_manifest(out, args, argv, {"passed": not failures})
    log.info("%d/%d graphs pass", len(sample) - len(failures), len(sample))
    for i, msgs in list(failures.items())[:10]:
        log.info("graph %d: %s", i, "; ".join(msgs))
    return EXIT_OK if not failures else EXIT_ASSERTION


def cmd_verify_collapse(args, argv) -> int:
    """``--variant none`` asserts collapse; a NEAR variant asserts it separates the designated pair."""
    sample = load_family(Path(args.input))
    near = ("c", "e", "m", "h") if args.variant == "none" else (args.variant,)
    cfg = ModelConfig(num_layers=args.layers, hidden_dim=args.hidden, readout=args.readout)
    bad = [i for i, fg in enumerate(sample) if verify_family(fg)]
    if bad:
        raise InputError(f"{len(bad)} graphs are not family members (first: {bad[0]}); run verify-family")
    report = verify_collapse(sample, cfg, trials=args.trials, seed=args.seed, near_variants=near)
    if args.variant == "none":
        passed = report.passed
    else:
        frac = report.separation[args.variant]["fraction_separated"]
        passed = frac is not None and frac >= args.min_separated
    out = output_dir(args)
    (out / "collapse_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    write_manifest(out, args, argv, {"passed": passed})
    for line in report.summary_lines()[:-1]:
        print(line)
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_ASSERTION


def cmd_train_toy(args, argv) -> int:
    out = output_dir(args)
    log.info("training %s on %s, seed %d, %d epochs", args.variant, args.task, args.seed, args.epochs)
    config = TOY_CONFIG if args.config is None else _load_run_config(args.config)
    report = run_toy(args.task, args.variant, args.seed, args.epochs, args.count, args.mean, config)
    report.model = None
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    export_curves({args.variant: report}, out / "curves")
    write_manifest(out, args, argv, {"best_val_acc": report.best_val_acc, "best_epoch": report.best_epoch})
    log.info("best val acc %.3f at epoch %d", report.best_val_acc, report.best_epoch)
    return EXIT_OK


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"missing config file {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _load_run_config(path) -> RunConfig:
    return _run_config(_read_json(path), path)


def _run_config(data: dict, source) -> RunConfig:
    known = {"model", "epochs", "batch_size", "lr", "decay", "seed", "folds"}
    try:
        return RunConfig.from_dict({k: v for k, v in data.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: {exc}") from None


def cmd_cv_bench(args, argv) -> int:
    file_cfg = _read_json(args.config) if args.config else {}
    base = _run_config(file_cfg, args.config)
    dataset = args.dataset or file_cfg.get("dataset")
    directory = args.dir or file_cfg.get("dir") or os.environ.get("NEARNET_TU_DIR", "data")
    variant = args.variant or file_cfg.get("variant", "c")
    recipe = args.recipe or file_cfg.get("recipe", "auto")
    grid_name = args.grid or file_cfg.get("grid", "full")
    if not dataset:
        raise InputError("no dataset named (use --dataset or a config file)")
    try:
        raw = load_tu_dataset(directory, dataset)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    except DatasetFormatError as exc:
        raise InputError(str(exc)) from None
    bundle = encode_node_features(raw, recipe)
    base = replace(base, model=replace(base.model, variant=variant))
    if args.epochs is not None:
        base = replace(base, epochs=args.epochs)
    if args.folds is not None:
        base = replace(base, folds=args.folds)
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    out = output_dir(args)
    log.info("%s: %d graphs, %d features, variant %s", dataset, len(bundle), bundle.feature_dim, variant)
    if grid_name == "full":
        grid = file_cfg.get("grid_values", BENCHMARK_GRID)
        (point, best), results = cv_grid(base, bundle, grid, jobs=args.jobs)
    else:
        point, best = {}, kfold_cv(base, bundle, jobs=args.jobs)
        results = [(point, best)]
    row = {
        "dataset": dataset,
        "variant": variant,
        "mean": best.mean,
        "std": best.std,
        "best_epoch": best.best_epoch,
        "grid_point": point,
        "num_graphs": len(bundle),
        "recipe": bundle.meta["recipe"],
    }
    (out / "summary.json").write_text(
        json.dumps({"best": row, "grid": [{"point": p, "mean": s.mean, "std": s.std} for p, s in results]}, indent=2)
    )
    with open(out / "summary.csv", "w") as fh:
        fh.write("dataset,variant,mean,std,best_epoch\n")
        fh.write(f"{dataset},{variant},{best.mean!r},{best.std!r},{best.best_epoch}\n")
    write_manifest(out, args, argv, {"result": row})
    label = "GIN-0" if variant == "none" else f"NEAR-{variant}"
    print(f"{dataset}\t{label}\t{100 * best.mean:.1f} ({100 * best.std:.1f})")
    return EXIT_OK


def cmd_export(args, argv) -> int:
    reports = {}
    for path in args.input:
        p = Path(path)
        if p.is_dir():
            p = p / "report.json"
        if not p.exists():
            raise InputError(f"missing report {p}")
        r = FoldReport.from_dict(json.loads(p.read_text()))
        name = r.meta.get("variant", p.parent.name)
        if name in reports:
            name = f"{name}-{len(reports)}"
        reports[name] = r
    out = output_dir(args)
    csv_path, json_path = export_curves(reports, out / "curves")
    write_manifest(out, args, argv, {"files": [csv_path.name, json_path.name]})
    log.info("wrote %s and %s", csv_path, json_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nearnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=None, help="output directory (default: under $NEARNET_OUT)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("generate", help="sample a synthetic family dataset"))
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--mean", type=float, default=2.0, help="Poisson mean of N - 1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("verify-family", help="check every graph of a generated dataset"))
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_verify_family)

    p = common(sub.add_parser("verify-collapse", help="plain-model collapse and NEAR separation checks"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--readout", choices=("mean", "sum"), default="mean")
    p.add_argument("--variant", choices=VARIANTS, default="none")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--min-separated", type=float, default=0.95, help="required fraction for a NEAR variant")
    p.set_defaults(func=cmd_verify_collapse)

    p = common(sub.add_parser("train-toy", help="one toy-task training run"))
    p.add_argument("--task", choices=sorted(LABELERS), required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--mean", type=float, default=2.0)
    p.add_argument("--config", default=None, help="JSON run config overriding the toy defaults")
    p.set_defaults(func=cmd_train_toy)

    p = common(sub.add_parser("cv-bench", help="k-fold CV on a TU-format benchmark"))
    p.add_argument("--dataset", default=None)
    p.add_argument("--dir", default=None, help="dataset root (default: $NEARNET_TU_DIR or ./data)")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--grid", choices=("full", "none"), default=None)
    p.add_argument("--recipe", default=None, help="feature blocks, e.g. labels+degree (default: auto)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None, help="JSON run config")
    p.set_defaults(func=cmd_cv_bench)

    p = common(sub.add_parser("export", help="merge saved reports into curve CSV/JSON"))
    p.add_argument("--in", dest="input", nargs="+", required=True, help="report.json files or run directories")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, argv)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ValueError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
