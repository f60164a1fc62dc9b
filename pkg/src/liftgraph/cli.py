"""Command-line entry point: train, sweep-ratio, inspect, selftest.

Option precedence is flags > config file (--config, JSON) > defaults; the
fully merged run configuration is persisted next to the results so every run
is reproducible from its output directory alone. The global seed falls back
to the LIFTGRAPH_SEED environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .data import Dataset, DataFormatError, load_tu, make_folds, synth_cycles_vs_paths
from .graphs import Graph
from .model import ModelConfig, load_params, save_params, trace_pooling
from .pooling import PoolConfig, hierarchy_to_dot, hierarchy_to_json
from .training import (
    TrainConfig,
    cross_validate,
    evaluate,
    train_one,
    write_reports_csv,
    write_summary_json,
)

NORM_FLAG_TO_MODE = {"paper": "paper_literal", "symmetric": "symmetric_sqrt"}


@dataclasses.dataclass
class RunConfig:
    """Merged view of everything a run needs; serialized for provenance."""

    dataset: str | None = None
    dataset_name: str | None = None
    synthetic: str | None = None
    synth_graphs: int = 200
    synth_min: int = 6
    synth_max: int = 12
    degree_cap: int = 64
    ratio: float = 0.5
    lift_layers: int = 1
    lift_hops: int = 1
    norm: str = "symmetric"
    lam: float = 1.0
    gate: str = "on"
    folds: int = 10
    seeds: int = 1
    seed: int = 0
    hidden: int = 128
    blocks: int = 3
    dropout: float = 0.5
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    workers: int = 1
    out: str | None = None
    # recorded after data loading so inspect can rebuild the model
    in_dim: int | None = None
    num_classes: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _env_seed() -> int:
    raw = os.environ.get("LIFTGRAPH_SEED")
    return int(raw) if raw else 0


def _add_common_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="TU-format dataset directory")
    p.add_argument("--name", dest="dataset_name", help="dataset name prefix (defaults to directory name)")
    p.add_argument("--synthetic", choices=["cycles-paths"], help="use a generated dataset")
    p.add_argument("--synth-graphs", type=int, dest="synth_graphs")
    p.add_argument("--synth-min", type=int, dest="synth_min")
    p.add_argument("--synth-max", type=int, dest="synth_max")
    p.add_argument("--degree-cap", type=int, dest="degree_cap")
    p.add_argument("--ratio", type=float)
    p.add_argument("--lift-layers", type=int, dest="lift_layers")
    p.add_argument("--lift-hops", type=int, dest="lift_hops")
    p.add_argument("--norm", choices=["paper", "symmetric"])
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--gate", choices=["on", "off"])
    p.add_argument("--folds", type=int)
    p.add_argument("--seeds", type=int, help="number of random initializations")
    p.add_argument("--seed", type=int, help="base seed (env LIFTGRAPH_SEED fallback)")
    p.add_argument("--hidden", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (all artifacts land here)")
    p.add_argument("--config", help="JSON config file; flags override its values")


def _merge_config(args: argparse.Namespace) -> RunConfig:
    merged = dataclasses.asdict(RunConfig(seed=_env_seed()))
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise ValueError(f"{args.config}: unknown config keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return RunConfig.from_dict(merged)


def _load_dataset(rc: RunConfig) -> Dataset:
    if (rc.dataset is None) == (rc.synthetic is None):
        raise ValueError("exactly one of --dataset and --synthetic is required")
    if rc.synthetic:
        return synth_cycles_vs_paths(rc.synth_graphs, (rc.synth_min, rc.synth_max), rc.seed)
    if not os.path.isdir(rc.dataset):
        raise ValueError(f"dataset directory does not exist: {rc.dataset}")
    name = rc.dataset_name or os.path.basename(os.path.normpath(rc.dataset))
    return load_tu(rc.dataset, name, degree_cap=rc.degree_cap)


def _model_cfg(rc: RunConfig) -> ModelConfig:
    return ModelConfig(
        in_dim=rc.in_dim,
        num_classes=rc.num_classes,
        hidden_dim=rc.hidden,
        num_blocks=rc.blocks,
        pool=PoolConfig(
            ratio=rc.ratio,
            num_lift_layers=rc.lift_layers,
            gate_with_scores=rc.gate == "on",
            lift_hops=rc.lift_hops,
        ),
        dropout_rate=rc.dropout,
        norm_mode=NORM_FLAG_TO_MODE[rc.norm],
        lam=rc.lam,
    )


def _train_cfg(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=rc.lr,
        weight_decay=rc.weight_decay,
        batch_size=rc.batch_size,
        max_epochs=rc.max_epochs,
        patience=rc.patience,
        seed=rc.seed,
    )


def _prepare_out(rc: RunConfig) -> str:
    if not rc.out:
        raise ValueError("--out directory is required")
    os.makedirs(rc.out, exist_ok=True)
    return rc.out


def cmd_train(rc: RunConfig) -> int:
    ds = _load_dataset(rc)
    rc.in_dim, rc.num_classes = ds.feature_dim, ds.num_classes
    out_dir = _prepare_out(rc)
    model_cfg, train_cfg = _model_cfg(rc), _train_cfg(rc)
    seeds = [rc.seed + i for i in range(rc.seeds)]

    if rc.folds >= 2:
        summary, reports, best_params = cross_validate(
            ds, rc.folds, seeds, model_cfg, train_cfg, workers=rc.workers
        )
    else:
        # single run: carve val/test folds out of a fixed 5-way stratified split
        plan = make_folds(ds, 5, rc.seed)
        val_idx, test_idx = plan.fold_indices(0), plan.fold_indices(1)
        train_idx = np.setdiff1d(np.arange(len(ds.graphs)), np.concatenate([val_idx, test_idx]))
        best_params, report = train_one(
            [ds.graphs[i] for i in train_idx], [ds.graphs[i] for i in val_idx], model_cfg, train_cfg
        )
        report.fold = 0
        report.test_accuracy = evaluate(best_params, [ds.graphs[i] for i in test_idx], model_cfg)
        reports = [report]
        summary = {"mean": report.test_accuracy, "std": 0.0, "n_runs": 1}

    with open(os.path.join(out_dir, "run_config.json"), "w") as f:
        f.write(rc.to_json() + "\n")
    write_reports_csv(reports, os.path.join(out_dir, "reports.csv"))
    write_summary_json(summary, os.path.join(out_dir, "summary.json"))
    save_params(best_params, os.path.join(out_dir, "model.params"))
    print(f"test accuracy: {summary['mean']:.4f} ± {summary['std']:.4f} over {summary['n_runs']} runs")
    return 0


def cmd_sweep_ratio(rc: RunConfig, ratios: list[float]) -> int:
    if not ratios:
        raise ValueError("--ratios must list at least one value")
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ValueError(f"pooling ratio must be in (0, 1], got {r}")
    ds = _load_dataset(rc)
    rc.in_dim, rc.num_classes = ds.feature_dim, ds.num_classes
    out_dir = _prepare_out(rc)
    train_cfg = _train_cfg(rc)
    seeds = [rc.seed + i for i in range(rc.seeds)]
    lift_layers = rc.lift_layers if rc.lift_layers > 0 else 1

    rows = []
    for ratio in ratios:
        cells = {}
        for tag, layers in (("lift", lift_layers), ("baseline", 0)):
            rc_variant = dataclasses.replace(rc, ratio=ratio, lift_layers=layers)
            summary, _, _ = cross_validate(
                ds, rc.folds, seeds, _model_cfg(rc_variant), train_cfg, workers=rc.workers
            )
            cells[tag] = summary
        rows.append((ratio, cells))
        print(
            f"ratio {ratio}: lift {cells['lift']['mean']:.4f} ± {cells['lift']['std']:.4f}  "
            f"baseline {cells['baseline']['mean']:.4f} ± {cells['baseline']['std']:.4f}"
        )

    with open(os.path.join(out_dir, "run_config.json"), "w") as f:
        f.write(rc.to_json() + "\n")
    import csv

    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ratio", "lift_mean", "lift_std", "baseline_mean", "baseline_std"])
        for ratio, cells in rows:
            w.writerow(
                [
                    repr(ratio),
                    repr(cells["lift"]["mean"]),
                    repr(cells["lift"]["std"]),
                    repr(cells["baseline"]["mean"]),
                    repr(cells["baseline"]["std"]),
                ]
            )
    return 0


def _inspect_graph(spec: str, rc: RunConfig) -> Graph:
    """Build the graph to inspect from 'cycle:N' / 'path:N'."""
    kind, _, size = spec.partition(":")
    if kind not in ("cycle", "path") or not size.isdigit():
        raise ValueError(f"--graph expects cycle:N or path:N, got {spec!r}")
    n = int(size)
    if n < 3:
        raise ValueError("inspect graphs need at least 3 nodes")
    edges = [(i, i + 1, 1.0) for i in range(n - 1)]
    deg = np.full(n, 2)
    if kind == "cycle":
        edges.append((0, n - 1, 1.0))
    else:
        deg[0] = deg[n - 1] = 1
    feats = np.zeros((n, rc.in_dim))
    feats[np.arange(n), np.minimum(deg, rc.in_dim - 1)] = 1.0
    return Graph.build(n, edges, feats)


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg_path = args.config or os.path.join(os.path.dirname(os.path.abspath(args.params)), "run_config.json")
    if not os.path.isfile(cfg_path):
        raise ValueError(f"no run config found at {cfg_path}; pass --config")
    with open(cfg_path) as f:
        rc = RunConfig.from_dict(json.load(f))
    if rc.in_dim is None or rc.num_classes is None:
        raise ValueError(f"{cfg_path} does not record in_dim/num_classes")
    model_cfg = _model_cfg(rc)
    params = load_params(args.params, model_cfg)

    if args.graph:
        graph = _inspect_graph(args.graph, rc)
    elif args.dataset:
        name = args.dataset_name or os.path.basename(os.path.normpath(args.dataset))
        ds = load_tu(args.dataset, name, degree_cap=rc.degree_cap)
        if not 0 <= args.index < len(ds.graphs):
            raise ValueError(f"--index {args.index} out of range for {len(ds.graphs)} graphs")
        graph = ds.graphs[args.index]
    else:
        raise ValueError("inspect needs --graph cycle:N|path:N or --dataset DIR [--index I]")

    os.makedirs(args.out, exist_ok=True)
    levels = trace_pooling(graph, params, model_cfg)
    with open(os.path.join(args.out, "hierarchy.json"), "w") as f:
        f.write(hierarchy_to_json(levels) + "\n")
    with open(os.path.join(args.out, "hierarchy.dot"), "w") as f:
        f.write(hierarchy_to_dot(levels))
    sizes = [levels[0]["num_nodes"], *(len(lv["preserved"]) for lv in levels)]
    print("pooling hierarchy:", " -> ".join(str(s) for s in sizes))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liftgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train with k-fold cross-validation")
    _add_common_options(p_train)

    p_sweep = sub.add_parser("sweep-ratio", help="compare lift vs baseline across pooling ratios")
    _add_common_options(p_sweep)
    p_sweep.add_argument("--ratios", required=True, help="comma-separated list, e.g. 0.1,0.3,0.5")

    p_inspect = sub.add_parser("inspect", help="dump the pooling hierarchy of one graph")
    p_inspect.add_argument("--params", required=True, help="saved model.params file")
    p_inspect.add_argument("--config", help="run_config.json (default: next to --params)")
    p_inspect.add_argument("--graph", help="cycle:N or path:N")
    p_inspect.add_argument("--dataset", help="TU dataset directory to pick a graph from")
    p_inspect.add_argument("--name", dest="dataset_name")
    p_inspect.add_argument("--index", type=int, default=0)
    p_inspect.add_argument("--out", required=True)

    sub.add_parser("selftest", help="run the property suites")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_merge_config(args))
        if args.command == "sweep-ratio":
            ratios = [float(t) for t in args.ratios.split(",") if t.strip()]
            return cmd_sweep_ratio(_merge_config(args), ratios)
        if args.command == "inspect":
            return cmd_inspect(args)
        if args.command == "selftest":
            from .selftest import run_all

            return 1 if run_all() else 0
    except (ValueError, OSError, DataFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
