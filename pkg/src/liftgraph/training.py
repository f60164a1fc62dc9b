"""Loss-driven training loop, AdamW optimizer, and the k-fold x multi-seed
evaluation harness. Fully deterministic given (dataset, configs, seeds)."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import math

import numpy as np

from .autodiff import backward, softmax_cross_entropy
from .data import Dataset, make_folds
from .graphs import Graph, batch_block_diagonal
from .model import ModelConfig, ModelParams, forward, init_params

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 0
    eval_metric: str = "accuracy"

    def __post_init__(self):
        if min(self.lr, self.weight_decay) < 0 or min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ValueError("training config values must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.eval_metric != "accuracy":
            raise ValueError(f"unsupported eval metric {self.eval_metric!r}")


@dataclasses.dataclass
class FoldReport:
    fold: int
    seed: int
    best_epoch: int
    test_accuracy: float | None
    val_accuracy: float
    train_curve: list[float]


@dataclasses.dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.values.items()},
            v={k: np.zeros_like(a) for k, a in params.values.items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    t: int,
) -> tuple[ModelParams, AdamState]:
    """One AdamW step (decoupled weight decay), bias-corrected, t >= 1."""
    new_vals: dict[str, np.ndarray] = {}
    for name, p in params.values.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1 - ADAM_BETA2**t)
        new_vals[name] = p - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * p)
    return ModelParams(new_vals), state


def _batch(graphs: list[Graph]) -> tuple[Graph, np.ndarray, np.ndarray]:
    bg, mem = batch_block_diagonal(graphs)
    labels = np.array([g.label for g in graphs], dtype=np.intp)
    return bg, mem, labels


def evaluate(params: ModelParams, graphs: list[Graph], cfg: ModelConfig, batch_size: int = 64) -> float:
    """Classification accuracy, deterministic (argmax breaks ties low)."""
    correct = 0
    for lo in range(0, len(graphs), batch_size):
        chunk = graphs[lo : lo + batch_size]
        bg, mem, labels = _batch(chunk)
        res = forward(bg, mem, params, cfg, train_mode=False)
        correct += int((np.argmax(res.logits.values, axis=1) == labels).sum())
    return correct / len(graphs)


def train_one(
    train_graphs: list[Graph],
    val_graphs: list[Graph],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[ModelParams, FoldReport]:
    """Train with seeded shuffling and early stopping on validation accuracy.

    Returns the parameters of the best-validation epoch (ties keep the
    earlier epoch). The report's test_accuracy is left unset; the harness
    fills it after evaluating on the held-out fold.
    """
    if not train_graphs or not val_graphs:
        raise ValueError("train and validation splits must be non-empty")
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, seed=train_cfg.seed)
    state = AdamState.zeros_like(params)
    t = 0
    best_params = params.copy()
    best_acc = -1.0
    best_epoch = 0
    curve: list[float] = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train_graphs))
        losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = [train_graphs[i] for i in order[lo : lo + train_cfg.batch_size]]
            bg, mem, labels = _batch(chunk)
            res = forward(bg, mem, params, model_cfg, train_mode=True, rng=rng)
            loss = softmax_cross_entropy(res.logits, labels)
            lv = float(loss.values[0, 0])
            if not math.isfinite(lv):
                raise TrainingDiverged(
                    f"non-finite loss {lv} at epoch {epoch}, batch starting at {lo} "
                    f"(lr={train_cfg.lr}, batch_size={train_cfg.batch_size})"
                )
            losses.append(lv)
            grads_by_node = backward(res.tape, loss)
            grads = {
                name: grads_by_node[leaf.node_id].values
                for name, leaf in res.leaves.items()
                if leaf.node_id in grads_by_node
            }
            t += 1
            params, state = adam_step(params, grads, state, train_cfg.lr, train_cfg.weight_decay, t)
        curve.append(float(np.mean(losses)))
        val_acc = evaluate(params, val_graphs, model_cfg)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = params.copy()
        if epoch - best_epoch >= train_cfg.patience:
            break
    report = FoldReport(
        fold=-1,
        seed=train_cfg.seed,
        best_epoch=best_epoch,
        test_accuracy=None,
        val_accuracy=best_acc,
        train_curve=curve,
    )
    return best_params, report


def _run_fold_seed(args) -> tuple[FoldReport, ModelParams]:
    ds, plan, fold, seed, model_cfg, train_cfg = args
    test_idx = plan.fold_indices(fold)
    val_idx = plan.fold_indices((fold + 1) % plan.k)
    train_idx = np.setdiff1d(np.arange(len(ds.graphs)), np.concatenate([test_idx, val_idx]))
    cfg = dataclasses.replace(train_cfg, seed=seed)
    params, report = train_one(
        [ds.graphs[i] for i in train_idx],
        [ds.graphs[i] for i in val_idx],
        model_cfg,
        cfg,
    )
    report.fold = fold
    report.test_accuracy = evaluate(params, [ds.graphs[i] for i in test_idx], model_cfg)
    return report, params


def cross_validate(
    ds: Dataset,
    k: int,
    seeds: list[int],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    workers: int = 1,
    fold_seed: int | None = None,
) -> tuple[dict, list[FoldReport], ModelParams]:
    """Rotating k-2/1/1 train/val/test over all (fold, seed) pairs.

    Returns ({mean, std, n_runs}, reports, params of the best-test run).
    Independent runs may execute in parallel; results are ordered by
    (fold, seed) either way.
    """
    plan = make_folds(ds, k, fold_seed if fold_seed is not None else train_cfg.seed)
    jobs = [(ds, plan, fold, seed, model_cfg, train_cfg) for fold in range(k) for seed in seeds]
    reports: list[FoldReport] = []
    best_params: ModelParams | None = None
    best_acc = -1.0
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_fold_seed, jobs)
            for report, params in results:
                reports.append(report)
                if report.test_accuracy > best_acc:
                    best_acc, best_params = report.test_accuracy, params
    else:
        for job in jobs:
            report, params = _run_fold_seed(job)
            reports.append(report)
            if report.test_accuracy > best_acc:
                best_acc, best_params = report.test_accuracy, params
    accs = np.array([r.test_accuracy for r in reports])
    summary = {"mean": float(accs.mean()), "std": float(accs.std()), "n_runs": len(reports)}
    return summary, reports, best_params


def write_reports_csv(reports: list[FoldReport], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fold", "seed", "best_epoch", "test_accuracy"])
        for r in reports:
            w.writerow([r.fold, r.seed, r.best_epoch, repr(r.test_accuracy)])


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
