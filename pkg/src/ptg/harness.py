"""Benchmark protocol: generate domains, hold one out, sweep, select, report.

For every held-out domain, repetition and hyperparameter grid point a fresh
training run is scored on the pooled validation splits of the training
domains (model selection never sees the held-out domain) and on the held-out
domain itself.  Per-run seeds derive from (base seed, algorithm, held-out
domain, grid index, repetition) through the documented 64-bit mix in
seeding.py, so any row can be reproduced in isolation and a repeated run
reproduces every row bitwise; wall-clock columns are the one exception.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .datasets import (
    DomainDataset,
    DomainSpec,
    apply_stats,
    feature_stats,
    gen_rotated_moons,
    gen_spurious_blobs,
    split_train_val,
)
from .nets import NetworkSpec, TrainingDiverged
from .seeding import derive_seed
from .training import ALGORITHMS, TrainConfig, accuracy, train_algorithm

RESULTS_HEADER = ("algorithm", "test_domain", "seed", "alpha", "beta", "val_acc", "test_acc", "wall_ms")

DEFAULT_ALPHA_GRID = (0.05, 0.1, 0.5)
DEFAULT_BETA_GRID = (0.05, 0.1)

FAMILIES = ("spurious_blobs", "rotated_moons")


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark: a data family, its domains, and the sweep protocol.

    test_domain = None runs full leave-one-domain-out; naming a domain pins
    it as the single held-out domain.  selection chooses how the winning grid
    point is picked: "training_domain" (default) scores on pooled training
    validation splits, "leave_one_out" scores each candidate by holding out
    each training domain in turn.
    """

    family: str
    domains: tuple[DomainSpec, ...]
    algorithms: tuple[str, ...] = ALGORITHMS
    test_domain: str | None = None
    n_seeds: int = 3
    base_seed: int = 0
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    selection: str = "training_domain"
    split_ratio: float = 0.8
    d_inv: int = 5
    d_spur: int = 5
    feat_hidden: tuple[int, ...] = (16, 8)
    cls_hidden: tuple[int, ...] = (16,)
    n_classes: int = 2
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if len(self.domains) < 2:
            raise ValueError("need at least two domains")
        ids = [d.domain_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ValueError("domain ids must be unique")
        if self.test_domain is not None and self.test_domain not in ids:
            raise ValueError(f"test_domain {self.test_domain!r} is not one of {ids}")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; expected from {ALGORITHMS}")
        if len(self.algorithms) == 0:
            raise ValueError("need at least one algorithm")
        if self.n_seeds < 1:
            raise ValueError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if len(self.alpha_grid) == 0 or len(self.beta_grid) == 0:
            raise ValueError("alpha and beta grids must be non-empty")
        if any(a < 0 for a in self.alpha_grid) or any(not b > 0 for b in self.beta_grid):
            raise ValueError("alpha grid must be >= 0 and beta grid > 0")
        if self.selection not in ("training_domain", "leave_one_out"):
            raise ValueError(f"unknown selection mode {self.selection!r}")

    @property
    def feature_dim(self) -> int:
        return self.d_inv + self.d_spur if self.family == "spurious_blobs" else 2

    def network_specs(self) -> tuple[NetworkSpec, NetworkSpec]:
        feat = NetworkSpec((self.feature_dim,) + tuple(self.feat_hidden))
        cls = NetworkSpec((self.feat_hidden[-1],) + tuple(self.cls_hidden) + (self.n_classes,))
        return feat, cls

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "domains": [d.to_json() for d in self.domains],
            "algorithms": list(self.algorithms),
            "test_domain": self.test_domain,
            "n_seeds": self.n_seeds,
            "base_seed": self.base_seed,
            "alpha_grid": list(self.alpha_grid),
            "beta_grid": list(self.beta_grid),
            "selection": self.selection,
            "split_ratio": self.split_ratio,
            "d_inv": self.d_inv,
            "d_spur": self.d_spur,
            "feat_hidden": list(self.feat_hidden),
            "cls_hidden": list(self.cls_hidden),
            "n_classes": self.n_classes,
            "train": self.train.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        domains = tuple(DomainSpec.from_json(d) for d in obj.pop("domains"))
        train = TrainConfig.from_json(obj.pop("train", {}))
        for key in ("algorithms", "alpha_grid", "beta_grid", "feat_hidden", "cls_hidden"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return ExperimentConfig(domains=domains, train=train, **obj)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(json.load(fh))


def save_config(path, config: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
        fh.write("\n")


def default_benchmark_config() -> ExperimentConfig:
    """The shipped spurious-blobs benchmark: three aligned training domains,
    one held-out domain with the correlation reversed."""
    domains = (
        DomainSpec("train_a", 4000, spurious_correlation=0.95),
        DomainSpec("train_b", 4000, spurious_correlation=0.9),
        DomainSpec("train_c", 4000, spurious_correlation=0.8),
        DomainSpec("flip", 4000, spurious_correlation=-0.9),
    )
    return ExperimentConfig(
        family="spurious_blobs",
        domains=domains,
        test_domain="flip",
        feat_hidden=(32, 16),
        train=TrainConfig(
            base_lr=5e-3,
            outer_iterations=1000,
            kl_weight=1e-4,
        ),
    )


@dataclass(frozen=True)
class ResultRow:
    """One training run.  alpha/beta are None where the algorithm has no such
    knob; val_acc/test_acc are None when the run aborted (scored -inf at
    selection time)."""

    algorithm: str
    test_domain: str
    seed: int
    alpha: float | None
    beta: float | None
    val_acc: float | None
    test_acc: float | None
    wall_ms: int


def grid_for(algorithm: str, config: ExperimentConfig) -> list[tuple[float | None, float | None]]:
    """The (alpha, beta) sweep of one algorithm, in canonical ascending order."""
    if algorithm in ("erm", "erm_bayesian"):
        return [(None, None)]
    if algorithm == "ptg":
        return [(a, None) for a in sorted(config.alpha_grid)]
    if algorithm == "ptg_lite":
        return [(a, b) for a in sorted(config.alpha_grid) for b in sorted(config.beta_grid)]
    raise ValueError(f"unknown algorithm {algorithm!r}")


def generate_domains(config: ExperimentConfig, seed: int) -> dict[str, DomainDataset]:
    if config.family == "spurious_blobs":
        data = gen_spurious_blobs(config.domains, config.d_inv, config.d_spur, seed, config.n_classes)
    else:
        data = gen_rotated_moons(config.domains, seed)
    return {d.domain_id: d for d in data}


def _prepare_split(
    config: ExperimentConfig, test_domain: str, rep: int
) -> tuple[list[DomainDataset], list[DomainDataset], DomainDataset]:
    """Generate data for one repetition and standardize by the statistics of
    the pooled training splits only."""
    data_seed = derive_seed(config.base_seed, "data", test_domain, rep)
    by_id = generate_domains(config, data_seed)
    train_ids = sorted(i for i in by_id if i != test_domain)
    trains, vals = [], []
    for i in train_ids:
        tr, va = split_train_val(
            by_id[i], config.split_ratio, derive_seed(data_seed, "split", i)
        )
        trains.append(tr)
        vals.append(va)
    mean, std = feature_stats(np.concatenate([t.x for t in trains], axis=0))
    scale = lambda ds: DomainDataset(
        ds.domain_id, apply_stats(ds.x, mean, std), ds.y, ds.invariant_cols, ds.spurious_cols
    )
    return [scale(t) for t in trains], [scale(v) for v in vals], scale(by_id[test_domain])


def _run_one(
    config: ExperimentConfig,
    algorithm: str,
    test_domain: str,
    rep: int,
    grid_index: int,
    alpha: float | None,
    beta: float | None,
    trains: list[DomainDataset],
    vals: list[DomainDataset],
    test: DomainDataset,
) -> ResultRow:
    feat_spec, cls_spec = config.network_specs()
    run_seed = derive_seed(config.base_seed, algorithm, test_domain, grid_index, rep)
    cfg = replace(
        config.train,
        seed=run_seed,
        alpha=config.train.alpha if alpha is None else alpha,
        beta=config.train.beta if beta is None else beta,
    )
    t0 = time.perf_counter()
    try:
        feat, cls, _ = train_algorithm(algorithm, trains, feat_spec, cls_spec, cfg)
    except TrainingDiverged:
        wall = int((time.perf_counter() - t0) * 1000)
        return ResultRow(algorithm, test_domain, rep, alpha, beta, None, None, wall)
    eval_rng = np.random.default_rng(derive_seed(run_seed, "eval"))
    if config.selection == "leave_one_out" and len(trains) >= 2:
        val_acc = _inner_holdout_score(
            config, algorithm, trains, vals, feat_spec, cls_spec, cfg, run_seed
        )
    else:
        val_x = np.concatenate([v.x for v in vals], axis=0)
        val_y = np.concatenate([v.y for v in vals], axis=0)
        val_acc = accuracy(feat, cls, val_x, val_y, cfg.mc_eval_samples, eval_rng)
    test_acc = accuracy(feat, cls, test.x, test.y, cfg.mc_eval_samples, eval_rng)
    wall = int((time.perf_counter() - t0) * 1000)
    return ResultRow(algorithm, test_domain, rep, alpha, beta, val_acc, test_acc, wall)


def _inner_holdout_score(
    config: ExperimentConfig,
    algorithm: str,
    trains: list[DomainDataset],
    vals: list[DomainDataset],
    feat_spec: NetworkSpec,
    cls_spec: NetworkSpec,
    cfg: TrainConfig,
    run_seed: int,
) -> float | None:
    """Leave-one-out selection score: retrain without each training domain in
    turn and average accuracy on the withheld one (train and val rows)."""
    scores = []
    for j, held in enumerate(trains):
        inner = [t for k, t in enumerate(trains) if k != j]
        inner_cfg = replace(cfg, seed=derive_seed(run_seed, "inner", held.domain_id))
        try:
            feat, cls, _ = train_algorithm(algorithm, inner, feat_spec, cls_spec, inner_cfg)
        except TrainingDiverged:
            return None
        x = np.concatenate([held.x, vals[j].x], axis=0)
        y = np.concatenate([held.y, vals[j].y], axis=0)
        rng = np.random.default_rng(derive_seed(inner_cfg.seed, "eval"))
        scores.append(accuracy(feat, cls, x, y, cfg.mc_eval_samples, rng))
    return float(np.mean(scores))


def run_experiment(config: ExperimentConfig, progress=None) -> list[ResultRow]:
    """All rows for the configured protocol, sorted canonically.

    Full leave-one-out when test_domain is None, otherwise the single named
    held-out domain.  progress, if given, is called with each finished row.
    """
    if config.test_domain is None:
        held_out = [d.domain_id for d in config.domains]
    else:
        held_out = [config.test_domain]
    rows = []
    for test_domain in held_out:
        for rep in range(config.n_seeds):
            trains, vals, test = _prepare_split(config, test_domain, rep)
            for algorithm in config.algorithms:
                for gi, (alpha, beta) in enumerate(grid_for(algorithm, config)):
                    row = _run_one(
                        config, algorithm, test_domain, rep, gi, alpha, beta, trains, vals, test
                    )
                    if progress is not None:
                        progress(row)
                    rows.append(row)
    return sort_rows(rows)


def sort_rows(rows: Sequence[ResultRow]) -> list[ResultRow]:
    key = lambda r: (
        r.algorithm,
        r.test_domain,
        -1.0 if r.alpha is None else r.alpha,
        -1.0 if r.beta is None else r.beta,
        r.seed,
    )
    return sorted(rows, key=key)


def run_leave_one_out(config: ExperimentConfig, progress=None) -> list[ResultRow]:
    """The full protocol with every domain held out in turn."""
    return run_experiment(replace(config, test_domain=None), progress=progress)


@dataclass(frozen=True)
class Selection:
    algorithm: str
    test_domain: str
    alpha: float | None
    beta: float | None
    mean_val_acc: float
    test_accs: tuple[float, ...]

    @property
    def mean_test_acc(self) -> float:
        return float(np.mean(self.test_accs))

    @property
    def std_test_acc(self) -> float:
        return float(np.std(self.test_accs))  # population std across repetitions


def select_model(rows: Sequence[ResultRow], config: ExperimentConfig) -> list[Selection]:
    """Pick each algorithm's grid point per held-out domain.

    Scores a grid point by mean validation accuracy over repetitions, with a
    failed run counting -inf.  Ascending grid order plus strict improvement
    breaks ties toward smaller alpha, then smaller beta.  Every expected cell
    must be present exactly once.
    """
    table: dict[tuple, ResultRow] = {}
    for r in rows:
        k = (r.algorithm, r.test_domain, r.alpha, r.beta, r.seed)
        if k in table:
            raise ValueError(f"duplicate result row for {k}")
        table[k] = r
    held_out = (
        [d.domain_id for d in config.domains] if config.test_domain is None else [config.test_domain]
    )
    out = []
    for algorithm in config.algorithms:
        for test_domain in held_out:
            best = None
            for alpha, beta in grid_for(algorithm, config):
                vals, tests = [], []
                for rep in range(config.n_seeds):
                    k = (algorithm, test_domain, alpha, beta, rep)
                    if k not in table:
                        raise ValueError(f"missing result row for {k}")
                    r = table[k]
                    vals.append(-np.inf if r.val_acc is None else r.val_acc)
                    tests.append(np.nan if r.test_acc is None else r.test_acc)
                mean_val = float(np.mean(vals))
                if best is None or mean_val > best.mean_val_acc:
                    best = Selection(algorithm, test_domain, alpha, beta, mean_val, tuple(tests))
            out.append(best)
    return out


def summarize(selections: Sequence[Selection]) -> str:
    """Markdown table: one row per algorithm, one column per held-out domain,
    cells are mean +/- population std of held-out accuracy at the selected
    grid point, plus the across-domain average."""
    algorithms = sorted({s.algorithm for s in selections})
    domains = sorted({s.test_domain for s in selections})
    by_key = {(s.algorithm, s.test_domain): s for s in selections}
    lines = ["| algorithm | " + " | ".join(domains) + " | average |"]
    lines.append("|" + " --- |" * (len(domains) + 2))
    for a in algorithms:
        cells = []
        means = []
        for d in domains:
            s = by_key[(a, d)]
            cells.append(f"{s.mean_test_acc:.4f} ± {s.std_test_acc:.4f}")
            means.append(s.mean_test_acc)
        lines.append(f"| {a} | " + " | ".join(cells) + f" | {np.mean(means):.4f} |")
    return "\n".join(lines) + "\n"


def write_results_csv(path, rows: Sequence[ResultRow]) -> None:
    """Fixed header and fixed float formatting so reruns are byte-identical
    apart from the wall_ms column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in sort_rows(rows):
            writer.writerow(
                [
                    r.algorithm,
                    r.test_domain,
                    r.seed,
                    "" if r.alpha is None else repr(float(r.alpha)),
                    "" if r.beta is None else repr(float(r.beta)),
                    "" if r.val_acc is None else f"{r.val_acc:.6f}",
                    "" if r.test_acc is None else f"{r.test_acc:.6f}",
                    r.wall_ms,
                ]
            )


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RESULTS_HEADER:
            raise ValueError(f"unexpected results header {header}")
        for rec in reader:
            rows.append(
                ResultRow(
                    algorithm=rec[0],
                    test_domain=rec[1],
                    seed=int(rec[2]),
                    alpha=None if rec[3] == "" else float(rec[3]),
                    beta=None if rec[4] == "" else float(rec[4]),
                    val_acc=None if rec[5] == "" else float(rec[5]),
                    test_acc=None if rec[6] == "" else float(rec[6]),
                    wall_ms=int(rec[7]),
                )
            )
    return rows


def write_training_log(path, history: Sequence[dict]) -> None:
    """Per-iteration scalars as CSV; columns follow the first row's keys."""
    if not history:
        raise ValueError("empty training history")
    fields = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in fields})


def selections_to_json(selections: Sequence[Selection]) -> list[dict]:
    return [
        {
            "algorithm": s.algorithm,
            "test_domain": s.test_domain,
            "alpha": s.alpha,
            "beta": s.beta,
            "mean_val_acc": s.mean_val_acc,
            "mean_test_acc": s.mean_test_acc,
            "std_test_acc": s.std_test_acc,
        }
        for s in selections
    ]
