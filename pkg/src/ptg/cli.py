"""Command-line entry points.

Exit codes: 0 on success, 1 for configuration/usage problems, 2 for runtime
failures (diverged training, a failed verification sweep).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, oracles
from .aggregate import save_cov_report
from .datasets import save_dataset_csv
from .harness import (
    ExperimentConfig,
    default_benchmark_config,
    generate_domains,
    load_config,
    read_results_csv,
    run_experiment,
    select_model,
    selections_to_json,
    summarize,
    write_results_csv,
    write_training_log,
)
from .nets import TrainingDiverged, save_weights
from .seeding import derive_seed
from .training import ptg_lite_train, train_algorithm
from .variational import GaussianVariational, save_gaussian


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load(config_path: str | None) -> ExperimentConfig:
    if config_path is None:
        return default_benchmark_config()
    return load_config(config_path)


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    config = _load(args.config)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    out = _outdir(args.out)
    by_id = generate_domains(config, config.base_seed)
    for domain_id in sorted(by_id):
        path = out / f"{domain_id}.csv"
        save_dataset_csv(by_id[domain_id], path)
        print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    config = _load(args.config)
    algorithm = args.algorithm or config.algorithms[0]
    test_domain = args.test_domain if args.test_domain is not None else config.test_domain
    seed = args.seed if args.seed is not None else config.train.seed
    out = _outdir(args.out)
    by_id = generate_domains(config, derive_seed(config.base_seed, "data", str(test_domain), 0))
    trains = [by_id[i] for i in sorted(by_id) if i != test_domain]
    feat_spec, cls_spec = config.network_specs()
    cfg = replace(config.train, seed=seed)
    feat, cls, history = train_algorithm(algorithm, trains, feat_spec, cls_spec, cfg)
    if isinstance(feat, GaussianVariational):
        save_gaussian(out / "featurizer.json", feat)
    else:
        save_weights(out / "featurizer.json", feat)
    save_weights(out / "classifier.json", cls)
    write_training_log(out / "training_log.csv", history)
    if algorithm == "ptg_lite":
        # rerun the final aggregation bookkeeping to export the mask report
        from .aggregate import coefficient_of_variation, cov_dropout, map_mean
        from .nets import WeightSet

        erm_feat, erm_cls, _ = train_algorithm("erm", trains, feat_spec, cls_spec, cfg)
        bank, _ = ptg_lite_train(trains, erm_feat, erm_cls, cfg)
        models = [bank.per_domain[i] for i in sorted(bank.per_domain)]
        _, report = cov_dropout(map_mean(models), coefficient_of_variation(models), cfg.beta)
        save_cov_report(out / "cov_report.json", report)
    print(f"trained {algorithm} on {len(trains)} domains; artifacts in {out}")
    return 0


def _rows_with_outputs(config: ExperimentConfig, out: Path, write_summary: bool) -> int:
    rows = run_experiment(config, progress=lambda r: print(
        f"  {r.algorithm} test={r.test_domain} seed={r.seed} "
        f"alpha={r.alpha} beta={r.beta} val={r.val_acc} test={r.test_acc}"
    ))
    write_results_csv(out / "results.csv", rows)
    print(f"wrote {out / 'results.csv'} ({len(rows)} rows)")
    if write_summary:
        selections = select_model(rows, config)
        with open(out / "selection.json", "w") as fh:
            json.dump(selections_to_json(selections), fh, indent=2)
        (out / "summary.md").write_text(summarize(selections))
        print(f"wrote {out / 'selection.json'} and {out / 'summary.md'}")
    return 0


def _cmd_run(args) -> int:
    config = _load(args.config)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    return _rows_with_outputs(config, _outdir(args.out), write_summary=True)


def _cmd_sweep(args) -> int:
    config = _load(args.config)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    return _rows_with_outputs(config, _outdir(args.out), write_summary=False)


def _cmd_summarize(args) -> int:
    config = _load(args.config)
    rows = read_results_csv(args.results)
    selections = select_model(rows, config)
    out = _outdir(args.out)
    with open(out / "selection.json", "w") as fh:
        json.dump(selections_to_json(selections), fh, indent=2)
    table = summarize(selections)
    (out / "summary.md").write_text(table)
    print(table, end="")
    return 0


def _cmd_oracle_check(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    worst_identity = 0.0
    worst_conditioned = 0.0
    for _ in range(args.trials):
        model = oracles.random_model(
            rng,
            n_omega=int(rng.integers(2, 7)),
            n_causal=int(rng.integers(2, 5)),
            n_variant=int(rng.integers(2, 5)),
            n_obs=int(rng.integers(2, 5)),
        )
        worst_identity = max(worst_identity, oracles.identity_gap(model))
        obs = [int(rng.integers(0, model.likelihood.shape[3])) for _ in range(3)]
        worst_conditioned = max(
            worst_conditioned, oracles.data_conditioned_gap(model, 0, obs)
        )
    report = {
        "trials": args.trials,
        "max_identity_gap": worst_identity,
        "identity_tolerance": 1e-12,
        "max_data_conditioned_gap": worst_conditioned,  # informational only
        "ok": bool(worst_identity < 1e-12),
    }
    print(json.dumps(report, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0 if report["ok"] else 2


def _cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    report = {
        "backward": checks.run_backward_checks(seed, args.instances),
        "variational": checks.run_elbo_checks(seed + 1, args.instances),
        "tolerance": 1e-4,
    }
    report["ok"] = bool(
        report["backward"]["max_rel_err"] < 1e-4 and report["variational"]["max_rel_err"] < 1e-4
    )
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="experiment config JSON (default: built-in benchmark)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("gen-data", help="write each domain as CSV plus metadata sidecar")
    common(p, "data")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="one training run; writes checkpoints and a log")
    common(p)
    p.add_argument("--algorithm", choices=("erm", "erm_bayesian", "ptg", "ptg_lite"))
    p.add_argument("--test-domain", help="domain to hold out (default from config)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("run", help="full protocol: sweep, selection, summary")
    common(p, "results")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="grid sweep only; writes the raw rows CSV")
    common(p, "results")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("summarize", help="selection and summary table from a rows CSV")
    common(p, "results")
    p.add_argument("results", help="rows CSV produced by run or sweep")
    p.set_defaults(fn=_cmd_summarize)

    p = sub.add_parser("oracle-check", help="enumeration sweep of the posterior identity")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(fn=_cmd_oracle_check)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(fn=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
