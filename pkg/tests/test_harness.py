"""Experiment protocol: sweeps, selection, reporting, byte-stable outputs."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from ptg.datasets import DomainSpec
from ptg.harness import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BETA_GRID,
    RESULTS_HEADER,
    ExperimentConfig,
    ResultRow,
    Selection,
    default_benchmark_config,
    grid_for,
    load_config,
    read_results_csv,
    run_experiment,
    run_leave_one_out,
    save_config,
    select_model,
    selections_to_json,
    sort_rows,
    summarize,
    write_results_csv,
    write_training_log,
)
from ptg.training import TrainConfig


def tiny_config(**overrides) -> ExperimentConfig:
    defaults = dict(
        family="spurious_blobs",
        domains=(
            DomainSpec("a", 120, spurious_correlation=0.9),
            DomainSpec("b", 120, spurious_correlation=0.8),
            DomainSpec("c", 120, spurious_correlation=-0.8),
        ),
        test_domain="c",
        n_seeds=2,
        alpha_grid=(0.1, 0.5),
        beta_grid=(0.1,),
        d_inv=2,
        d_spur=2,
        feat_hidden=(6, 4),
        cls_hidden=(4,),
        train=TrainConfig(outer_iterations=3, erm_steps=5, bayes_steps=5, batch_size=32),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestExperimentConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(family="images")
        with pytest.raises(ValueError):
            tiny_config(domains=(DomainSpec("a", 10),))
        with pytest.raises(ValueError):
            tiny_config(test_domain="z")
        with pytest.raises(ValueError):
            tiny_config(algorithms=("erm", "mystery"))
        with pytest.raises(ValueError):
            tiny_config(selection="oracle")
        with pytest.raises(ValueError):
            tiny_config(alpha_grid=())
        with pytest.raises(ValueError):
            tiny_config(alpha_grid=(-0.1,))
        with pytest.raises(ValueError):
            tiny_config(n_seeds=0)

    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "cfg.json"
        save_config(path, cfg)
        assert load_config(path) == cfg

    def test_network_dims(self):
        feat, cls = tiny_config().network_specs()
        assert feat.layer_dims == (4, 6, 4)
        assert cls.layer_dims == (4, 4, 2)
        moons = tiny_config(
            family="rotated_moons",
            domains=(DomainSpec("a", 10), DomainSpec("b", 10)),
            test_domain="b",
        )
        assert moons.network_specs()[0].layer_dims == (2, 6, 4)

    def test_default_benchmark(self):
        cfg = default_benchmark_config()
        assert cfg.test_domain == "flip"
        assert len(cfg.domains) == 4
        assert cfg.alpha_grid == DEFAULT_ALPHA_GRID
        assert cfg.beta_grid == DEFAULT_BETA_GRID


class TestGrid:
    def test_baselines_have_single_point(self):
        cfg = tiny_config()
        assert grid_for("erm", cfg) == [(None, None)]
        assert grid_for("erm_bayesian", cfg) == [(None, None)]

    def test_ptg_sweeps_alpha_ascending(self):
        cfg = tiny_config(alpha_grid=(0.5, 0.05, 0.1))
        assert grid_for("ptg", cfg) == [(0.05, None), (0.1, None), (0.5, None)]

    def test_ptg_lite_sweeps_cross_product(self):
        cfg = tiny_config(alpha_grid=(0.5, 0.1), beta_grid=(0.2, 0.1))
        assert grid_for("ptg_lite", cfg) == [
            (0.1, 0.1), (0.1, 0.2), (0.5, 0.1), (0.5, 0.2)
        ]


@pytest.fixture(scope="module")
def tiny_rows():
    cfg = tiny_config()
    return cfg, run_experiment(cfg)


class TestRunExperiment:
    def test_row_count_and_contents(self, tiny_rows):
        cfg, rows = tiny_rows
        per_rep = sum(len(grid_for(a, cfg)) for a in cfg.algorithms)
        assert per_rep == 6
        assert len(rows) == per_rep * cfg.n_seeds
        for r in rows:
            assert r.test_domain == "c"
            assert 0.0 <= r.val_acc <= 1.0
            assert 0.0 <= r.test_acc <= 1.0
            assert r.wall_ms >= 0

    def test_rows_arrive_sorted(self, tiny_rows):
        _, rows = tiny_rows
        assert rows == sort_rows(rows)

    def test_rerun_is_identical_except_wall_clock(self, tiny_rows):
        cfg, rows = tiny_rows
        again = run_experiment(cfg)
        strip = lambda rs: [dataclasses.replace(r, wall_ms=0) for r in rs]
        assert strip(rows) == strip(again)

    def test_csv_write_read_write_is_byte_stable(self, tiny_rows, tmp_path):
        _, rows = tiny_rows
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_results_csv(p1, rows)
        write_results_csv(p2, read_results_csv(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_progress_callback_sees_every_row(self):
        cfg = tiny_config(algorithms=("erm",), n_seeds=1)
        seen = []
        rows = run_experiment(cfg, progress=seen.append)
        assert len(seen) == len(rows) == 1

    def test_selection_on_real_rows(self, tiny_rows):
        cfg, rows = tiny_rows
        selections = select_model(rows, cfg)
        assert {s.algorithm for s in selections} == set(cfg.algorithms)
        for s in selections:
            assert len(s.test_accs) == cfg.n_seeds
            if s.algorithm in ("erm", "erm_bayesian"):
                assert s.alpha is None and s.beta is None
            if s.algorithm == "ptg":
                assert s.alpha in cfg.alpha_grid and s.beta is None


class TestLeaveOneOut:
    def test_every_domain_held_out(self):
        cfg = tiny_config(algorithms=("erm",), n_seeds=1, test_domain=None)
        rows = run_leave_one_out(cfg)
        assert sorted(r.test_domain for r in rows) == ["a", "b", "c"]

    def test_inner_holdout_selection_scores(self):
        cfg = tiny_config(algorithms=("erm",), n_seeds=1, selection="leave_one_out")
        rows = run_experiment(cfg)
        assert len(rows) == 1
        assert rows[0].val_acc is not None
        assert 0.0 <= rows[0].val_acc <= 1.0
        plain = run_experiment(tiny_config(algorithms=("erm",), n_seeds=1))
        assert rows[0].test_acc == plain[0].test_acc  # same trained model
        assert rows[0].val_acc != plain[0].val_acc  # different scoring protocol


def fabricate(algorithm, alpha, beta, seed, val, test="0.5"):
    return ResultRow(algorithm, "c", seed, alpha, beta,
                     None if val is None else float(val),
                     None if test is None else float(test), wall_ms=1)


class TestSelectModel:
    CFG = tiny_config(algorithms=("ptg",), n_seeds=2, alpha_grid=(0.1, 0.5))

    def test_tie_breaks_toward_smaller_alpha(self):
        rows = [
            fabricate("ptg", 0.1, None, 0, 0.80, 0.60),
            fabricate("ptg", 0.1, None, 1, 0.90, 0.62),
            fabricate("ptg", 0.5, None, 0, 0.85, 0.99),
            fabricate("ptg", 0.5, None, 1, 0.85, 0.99),
        ]
        (sel,) = select_model(rows, self.CFG)
        assert sel.alpha == 0.1
        assert sel.mean_val_acc == pytest.approx(0.85)
        assert sel.test_accs == (0.60, 0.62)

    def test_higher_validation_wins(self):
        rows = [
            fabricate("ptg", 0.1, None, 0, 0.80),
            fabricate("ptg", 0.1, None, 1, 0.80),
            fabricate("ptg", 0.5, None, 0, 0.90, 0.70),
            fabricate("ptg", 0.5, None, 1, 0.92, 0.72),
        ]
        (sel,) = select_model(rows, self.CFG)
        assert sel.alpha == 0.5
        assert sel.mean_test_acc == pytest.approx(0.71)
        assert sel.std_test_acc == pytest.approx(0.01)

    def test_failed_run_scores_minus_inf(self):
        rows = [
            fabricate("ptg", 0.1, None, 0, None, None),
            fabricate("ptg", 0.1, None, 1, 0.99),
            fabricate("ptg", 0.5, None, 0, 0.05, 0.40),
            fabricate("ptg", 0.5, None, 1, 0.05, 0.40),
        ]
        (sel,) = select_model(rows, self.CFG)
        assert sel.alpha == 0.5

    def test_duplicate_row_rejected(self):
        rows = [fabricate("ptg", 0.1, None, 0, 0.8)] * 2
        with pytest.raises(ValueError):
            select_model(rows, self.CFG)

    def test_missing_row_rejected(self):
        rows = [fabricate("ptg", 0.1, None, 0, 0.8)]
        with pytest.raises(ValueError):
            select_model(rows, self.CFG)

    def test_lite_tie_breaks_toward_smaller_beta(self):
        cfg = tiny_config(algorithms=("ptg_lite",), n_seeds=1,
                          alpha_grid=(0.1,), beta_grid=(0.3, 0.1))
        rows = [
            fabricate("ptg_lite", 0.1, 0.1, 0, 0.7, 0.5),
            fabricate("ptg_lite", 0.1, 0.3, 0, 0.7, 0.9),
        ]
        (sel,) = select_model(rows, cfg)
        assert sel.beta == 0.1


class TestSummarize:
    def test_table_layout_and_average(self):
        sels = [
            Selection("erm", "a", None, None, 0.9, (0.5, 0.7)),
            Selection("erm", "b", None, None, 0.9, (0.9, 0.9)),
            Selection("ptg", "a", 0.1, None, 0.9, (0.8, 0.8)),
            Selection("ptg", "b", 0.1, None, 0.9, (1.0, 1.0)),
        ]
        text = summarize(sels)
        lines = text.strip().split("\n")
        assert lines[0] == "| algorithm | a | b | average |"
        assert "| erm | 0.6000 ± 0.1000 | 0.9000 ± 0.0000 | 0.7500 |" in lines
        assert "| ptg | 0.8000 ± 0.0000 | 1.0000 ± 0.0000 | 0.9000 |" in lines

    def test_json_export(self):
        sels = [Selection("erm", "a", None, None, 0.9, (0.5, 0.7))]
        (obj,) = selections_to_json(sels)
        assert obj["mean_test_acc"] == pytest.approx(0.6)
        assert obj["alpha"] is None


class TestResultsCsv:
    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(ValueError):
            read_results_csv(path)

    def test_none_cells_round_trip(self, tmp_path):
        rows = [fabricate("erm", None, None, 0, None, None)]
        path = tmp_path / "r.csv"
        write_results_csv(path, rows)
        (back,) = read_results_csv(path)
        assert back.alpha is None and back.val_acc is None and back.test_acc is None

    def test_header_text(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results_csv(path, [])
        assert path.read_text().splitlines()[0] == ",".join(RESULTS_HEADER)


class TestTrainingLog:
    def test_columns_follow_first_row(self, tmp_path):
        history = [
            {"iteration": 0, "loss_a": 0.5, "merged_loss": 0.4},
            {"iteration": 1, "loss_a": 0.3, "merged_loss": 0.2},
        ]
        path = tmp_path / "log.csv"
        write_training_log(path, history)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,loss_a,merged_loss"
        assert len(lines) == 3

    def test_empty_history_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_training_log(tmp_path / "log.csv", [])
