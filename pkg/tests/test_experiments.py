import csv
import json

import pytest

from metalin import ConfigError, ExperimentConfig
from metalin.experiments import (
    AGGREGATE_SEED,
    COLUMNS,
    resolve_threads,
    run_constants,
    run_decay,
    run_sweep_hyper,
    run_sweep_split,
    run_win_prob,
    write_csv,
)


def small_win_prob_config(**overrides):
    base = {
        "experiment": "win-prob",
        "d": 1,
        "s": 0.5,
        "seeds": [7],
        "repetitions": 8,
        "task_pool": 500,
        "logT_grid": [50],
        "logN_grid": [20],
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


class TestConfigValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_dict({"experiment": "win-prob", "alpha_gird": [0.1]})

    def test_experiment_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="requested"):
            ExperimentConfig.from_dict({"experiment": "decay"}, experiment="win-prob")

    def test_missing_grid_rejected(self):
        with pytest.raises(ConfigError, match="logT_grid"):
            ExperimentConfig.from_dict({"experiment": "win-prob", "logN_grid": [10]})

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            small_win_prob_config(seeds=[])

    def test_degenerate_split_rejected(self):
        # s = 0.95 with N = 10 leaves no validation points
        with pytest.raises(ConfigError, match="invalid split"):
            ExperimentConfig.from_dict(
                {"experiment": "sweep-split", "N": 10, "s_grid": [0.5, 0.95]}
            )

    def test_decay_underdetermined_cells_rejected(self):
        with pytest.raises(ConfigError, match="singular"):
            ExperimentConfig.from_dict(
                {"experiment": "decay", "d": 3, "N": 2, "s": 0.5, "logT_grid": [1]}
            )

    def test_decay_needs_some_grid(self):
        with pytest.raises(ConfigError, match="logT_grid or logN_grid"):
            ExperimentConfig.from_dict({"experiment": "decay"})

    def test_from_json_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"experiment": "win-prob", "logT_grid": [10], "logN_grid": [10]}))
        config = ExperimentConfig.from_json(str(path))
        assert config.logT_grid == (10,)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(str(path))


class TestResolveThreads:
    def test_default_is_one(self, monkeypatch):
        monkeypatch.delenv("METALIN_THREADS", raising=False)
        assert resolve_threads(None) == 1

    def test_flag_respected(self, monkeypatch):
        monkeypatch.delenv("METALIN_THREADS", raising=False)
        assert resolve_threads(4) == 4

    def test_env_overrides_flag(self, monkeypatch):
        monkeypatch.setenv("METALIN_THREADS", "2")
        assert resolve_threads(8) == 2

    def test_bad_env_rejected(self, monkeypatch):
        monkeypatch.setenv("METALIN_THREADS", "lots")
        with pytest.raises(ConfigError):
            resolve_threads(None)


class TestWinProb:
    def test_method_against_itself_never_wins(self):
        config = small_win_prob_config(method_a="maml", method_b="maml")
        rows = run_win_prob(config)
        assert len(rows) == 1
        assert rows[0].value == 0.0  # strict inequality: ties do not count

    def test_degraded_bamaml_loses(self):
        # gamma so large the Bayesian learner collapses to pooled least squares,
        # against a near-optimal one-step learner, with plenty of tasks
        config = small_win_prob_config(
            gamma=1e6, alpha=0.7, logT_grid=[1000], logN_grid=[100], repetitions=10
        )
        rows = run_win_prob(config)
        assert rows[0].value < 0.5

    def test_row_fields(self):
        rows = run_win_prob(small_win_prob_config())
        row = rows[0]
        assert row.metric == "win_fraction_population_risk"
        assert row.method == "bamaml-vs-maml"
        assert 0.0 <= row.value <= 1.0
        assert row.mc_std_error is not None


class TestSweepHyper:
    def make_config(self):
        return ExperimentConfig.from_dict(
            {
                "experiment": "sweep-hyper",
                "d": 1,
                "task_pool": 10000,
                "seeds": [3],
                "alpha_grid": [0.7, 2.0],
                "gamma_grid": [1e-6, 0.1, 1e6],
            }
        )

    def test_bamaml_gamma_limits_and_maml_blowup(self):
        rows = run_sweep_hyper(self.make_config())
        by_key = {(r.method, r.hyperparams): r.value for r in rows}
        erm_risk = by_key[("erm", "")]
        assert abs(by_key[("bamaml", "gamma=1e-06")] - 1.0) < 1e-3
        assert abs(by_key[("bamaml", "gamma=1000000.0")] - erm_risk) < 1e-3
        # a step size above 1 / lambda_max hurts: worse than no adaptation
        assert by_key[("maml", "alpha=2.0")] > erm_risk
        assert by_key[("maml", "alpha=0.7")] < erm_risk


class TestSweepSplit:
    def make_config(self, **overrides):
        base = {
            "experiment": "sweep-split",
            "d": 1,
            "T": 50,
            "N": 10,
            "task_pool": 500,
            "seeds": [0, 1, 2],
            "s_grid": [0.3, 0.6],
        }
        base.update(overrides)
        return ExperimentConfig.from_dict(base)

    def test_emits_decomposition_rows_and_aggregates(self):
        rows = run_sweep_split(self.make_config())
        metrics = {r.metric for r in rows}
        assert {"total_risk", "optimal_population_risk", "statistical_error"} <= metrics
        assert {"total_risk_median", "total_risk_mean", "total_risk_iqr"} <= metrics
        agg = [r for r in rows if r.seed == AGGREGATE_SEED]
        assert agg and all(r.metric.endswith(("_median", "_mean", "_iqr")) for r in agg)

    def test_noiseless_mode_zeroes_statistical_error(self):
        rows = run_sweep_split(self.make_config(noiseless=True))
        stat = [r for r in rows if r.metric == "statistical_error"]
        assert stat and all(r.value <= 1e-10 for r in stat)


class TestDecay:
    def test_reference_rows_follow_inverse_law(self):
        config = ExperimentConfig.from_dict(
            {
                "experiment": "decay",
                "d": 1,
                "N": 20,
                "task_pool": 500,
                "seeds": [0, 1],
                "logT_grid": [50, 100],
            }
        )
        rows = run_decay(config)
        refs = {r.T: r.value for r in rows if r.method == "reference"}
        assert refs[100] == pytest.approx(refs[50] / 2.0)
        per_seed = [r for r in rows if r.metric == "statistical_error"]
        assert {r.method for r in per_seed} == {"erm", "maml", "imaml", "bamaml"}


class TestConstantsRunner:
    def test_emits_estimates_targets_and_verdict(self):
        config = ExperimentConfig.from_dict(
            {
                "experiment": "constants",
                "d": 8,
                "N": 16,
                "seeds": [4],
                "n_samples": 500,
                "alpha_grid": [0.05],
                "gamma_grid": [1e-3],
                "s_grid": [0.25],
            }
        )
        rows = run_constants(config)
        metrics = {r.metric for r in rows}
        assert "dominating_constant" in metrics
        assert "asymptotic_limit" in metrics
        assert any(m.startswith("ordering_") for m in metrics)
        estimates = [r for r in rows if r.metric == "dominating_constant"]
        assert all(r.mc_std_error is not None for r in estimates)
        targets = {r.method: r.value for r in rows if r.metric == "asymptotic_limit"}
        assert targets["erm"] == pytest.approx(1.5)
        assert targets["bamaml"] == pytest.approx(1.0)

    def test_grid_count_validation(self):
        with pytest.raises(ConfigError, match="positive integers"):
            ExperimentConfig.from_dict(
                {"experiment": "win-prob", "logT_grid": [0], "logN_grid": [10]}
            )


class TestCsv:
    def test_header_and_round_trip(self, tmp_path):
        rows = run_win_prob(small_win_prob_config())
        path = tmp_path / "out.csv"
        write_csv(rows, str(path))
        with open(path, newline="") as handle:
            records = list(csv.reader(handle))
        assert records[0] == list(COLUMNS)
        # 17 significant digits round-trip exactly
        assert float(records[1][COLUMNS.index("value")]) == rows[0].value

    def test_byte_identical_across_runs_and_threads(self, tmp_path):
        config = small_win_prob_config(logT_grid=[20, 40], logN_grid=[10, 20], repetitions=4)
        blobs = []
        for threads in (1, 3, 1):
            rows = run_win_prob(config, threads=threads)
            path = tmp_path / f"out_{len(blobs)}.csv"
            write_csv(rows, str(path))
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]

    def test_row_keys_unique(self):
        rows = run_sweep_split(
            ExperimentConfig.from_dict(
                {
                    "experiment": "sweep-split",
                    "d": 1,
                    "T": 20,
                    "N": 10,
                    "task_pool": 200,
                    "seeds": [0, 1],
                    "s_grid": [0.3, 0.6],
                }
            )
        )
        keys = [
            (r.experiment, r.method, r.hyperparams, r.d, r.N, r.T, r.s, r.seed, r.metric)
            for r in rows
        ]
        assert len(keys) == len(set(keys))
