"""Tests for the experiment runners.

These use sharply reduced replicate counts; the bands in the runners are
sized for the defaults, so the assertions here target structure, the
hypothesis gates, and statistics that are stable at small reps with the
frozen seeds.
"""

import json

import numpy as np
import pytest
from scipy import stats

from cdi import SimConfig, make_model, make_table_model
from cdi.experiments import (
    HypothesisMismatch,
    ks_distance,
    run_clt,
    run_excursions,
    run_fast_regime,
    run_lln,
    run_slln_proxy,
    run_speed,
)

KM = make_model("kingman")
ED = make_model("exp-death")


class TestKSDistance:
    def test_hand_values_against_uniform(self):
        assert ks_distance([0.5], lambda x: x) == 0.5
        assert ks_distance([0.25, 0.75], lambda x: x) == 0.25

    def test_matches_scipy_statistic(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=500)
        assert ks_distance(z, stats.norm.cdf) == stats.kstest(z, "norm").statistic

    def test_accepts_precomputed_cdf_values(self):
        x = np.array([0.2, 0.6])
        assert ks_distance(x, np.sort(x)) == ks_distance(x, lambda t: t)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ks_distance([], lambda x: x)


class TestHypothesisGates:
    def test_lln_rejects_fast_model(self):
        with pytest.raises(HypothesisMismatch) as exc:
            run_lln(ED, reps=16)
        assert exc.value.report.regime == "fast"

    def test_fast_rejects_gradual_model(self):
        with pytest.raises(HypothesisMismatch, match="gradual"):
            run_fast_regime(KM, n=10, reps=16)

    def test_slln_proxy_rejects_fast_model(self):
        with pytest.raises(HypothesisMismatch):
            run_slln_proxy(ED, n_values=(20,), reps=16)


class TestRunLLN:
    def test_merger_deviations_shrink(self):
        r = run_lln(KM, levels=(20, 60, 180), reps=2048,
                    config=SimConfig(base_seed=101))
        assert r.verdict == "pass"
        assert r.statistics["monotone"] is True
        assert r.statistics["final_dev_prob"] < 0.05
        assert [row["level"] for row in r.rows] == [20, 60, 180]
        for row in r.rows:
            assert abs(row["mean_ratio"] - 1.0) < 0.05
            assert set(row) >= {"level", "mean_ratio", "std_ratio",
                                "dev_prob_0.1", "dev_prob_0.05"}

    def test_result_record_is_json_ready(self):
        r = run_lln(KM, levels=(20, 40), reps=1024, config=SimConfig(base_seed=1))
        d = json.loads(json.dumps(r.to_dict()))
        assert d["experiment"] == "lln"
        assert d["params"]["start_level"] > 40
        assert isinstance(d["version"], str)


class TestRunCLT:
    def test_merger_standardized_times_are_normal(self):
        r = run_clt(KM, n=200, reps=4096, config=SimConfig(base_seed=103))
        assert r.verdict == "pass"
        assert r.statistics["ks"] < 0.03
        assert abs(r.statistics["mean_z"]) < 0.1
        assert abs(r.statistics["var_z"] - 1.0) < 0.1
        # death rates are power-like, so the variance identity is evaluated
        assert abs(r.statistics["variance_stat"] - 1.0) <= 0.02
        assert sum(r.statistics["z_hist"]) <= 4096
        assert len(r.statistics["z_edges"]) == len(r.statistics["z_hist"]) + 1


class TestRunFastRegime:
    def test_exponential_death_transform_agrees(self):
        r = run_fast_regime(ED, n=10, reps=20_000, config=SimConfig(base_seed=105))
        assert r.verdict == "pass"
        assert r.statistics["sup_dev"] < 0.01
        assert abs(r.statistics["derivative_at_zero"] - 1.0) < 1e-5
        # last-step share of exp(beta n) death rates is 1 - exp(-beta)
        assert abs(r.params["alpha_tabulated"] - (1.0 - np.exp(-1.0))) < 1e-10
        assert r.params["l"] == 0.0

    def test_release_bias_tightens_eps(self):
        """a_max = 10 forces eps <= dev_tol / 40 regardless of the config."""
        r = run_fast_regime(ED, n=10, reps=1024, config=SimConfig(base_seed=1))
        assert r.params["eps"] == pytest.approx(0.01 / 40.0)
        assert r.rows[0]["a"] == 0.0 and r.rows[0]["theory"] == 1.0


class TestRunSpeed:
    def test_merger_positions_match_profile(self):
        r = run_speed(KM, (0.01, 0.02), reps=512, config=SimConfig(base_seed=107))
        assert r.verdict == "pass"
        assert [row["v"] for row in r.rows] == [200, 100]
        for row in r.rows:
            assert abs(row["ratio"] - 1.0) < 0.2
        assert r.params["release_margin"] >= 10.0


class TestRunExcursions:
    def test_flat_compensated_statistic_passes(self):
        """Constant-ratio chain: E[H^2] mu/lam is level-independent.

        With a constant up-probability the walk consumes the block streams
        identically at every level, so the spread is exactly zero.
        """
        tm = make_table_model([(0.0, 0.0)] + [(1.0, 2.0)] * 400)
        r = run_excursions(tm, n_values=(10, 20, 40), reps=4000,
                           config=SimConfig(base_seed=115))
        assert r.verdict == "pass"
        assert r.statistics["agreement"] is True
        assert r.statistics["constancy_spread"] == 0.0
        for row in r.rows:
            assert row["rec_mean"] == pytest.approx(1.0, rel=1e-12)
            assert row["rec_m2"] == pytest.approx(7.0, rel=1e-12)
            assert row["agree"]

    def test_logistic_drift_is_reported_honestly(self):
        """The logistic chain's compensated statistic is still drifting over
        levels 10..40; per-level agreement holds but flatness fails."""
        lg = make_model("logistic", birth=1.0, death=1.0)
        r = run_excursions(lg, n_values=(10, 20, 40), reps=10_000,
                           config=SimConfig(base_seed=109))
        assert r.statistics["agreement"] is True
        assert r.verdict == "fail"
        assert r.statistics["constancy_spread"] > 0.2
        comp = [row["compensated"] for row in r.rows]
        assert comp == sorted(comp, reverse=True)       # decreasing toward 1

    def test_pure_death_trivial_branch(self):
        r = run_excursions(KM, n_values=(5, 10), reps=256,
                           config=SimConfig(base_seed=111))
        assert r.verdict == "pass"
        assert r.statistics["constancy_spread"] == 0.0
        assert any("pure-death" in m for m in r.messages)
        assert all(row["emp_mean"] == 0.0 for row in r.rows)


class TestRunSLLNProxy:
    def test_sup_dominates_single_level(self):
        """The supremum deviation includes the single-level one, so its
        frequency can never be smaller; at these levels the merger chain
        concentrates and the runner honestly reports the separation failing."""
        r = run_slln_proxy(KM, n_values=(50, 100), delta=0.25, reps=512,
                           config=SimConfig(base_seed=113))
        for row in r.rows:
            assert row["sup_dev_prob"] >= row["single_dev_prob"]
            assert abs(row["mean_ratio"] - 1.0) < 0.05
        assert r.statistics["final_single_dev_prob"] < 0.1
        assert r.verdict == "fail"          # sup frequency has also collapsed
        d = json.loads(json.dumps(r.to_dict()))
        assert d["statistics"]["min_sup_dev_prob"] < 0.1
