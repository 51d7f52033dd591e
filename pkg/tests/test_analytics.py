"""Moment tables, descent/regime reports, speed profile, and tail checks.

Closed forms used as references:
  - pairwise-merger chain (mu_n = n(n-1)/2): m_n = 2/(n(n+1)),
    E-from-infinity = 2/n, S = 2, and the squared-step series at the floor
    sums to 4 pi^2/3 - 12;
  - geometric deaths (mu_n = e^{beta n}): per-step mean e^{-beta(n+1)},
    suffix sums are plain geometric series, and the last-step share is
    1 - e^{-beta} at every level.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdi import (
    FiniteChain,
    ModelValidationError,
    NoDescentError,
    descent_check,
    hitting_laplace,
    hitting_mean,
    hitting_moment2,
    hitting_moment3,
    make_model,
    make_table_model,
    moment_table,
    ratio_R,
    regime_classify,
    rv_tail_check,
    speed_table,
)
from cdi.analytics import RangeQueryError


class TestPairwiseMergerClosedForms:
    def test_e_inf_is_two_over_n(self):
        t = moment_table(make_model("kingman"), n_hi=1000)
        n = t.levels.astype(np.float64)
        assert_allclose(t.e_inf, 2.0 / n, rtol=1e-10)
        assert t.rel_bound < 1e-10

    def test_per_step_moments(self):
        t = moment_table(make_model("kingman"), n_hi=64)
        n = t.levels.astype(np.float64)
        m = 2.0 / (n * (n + 1.0))
        assert_allclose(t.m, m, rtol=1e-12)
        assert_allclose(t.m2, 2.0 * m * m, rtol=1e-12)
        assert_allclose(t.m3, 6.0 * m ** 3, rtol=1e-12)
        assert_allclose(t.var_tau, m * m, rtol=1e-12)

    def test_total_descent_time(self):
        t = moment_table(make_model("kingman"), n_hi=32)
        assert_allclose(t.S, 2.0, rtol=1e-11)

    def test_variance_series_at_floor(self):
        """sum of m_k^2 telescopes to 4 pi^2/3 - 12."""
        t = moment_table(make_model("kingman"), n_hi=64)
        assert_allclose(t.var_inf[t.idx(1)], 4.0 * math.pi ** 2 / 3.0 - 12.0,
                        rtol=1e-11)

    def test_last_step_share(self):
        t = moment_table(make_model("kingman"), n_hi=100)
        n = t.levels.astype(np.float64)
        assert_allclose(t.r, 1.0 / (n + 1.0), rtol=1e-11)


class TestGeometricDeathClosedForms:
    def test_suffix_sums_are_geometric(self):
        b = math.log(3.0)
        t = moment_table(make_model("exp-death", beta=b), n_hi=64)
        n = t.levels.astype(np.float64)
        e = np.exp(-b * (n + 1.0)) / (1.0 - math.exp(-b))
        v = np.exp(-2.0 * b * (n + 1.0)) / (1.0 - math.exp(-2.0 * b))
        assert_allclose(t.e_inf, e, rtol=1e-12)
        assert_allclose(t.var_inf, v, rtol=1e-12)

    def test_last_step_share_is_constant(self):
        t = moment_table(make_model("exp-death", beta=math.log(3.0)), n_hi=64)
        assert_allclose(t.r, 2.0 / 3.0, rtol=1e-13)


class TestTableModelAgainstOracle:
    def test_hand_chain_columns(self):
        m = make_table_model([(0.0, 0.0), (1.0, 1.0), (0.0, 2.0)])
        t = moment_table(m)
        assert list(t.levels) == [0, 1]
        assert_allclose(t.m, [1.5, 0.5], rtol=1e-14)
        assert_allclose(t.m2, [5.0, 0.5], rtol=1e-14)
        assert_allclose(t.m3, [25.5, 0.75], rtol=1e-14)
        assert_allclose(t.var_tau, [2.75, 0.25], rtol=1e-14)
        assert_allclose(t.e_inf, [2.0, 0.5], rtol=1e-14)
        assert_allclose(t.S, 2.0, rtol=1e-14)

    def test_random_tables_match_tridiagonal_solves(self):
        """Recursion columns equal the independent oracle's one-step rows."""
        rng = np.random.default_rng(77)
        for _ in range(20):
            N = int(rng.integers(3, 25))
            lam = np.exp(rng.uniform(np.log(1e-1), np.log(1e1), size=N + 1))
            mu = np.exp(rng.uniform(np.log(1e-1), np.log(1e1), size=N + 1))
            lam[0] = mu[0] = 0.0
            lam[N] = 0.0
            ch = FiniteChain(lam=lam, mu=mu)
            t = moment_table(make_table_model(np.column_stack([lam, mu])))
            for n in range(0, N - 1):
                i = t.idx(n)
                assert_allclose(t.m[i], hitting_mean(ch, n)[0], rtol=1e-9)
                assert_allclose(t.m2[i], hitting_moment2(ch, n)[0], rtol=1e-9)
                assert_allclose(t.m3[i], hitting_moment3(ch, n)[0], rtol=1e-9)
            # e_inf for the table model is the full descent from the top
            assert_allclose(t.e_inf[t.idx(0)], hitting_mean(ch, 0)[-1],
                            rtol=1e-9)

    def test_idx_and_range_errors(self):
        t = moment_table(make_model("kingman"), n_hi=10)
        assert t.levels[t.idx(5)] == 5
        with pytest.raises(RangeQueryError):
            t.idx(11)
        with pytest.raises(RangeQueryError):
            t.idx(0)  # below the floor

    def test_columns_schema(self):
        t = moment_table(make_model("kingman"), n_hi=8)
        cols = t.columns()
        assert list(cols.keys()) == ["n", "log_pi", "m", "m2", "m3",
                                     "var_tau", "e_inf", "var_inf", "r"]
        assert all(len(v) == len(t.levels) for v in cols.values())


class TestDescentCheck:
    def test_pairwise_merger_descends(self):
        rep = descent_check(make_model("kingman"))
        assert rep.comes_down is True
        assert rep.floor == 1
        assert_allclose(rep.S, 2.0, rtol=1e-10)
        assert rep.absorption.verdict == "holds"

    def test_critical_chain_does_not_certify(self):
        """lam_n = mu_n = n: expected one-step times are infinite."""
        rep = descent_check(make_model("power-death", rho=1.0, birth=1.0))
        assert rep.comes_down is not True
        assert rep.S is None or not math.isfinite(rep.S)

    def test_slow_pure_death_diverges(self):
        """mu_n = n^(1/2): suffix sum of n^(-1/2) diverges."""
        rep = descent_check(make_model("power-death", rho=0.5))
        assert rep.comes_down is False
        assert rep.S == math.inf


class TestRegimeClassification:
    def test_geometric_death_is_fast(self):
        rep = regime_classify(make_model("exp-death", beta=math.log(3.0)),
                              horizon=512)
        assert rep.regime == "fast"
        assert_allclose(rep.alpha, 2.0 / 3.0, atol=1e-6)

    def test_quadratic_death_is_gradual(self):
        rep = regime_classify(make_model("power-death", rho=2.0), horizon=1024)
        assert rep.regime == "gradual"
        assert rep.alpha == 0.0

    def test_oscillating_death_is_mixed(self):
        rep = regime_classify(make_model("oscillating-death"), horizon=256)
        assert rep.regime == "mixed"
        assert len(rep.r_limit_points) == 2
        assert_allclose(sorted(rep.r_limit_points), [4.0 / 9.0, 4.0 / 5.0],
                        atol=1e-6)

    def test_factorial_death_is_fast_with_unit_share(self):
        """1 - r_n ~ 1/n never stabilizes but decays cleanly."""
        rep = regime_classify(make_model("factorial-death", gamma=1.0),
                              horizon=300)
        assert rep.regime == "fast"
        assert rep.alpha == 1.0

    def test_condition_verdicts_present(self):
        rep = regime_classify(make_model("power-death", rho=2.0), horizon=512)
        for key in ("absorption", "subcritical_ratio", "finite_descent",
                    "bounded_second_moment_ratio", "square_summable_r",
                    "vanishing_variance_ratio"):
            assert key in rep.conditions, key
        assert rep.conditions["absorption"].verdict == "holds"
        assert rep.conditions["finite_descent"].verdict == "holds"
        assert rep.conditions["vanishing_variance_ratio"].verdict == "holds"

    def test_fast_regime_fails_square_summability(self):
        rep = regime_classify(make_model("exp-death", beta=1.0), horizon=256)
        assert rep.conditions["square_summable_r"].verdict == "fails"

    def test_report_serializes(self):
        import json
        rep = regime_classify(make_model("kingman"), horizon=128)
        json.dumps(rep.to_dict())


class TestSpeedProfile:
    def test_levels_where_expected(self):
        st = speed_table(make_model("kingman"), n_hi=4096)
        assert st.v(0.01) == 200
        assert st.v(2.0) == 1
        assert st.v(0.001) == 2000
        assert list(st.v([0.01, 0.5])) == [200, 4]
        assert_allclose(st.S, 2.0, rtol=1e-10)

    def test_boundary_queries_not_flipped_by_rounding(self):
        """Querying exactly at a tabulated e value returns that level."""
        st = speed_table(make_model("kingman"), n_hi=512)
        for k in (2, 10, 100, 511):
            t_k = float(st.e_inf[st.levels == k][0])
            assert st.v(t_k) == k

    def test_below_range_raises(self):
        st = speed_table(make_model("kingman"), n_hi=64)
        with pytest.raises(RangeQueryError):
            st.v(1e-6)
        with pytest.raises(RangeQueryError):
            st.v(0.0)

    def test_halving_ratio(self):
        st = speed_table(make_model("kingman"), n_hi=512)
        assert_allclose(st.ratio(400, 200), 0.5, rtol=1e-10)
        assert_allclose(ratio_R(make_model("kingman"), 400, 200), 0.5,
                        rtol=1e-10)


class TestRegularVariationCheck:
    def test_quadratic_death_statistics_near_one(self):
        rep = rv_tail_check(make_model("power-death", rho=2.0), n=512)
        assert rep.regularly_varying
        assert_allclose(rep.rho_hat, 2.0, atol=1e-6)
        for s in (rep.mean_stat, rep.var_stat, rep.halving_stat):
            assert abs(s - 1.0) < 0.01
        assert rep.verdict == "holds"

    def test_geometric_death_not_regularly_varying(self):
        rep = rv_tail_check(make_model("exp-death", beta=1.0), n=64)
        assert not rep.regularly_varying
        assert rep.verdict == "inconclusive"


class TestValidationErrors:
    def test_n_hi_required_for_infinite_models(self):
        with pytest.raises(ModelValidationError):
            moment_table(make_model("kingman"))

    def test_rel_tol_bounds(self):
        with pytest.raises(ModelValidationError):
            moment_table(make_model("kingman"), n_hi=10, rel_tol=0.5)

    def test_no_descent_raises_in_table(self):
        with pytest.raises((NoDescentError, ArithmeticError)):
            moment_table(make_model("power-death", rho=1.0, birth=1.0),
                         n_hi=128)
