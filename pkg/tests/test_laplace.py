"""Tests for the descent-time transforms and the fast-regime fixed point.

Pinned reference values used below:

* l = 0 or alpha = 1 collapse the fixed-point equation to G(a) = 1/(1+a)
  exactly (for l = 0 the operator ignores its argument; for alpha = 1 the
  shrunken argument is 0 where the anchor forces g = 1).
* hand chain lam = (0, 1, 0), mu = (0, 1, 2): one-step transforms at a = 1
  are G_1(1) = 2/3 (pure-death step) and G_0(1) = 1/(2 + (1 - 2/3)) = 3/7.
* constant-ratio chain lam/mu = 1/2: excursion height moments h = 1, s = 7
  solve h = q(1+h), s = q(s + 1 + 2(2h + h^2)) exactly.
* three-row chain (0,0), (1,2), (0,2): up-steps from level 1 are geometric
  with success 2/3, so E H = 1/2 and E H^2 = 1.
* product transform at l = 0.3, alpha = 2/3: value 0.44462599580901385 at
  a = 1 (frozen from a converged run; guards the truncation logic).
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdi import (
    FiniteChain,
    ModelValidationError,
    excursion_moments,
    hitting_laplace,
    make_model,
    make_table_model,
    solve_fixed_point,
    transform_Z,
    transform_tau,
)
from cdi.tails import SeriesDivergenceError


def _hand_chain():
    return make_table_model([(0.0, 0.0), (1.0, 1.0), (0.0, 2.0)])


class TestFixedPoint:
    def test_l_zero_is_exact_reciprocal(self):
        """With no births the last step is Exp(1): G(a) = 1/(1+a) exactly."""
        sol = solve_fixed_point(0.0, 0.5)
        assert_allclose(sol.G, 1.0 / (1.0 + sol.a_grid), rtol=0, atol=1e-12)
        assert sol.sup_residual <= 1e-14
        assert sol.iterations <= 4

    def test_alpha_one_is_exact_reciprocal(self):
        sol = solve_fixed_point(0.7, 1.0)
        assert_allclose(sol.G, 1.0 / (1.0 + sol.a_grid), rtol=0, atol=1e-12)

    def test_residual_and_unit_derivative_across_grid(self):
        """Self-consistency defect stays tiny and -G'(0+) = E[Z] = 1."""
        for l in (0.2, 0.5, 0.9):
            for alpha in (0.25, 0.5, 1.0):
                sol = solve_fixed_point(l, alpha)
                assert sol.sup_residual <= 1e-10, (l, alpha)
                assert abs(sol.derivative_at_zero() - 1.0) <= 1e-6, (l, alpha)

    def test_operator_is_a_contraction(self):
        """|H g1 - H g2| <= l |g1 - g2| on random node vectors.

        Linear interpolation is 1-Lipschitz in the node values, so the
        discretized operator must inherit the contraction constant of the
        exact one; this is what makes the returned error bound trustworthy.
        """
        rng = np.random.default_rng(4242)
        for l in (0.3, 0.9):
            sol = solve_fixed_point(l, 0.5)
            m = sol.a_internal.size
            for _ in range(500):
                g1 = rng.uniform(0.0, 1.0, size=m)
                g2 = rng.uniform(0.0, 1.0, size=m)
                lhs = np.max(np.abs(sol.apply_operator(g1) - sol.apply_operator(g2)))
                rhs = np.max(np.abs(g1 - g2))
                assert lhs <= l * rhs + 1e-14

    def test_eval_monotone_and_bounded(self):
        sol = solve_fixed_point(0.6, 0.4)
        a = np.geomspace(1e-3, 5e2, 40)
        g = sol.eval(a)
        assert np.all(g > 0) and np.all(g < 1)
        assert np.all(np.diff(g) < 0)
        assert sol.eval(0.0) == 1.0

    def test_eval_above_grid_descends_through_operator(self):
        sol = solve_fixed_point(0.5, 0.5)
        hi = float(sol.a_internal[-1])
        g = sol.eval(np.array([hi, hi * 10, hi * 1000]))
        assert np.all(np.diff(g) < 0)
        assert g[-1] > 0.0
        # one manual descent step: G(a) = H(G)(a) with the shrunken argument
        a_big = hi * 3.0
        c = 1.0 - sol.l * (1.0 - sol.alpha)
        inner = sol.eval(a_big * (1.0 - sol.alpha))
        by_hand = 1.0 / (1.0 + a_big * c + sol.l * (1.0 - inner))
        assert_allclose(sol.eval(a_big), by_hand, rtol=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ModelValidationError, match=r"ratio limit l"):
            solve_fixed_point(1.0, 0.5)
        with pytest.raises(ModelValidationError):
            solve_fixed_point(-0.1, 0.5)
        with pytest.raises(ModelValidationError, match=r"last-step share"):
            solve_fixed_point(0.5, 0.0)
        with pytest.raises(ModelValidationError):
            solve_fixed_point(0.5, 1.2)
        with pytest.raises(ModelValidationError):
            solve_fixed_point(0.5, 0.5, a_min=0.0)
        with pytest.raises(ModelValidationError):
            solve_fixed_point(0.5, 0.5, a_min=10.0, a_max=1.0)
        with pytest.raises(ModelValidationError):
            solve_fixed_point(0.5, 0.5, num=8)
        sol = solve_fixed_point(0.5, 0.5)
        with pytest.raises(ModelValidationError):
            sol.eval(-1.0)


class TestProductTransform:
    def test_frozen_value(self):
        sol = solve_fixed_point(0.3, 2.0 / 3.0)
        assert_allclose(transform_Z(sol, 1.0), 0.44462599580901385, rtol=1e-9)

    def test_endpoints_and_vector(self):
        sol = solve_fixed_point(0.3, 2.0 / 3.0)
        assert transform_Z(sol, 0.0) == 1.0
        arr = transform_Z(sol, np.array([0.5, 1.0, 2.0]))
        assert arr.shape == (3,)
        assert np.all(np.diff(arr) < 0)
        assert_allclose(arr[1], transform_Z(sol, 1.0), rtol=0, atol=0)

    def test_alpha_one_single_factor(self):
        """alpha = 1 means the whole time is the last step: product = G."""
        sol = solve_fixed_point(0.4, 1.0)
        for a in (0.3, 1.0, 7.0):
            assert_allclose(transform_Z(sol, a), sol.eval(a), rtol=1e-14)

    def test_rejects_negative_argument(self):
        sol = solve_fixed_point(0.3, 0.5)
        with pytest.raises(ModelValidationError):
            transform_Z(sol, -0.5)


class TestOneStepTransform:
    def test_hand_chain_values(self):
        tm = _hand_chain()
        assert_allclose(transform_tau(tm, 1, 1.0), 2.0 / 3.0, rtol=1e-15)
        assert_allclose(transform_tau(tm, 0, 1.0), 3.0 / 7.0, rtol=1e-15)
        assert transform_tau(tm, 0, 0.0) == 1.0
        vec = transform_tau(tm, 0, np.array([0.0, 1.0]))
        assert_allclose(vec, [1.0, 3.0 / 7.0], rtol=1e-15)

    def test_matches_boxed_chain_solver(self):
        """Backward sweep vs the tridiagonal route on random finite chains."""
        rng = np.random.default_rng(1305)
        for _ in range(10):
            N = int(rng.integers(4, 20))
            lam = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), size=N + 1))
            mu = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), size=N + 1))
            lam[0] = mu[0] = 0.0
            lam[N] = 0.0
            tm = make_table_model(np.column_stack([lam, mu]))
            ch = FiniteChain(lam=lam, mu=mu)
            for a in (0.1, 1.0, 10.0):
                for n in range(N - 1):
                    got = transform_tau(tm, n, a)
                    ref = hitting_laplace(ch, a, n)[0]
                    assert abs(got - ref) <= 1e-9 * ref

    def test_pure_death_step_is_exponential(self):
        km = make_model("kingman")
        # step from 2 to 1 takes Exp(mu_2) = Exp(1) time
        assert_allclose(transform_tau(km, 1, 1.0), 0.5, rtol=1e-12)
        assert_allclose(transform_tau(km, 1, 3.0), 0.25, rtol=1e-12)

    def test_infinite_model_stabilizes(self):
        lg = make_model("logistic", birth=3.0, death=1.0)
        vals = transform_tau(lg, 5, np.array([0.5, 1.0, 2.0]))
        assert np.all((vals > 0) & (vals < 1))
        assert np.all(np.diff(vals) < 0)

    def test_level_validation(self):
        tm = _hand_chain()
        with pytest.raises(ModelValidationError):
            transform_tau(tm, 0, -1.0)
        with pytest.raises(ModelValidationError):
            transform_tau(tm, 5, 1.0)
        km = make_model("kingman")
        with pytest.raises(ModelValidationError):
            transform_tau(km, 0, 1.0)  # below the absorbing floor


class TestExcursionMoments:
    def test_constant_ratio_closed_form(self):
        """lam/mu = q = 1/2 for 400 levels: h = 1, s = 7 to machine accuracy."""
        tm = make_table_model([(0.0, 0.0)] + [(1.0, 2.0)] * 400)
        h, s = excursion_moments(tm, 1, 5)
        assert_allclose(h, np.ones(5), rtol=1e-13)
        assert_allclose(s, np.full(5, 7.0), rtol=1e-13)

    def test_three_row_chain_geometric_heights(self):
        tm = make_table_model([(0.0, 0.0), (1.0, 2.0), (0.0, 2.0)])
        h, s = excursion_moments(tm, 1, 1)
        assert_allclose(h, [0.5], rtol=1e-15)
        assert_allclose(s, [1.0], rtol=1e-15)

    def test_pure_death_has_no_upsteps(self):
        km = make_model("kingman")
        h, s = excursion_moments(km, 2, 10)
        assert h.shape == (9,)
        assert np.all(h == 0.0) and np.all(s == 0.0)

    def test_infinite_model_values_decrease(self):
        lg = make_model("logistic", birth=1.0, death=1.0)
        h, s = excursion_moments(lg, 4, 8)
        assert np.all(np.diff(h) < 0)
        assert np.all(s >= h**2)  # second moment dominates squared mean

    def test_divergent_heights_raise(self):
        bad = make_model("power-death", rho=1.0, birth=1.0)
        with pytest.raises(SeriesDivergenceError):
            excursion_moments(bad, 2, 5)

    def test_range_validation(self):
        km = make_model("kingman")
        with pytest.raises(ModelValidationError):
            excursion_moments(km, 1, 5)  # floor is 1, need n_lo >= 2
        with pytest.raises(ModelValidationError):
            excursion_moments(km, 5, 3)
