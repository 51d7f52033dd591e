"""Finite-chain oracle: tridiagonal hitting-time solves.

The two-state chain lam = (0, 1, 0), mu = (0, 1, 2) has hand-computable
moments: first-step analysis gives E_1 T = 3/2, E_2 T = 2, second moments
5 and 7, third moments 51/2 and 36, and Laplace values at a = 1 of 3/7
and 2/7.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdi import (
    FiniteChain,
    hitting_laplace,
    hitting_mean,
    hitting_moment2,
    hitting_moment3,
    make_model,
)


def _hand_chain():
    return FiniteChain(lam=np.array([0.0, 1.0, 0.0]), mu=np.array([0.0, 1.0, 2.0]))


def _random_chain(rng, n_max=50, decades=2.0):
    """Random absorbing chain with log-uniform rates and a closed top."""
    N = int(rng.integers(2, n_max + 1))
    lo, hi = np.log(10.0 ** -decades), np.log(10.0 ** decades)
    lam = np.exp(rng.uniform(lo, hi, size=N + 1))
    mu = np.exp(rng.uniform(lo, hi, size=N + 1))
    lam[0] = mu[0] = 0.0
    lam[N] = 0.0
    return FiniteChain(lam=lam, mu=mu)


def _dense_generator(chain):
    """Full generator matrix on transient states 1..N (row = leaving state)."""
    N = chain.N
    Q = np.zeros((N, N))
    for i in range(1, N + 1):
        if i < N:
            Q[i - 1, i] = chain.lam[i]
        if i > 1:
            Q[i - 1, i - 2] = chain.mu[i]
        Q[i - 1, i - 1] = -(chain.lam[i] + chain.mu[i])
    return Q


class TestHandValues:
    def test_means(self):
        assert_allclose(hitting_mean(_hand_chain()), [1.5, 2.0], rtol=1e-14)

    def test_second_moments(self):
        assert_allclose(hitting_moment2(_hand_chain()), [5.0, 7.0], rtol=1e-14)

    def test_third_moments(self):
        assert_allclose(hitting_moment3(_hand_chain()), [25.5, 36.0], rtol=1e-14)

    def test_laplace_at_one(self):
        assert_allclose(hitting_laplace(_hand_chain(), 1.0),
                        [3.0 / 7.0, 2.0 / 7.0], rtol=1e-14)

    def test_intermediate_target(self):
        """Hitting level 1 from 2 is a bare Exp(2) step."""
        ch = _hand_chain()
        assert_allclose(hitting_mean(ch, target=1), [0.5], rtol=1e-14)
        assert_allclose(hitting_moment2(ch, target=1), [0.5], rtol=1e-14)
        assert_allclose(hitting_laplace(ch, 1.0, target=1), [2.0 / 3.0], rtol=1e-14)


class TestAgainstDenseSolve:
    """Thomas elimination against a dense numpy solve of the same system.

    Rates span one decade either side so the systems stay well enough
    conditioned for a tight cross-algorithm tolerance.
    """

    def test_mean_matches_dense(self):
        rng = np.random.default_rng(404)
        for _ in range(25):
            ch = _random_chain(rng, n_max=30, decades=1.0)
            Q = _dense_generator(ch)
            dense = np.linalg.solve(Q, -np.ones(ch.N))
            assert_allclose(hitting_mean(ch), dense, rtol=1e-8)

    def test_laplace_matches_dense(self):
        rng = np.random.default_rng(405)
        for _ in range(25):
            ch = _random_chain(rng, n_max=30, decades=1.0)
            a = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
            Q = _dense_generator(ch)
            N = ch.N
            # (aI - Q) f = 0 with the absorbing boundary folded into row 1
            A = a * np.eye(N) - Q
            b = np.zeros(N)
            b[0] = ch.mu[1]
            dense = np.linalg.solve(A, b)
            assert_allclose(hitting_laplace(ch, a), dense, rtol=1e-8)


class TestStructuralProperties:
    def test_moments_increase_with_start_level(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            ch = _random_chain(rng)
            m = hitting_mean(ch)
            assert np.all(np.diff(m) > 0)

    def test_jensen_inequalities(self):
        """E T^2 >= (E T)^2 and E T^3 >= E T * E T^2 on random chains."""
        rng = np.random.default_rng(12)
        for _ in range(10):
            ch = _random_chain(rng)
            m, m2, m3 = hitting_mean(ch), hitting_moment2(ch), hitting_moment3(ch)
            assert np.all(m2 >= m ** 2 * (1 - 1e-12))
            assert np.all(m3 >= m2 * m * (1 - 1e-12))

    def test_laplace_in_unit_interval_and_decreasing_in_a(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            ch = _random_chain(rng)
            g1 = hitting_laplace(ch, 0.5)
            g2 = hitting_laplace(ch, 2.0)
            assert np.all((g1 > 0) & (g1 < 1))
            assert np.all(g2 < g1)

    def test_laplace_matches_mean_slope_at_zero(self):
        """(1 - G(a))/a -> E T as a -> 0."""
        rng = np.random.default_rng(14)
        ch = _random_chain(rng, n_max=20)
        a = 1e-7
        approx = (1.0 - hitting_laplace(ch, a)) / a
        assert_allclose(approx, hitting_mean(ch), rtol=1e-5)

    def test_pure_death_closed_forms(self):
        """Without births the solve telescopes: E_i T = sum 1/mu_k.

        from_model relabels the absorbing floor (level 1 for pairwise
        mergers) to state 0, so target=0 is first passage to the floor.
        """
        m = make_model("kingman")
        ch = FiniteChain.from_model(m, N=12)
        mu = np.array([0.0] + [k * (k - 1) / 2.0 for k in range(1, 13)])
        expect = np.cumsum(1.0 / mu[2:])
        assert_allclose(hitting_mean(ch), expect, rtol=1e-13)

    def test_rejects_bad_chains(self):
        with pytest.raises(ValueError):
            FiniteChain(lam=np.array([0.0, 1.0]), mu=np.array([0.0]))
        with pytest.raises(ValueError):
            FiniteChain(lam=np.array([0.0, 1.0, 0.0]),
                        mu=np.array([0.0, -1.0, 2.0]))
