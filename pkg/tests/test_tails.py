"""Tail certification: geometric block bounds and smooth-tail summation."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdi.tails import (
    SeriesDivergenceError,
    euler_maclaurin_tail,
    geometric_block_bound,
    logsumexp_sorted,
    suffix_logsum,
)


class TestLogsumHelpers:
    def test_logsumexp_matches_direct(self):
        rng = np.random.default_rng(3)
        terms = rng.uniform(-40, 2, size=200)
        assert_allclose(logsumexp_sorted(terms),
                        math.log(np.sum(np.exp(terms))), rtol=1e-13)

    def test_logsumexp_empty_and_all_neg_inf(self):
        assert logsumexp_sorted(np.array([])) == -math.inf
        assert logsumexp_sorted(np.array([-math.inf, -math.inf])) == -math.inf

    def test_suffix_logsum_is_reversed_cumulative(self):
        rng = np.random.default_rng(4)
        terms = rng.uniform(-5, 5, size=50)
        got = suffix_logsum(terms)
        direct = [math.log(np.sum(np.exp(terms[i:]))) for i in range(50)]
        assert_allclose(got, direct, rtol=1e-12)

    def test_suffix_logsum_folds_in_tail(self):
        terms = np.log(np.array([1.0, 2.0]))
        got = suffix_logsum(terms, log_tail=math.log(4.0))
        assert_allclose(np.exp(got), [7.0, 6.0], rtol=1e-14)


class TestGeometricBlockBound:
    def test_exact_geometric_series(self):
        """For terms q^k the bound equals the true remainder q^{K+1}/(1-q)."""
        q = 0.5
        log_terms = np.arange(60) * math.log(q)
        est = geometric_block_bound(log_terms)
        assert est is not None
        true_tail = math.log(q ** 60 / (1 - q))
        assert est.log_abs_err >= true_tail - 1e-12
        assert est.log_abs_err <= true_tail + math.log(4.0)

    def test_rejects_slow_power_tail(self):
        """1/k^2 ratios creep toward 1; no geometric certificate exists."""
        k = np.arange(1, 200)
        est = geometric_block_bound(-2.0 * np.log(k))
        assert est is None

    def test_oscillating_terms_certify_with_wider_block(self):
        """Period-2 terms defeat block 1 but certify at an even block size."""
        k = np.arange(80)
        log_terms = -0.7 * k + 0.5 * (k % 2)
        est = geometric_block_bound(log_terms)
        assert est is not None
        assert est.detail["block"] > 1

    def test_zero_tail_short_circuit(self):
        est = geometric_block_bound(np.array([0.0, -1.0, -math.inf]))
        assert est is not None
        assert est.method == "zero"
        assert est.log_abs_err == -math.inf


class TestEulerMaclaurinTail:
    def test_zeta_tail(self):
        """Tail of sum 1/k^2 from 101 on, against pi^2/6 minus the head."""
        log_f = lambda x: -2.0 * math.log(x)
        est = euler_maclaurin_tail(log_f, last_index=100)
        true = math.pi ** 2 / 6.0 - float(np.sum(1.0 / np.arange(1.0, 101.0) ** 2))
        assert_allclose(math.exp(est.log_value), true, rtol=1e-10)
        assert est.log_abs_err <= math.log(true) + math.log(1e-6)

    def test_exponential_tail(self):
        """Tail of sum e^{-k}: exactly e^{-(K+1)}/(1 - 1/e).

        Per-step decay of order one is the hardest case for the correction
        series; the value is good to ~5e-7 here and, crucially, the
        certified error bound covers the actual defect.
        """
        est = euler_maclaurin_tail(lambda x: -x, last_index=30)
        true = math.exp(-31.0) / (1.0 - math.exp(-1.0))
        assert_allclose(math.exp(est.log_value), true, rtol=1e-5)
        defect = abs(math.exp(est.log_value) - true)
        assert defect <= math.exp(est.log_abs_err)

    def test_harmonic_series_rejected(self):
        with pytest.raises(SeriesDivergenceError):
            euler_maclaurin_tail(lambda x: -math.log(x), last_index=50)

    def test_error_bound_is_honest(self):
        """Certified error really bounds the defect for power tails.

        Reference values are Hurwitz zeta tails zeta(p, K+1).
        """
        from scipy.special import zeta

        for p in (1.5, 2.0, 3.0, 5.0):
            log_f = lambda x, p=p: -p * math.log(x)
            est = euler_maclaurin_tail(log_f, last_index=200)
            true = float(zeta(p, 201))
            defect = abs(math.exp(est.log_value) - true)
            assert defect <= math.exp(est.log_abs_err)
            assert_allclose(math.exp(est.log_value), true, rtol=1e-12)

    def test_interior_zero_reports_dead_tail(self):
        est = euler_maclaurin_tail(lambda x: -math.inf, last_index=10)
        assert est.method == "zero"
        assert est.log_value == -math.inf
