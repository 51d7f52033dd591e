"""Independent finite-chain reference solver for hitting-time quantities.

Everything in :mod:`cdi.analytics` and :mod:`cdi.laplace` rests on backward
recursions and tail certification.  This module provides the cross-check
route: materialize the chain on a finite box {0, ..., N} (with lam_N = 0 so
nothing escapes) and solve the exact linear systems for hitting-time moments
and Laplace transforms by Thomas elimination on the tridiagonal generator.

For the first-passage time T = inf{t : X_t = target} started from i > target
the systems are, with b_i = shift + lam_i + mu_i,

        b_i x_i - lam_i x_{i+1} - mu_i x_{i-1} = d_i ,   target < i <= N,

    mean      shift = 0, d = 1,          x_target = 0
    2nd mom   shift = 0, d = 2 * mean,   x_target = 0
    3rd mom   shift = 0, d = 3 * m2,     x_target = 0
    laplace   shift = a, d = 0,          x_target = 1   (x_i = E_i e^{-a T})

Thomas elimination is used directly (no pivoting): the matrix is strictly
diagonally dominant for shift >= 0, mu_i > 0.

Intended for N up to ~1e4; rates are taken in linear scale, so models whose
rates overflow float64 must be boxed at a level where they still fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rates import ModelValidationError, RateModel


@dataclass(frozen=True)
class FiniteChain:
    """Explicit rates on {0..N} with state 0 absorbing and lam_N = 0."""

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        if lam.shape != mu.shape or lam.ndim != 1 or len(lam) < 2:
            raise ModelValidationError("lam and mu must be equal-length vectors, N >= 1")
        if len(lam) > 10_001:
            raise ModelValidationError("reference solver is limited to N <= 1e4")
        if lam[0] != 0 or mu[0] != 0:
            raise ModelValidationError("state 0 must be absorbing (lam_0 = mu_0 = 0)")
        if lam[-1] != 0:
            raise ModelValidationError("lam_N must be 0 (no escape above the box)")
        if np.any(mu[1:] <= 0):
            raise ModelValidationError("mu_i must be positive for 1 <= i <= N")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)) or not np.all(np.isfinite(mu)):
            raise ModelValidationError("rates must be finite and nonnegative")

    @property
    def N(self) -> int:
        return len(self.lam) - 1

    @classmethod
    def from_model(cls, model: RateModel, N: int) -> "FiniteChain":
        """Box a rate model at level N (its lam_N is forced to 0).

        The model's absorbing floor is relabeled to state 0, so a chain
        whose floor is f covers original levels f..N and ``target = k``
        means "first passage to level f + k".
        """
        f = model.floor
        if N <= f:
            raise ModelValidationError(f"N must exceed the absorbing floor {f}")
        n = np.arange(f, N + 1)
        log_lam, log_mu = model.log_rates(n)
        with np.errstate(over="raise"):
            try:
                lam = np.exp(log_lam)
                mu = np.exp(log_mu)
            except FloatingPointError:
                raise ModelValidationError(
                    f"rates overflow float64 below level {N}; box the chain lower") from None
        lam[0] = mu[0] = 0.0
        lam[-1] = 0.0
        return cls(lam=lam, mu=mu)


def _solve(chain: FiniteChain, target: int, shift: float, rhs: np.ndarray,
           boundary: float) -> np.ndarray:
    """Solve the tridiagonal hitting-time system on levels target+1..N.

    Thomas elimination runs from the closed top row downward.  The usual
    diagonal update diag - sub*sup/denom cancels badly when births dominate
    deaths (diag = shift + lam + mu, and the product approaches lam + mu),
    so the diagonal is carried as mu_i + g_i with the nonnegative excess

        g_i = shift + lam_i * g_{i+1} / (mu_{i+1} + g_{i+1}),   g_N = shift,

    which involves only positive additions and multiplications.  For
    shift = 0 the excess vanishes identically and the elimination reduces
    to the exact telescoping of the moment recursion; componentwise
    relative error stays O(N * eps) for every shift >= 0.
    """
    if not 0 <= target < chain.N:
        raise ModelValidationError(f"target must be in [0, N); got {target}")
    lam = chain.lam[target + 1:]
    mu = chain.mu[target + 1:]
    n = len(lam)
    g = np.empty(n)
    e = np.empty(n)
    g[-1] = shift
    e[-1] = rhs[-1]
    for k in range(n - 2, -1, -1):
        w = lam[k] / (mu[k + 1] + g[k + 1])
        g[k] = shift + w * g[k + 1]
        e[k] = rhs[k] + w * e[k + 1]
    x = np.empty(n)
    prev = boundary
    for k in range(n):
        prev = (e[k] + mu[k] * prev) / (mu[k] + g[k])
        x[k] = prev
    return x


def hitting_mean(chain: FiniteChain, target: int = 0) -> np.ndarray:
    """E_i[T_target] for i = target+1..N (vector of length N - target)."""
    ones = np.ones(chain.N - target)
    return _solve(chain, target, 0.0, ones, 0.0)


def hitting_moment2(chain: FiniteChain, target: int = 0) -> np.ndarray:
    """E_i[T_target^2] for i = target+1..N."""
    m = hitting_mean(chain, target)
    return _solve(chain, target, 0.0, 2.0 * m, 0.0)


def hitting_moment3(chain: FiniteChain, target: int = 0) -> np.ndarray:
    """E_i[T_target^3] for i = target+1..N."""
    m2 = hitting_moment2(chain, target)
    return _solve(chain, target, 0.0, 3.0 * m2, 0.0)


def hitting_laplace(chain: FiniteChain, a: float, target: int = 0) -> np.ndarray:
    """E_i[exp(-a T_target)] for i = target+1..N."""
    if a < 0:
        raise ModelValidationError("laplace argument a must be >= 0")
    zeros = np.zeros(chain.N - target)
    return _solve(chain, target, a, zeros, 1.0)
