"""Laplace transforms of descent times and the fast-regime fixed point.

Three related tools live here:

* ``transform_tau``: the exact transform E[exp(-a tau_n)] of a one-step
  descent time for a concrete rate model, via the backward recursion

      G_n(a) = mu_{n+1} / (a + mu_{n+1} + lam_{n+1} (1 - G_{n+1}(a)))

  seeded with the pure-death closure at a high anchor and re-anchored until
  the values stabilize.

* ``solve_fixed_point``: the limiting transform G of the normalized
  last-step time in the fast regime, where the level-to-level structure
  collapses to two numbers: the birth/death ratio limit l in [0, 1) and the
  last-step share limit alpha in (0, 1].  G solves G = H(G) with

      H(g)(a) = 1 / (1 + a (1 - l (1-alpha)) + l (1 - g(a (1-alpha)))) ,

  a sup-norm contraction with constant l.  The discretized operator uses
  monotone piecewise-linear off-grid interpolation: linear interpolation is
  1-Lipschitz in the node values, so the discretized operator provably
  inherits the contraction constant (a smooth monotone cubic would not
  guarantee this).  Below the grid the curve is anchored at (0, 1).

* ``transform_Z``: the transform of the full normalized descent time
  Z = sum_k alpha (1-alpha)^k Z_k, i.e. the convergent product
  prod_k G(a alpha (1-alpha)^k), truncated once the remaining factors are
  provably within 1e-14 of 1 (using 1 - G(x) <= x, from E[Z_k] = 1).

* ``excursion_moments``: first two moments of the number of up-steps made
  during one descent step, from their coupled backward recursions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rates import NEG_INF, ModelValidationError, RateModel
from .tails import SeriesDivergenceError

_MAX_ANCHOR = 1 << 21


# ---------------------------------------------------------------------------
# fast-regime fixed point
# ---------------------------------------------------------------------------

@dataclass
class LaplaceSolution:
    """Converged fixed point G on a log-spaced grid.

    ``a_grid``/``G`` cover the requested range; the internal grid extends
    four decades lower so that the unit-slope behaviour at 0 is resolved
    (the anchor segment joins (0, 1) to the lowest internal node).
    ``residual`` is the self-consistency defect |G - H(G)| on the requested
    grid after convergence.
    """

    l: float
    alpha: float
    a_grid: np.ndarray
    G: np.ndarray
    residual: np.ndarray
    iterations: int
    sup_change: float
    a_internal: np.ndarray = field(repr=False)
    g_internal: np.ndarray = field(repr=False)

    @property
    def sup_residual(self) -> float:
        return float(np.max(self.residual))

    def _interp(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Piecewise-linear in the node values, anchored at (0, 1)."""
        lo = self.a_internal[0]
        out = np.interp(x, self.a_internal, g)
        below = x < lo
        if np.any(below):
            out[below] = 1.0 + (g[0] - 1.0) * (x[below] / lo)
        return out

    def apply_operator(self, g: np.ndarray) -> np.ndarray:
        """One application of the discretized H to node values ``g``."""
        a = self.a_internal
        shrunk = a * (1.0 - self.alpha)
        c = 1.0 - self.l * (1.0 - self.alpha)
        return 1.0 / (1.0 + a * c + self.l * (1.0 - self._interp(shrunk, g)))

    def eval(self, a) -> np.ndarray | float:
        """G(a) for a >= 0; above the grid, descend through H until inside."""
        arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
        if np.any(arr < 0):
            raise ModelValidationError("transform argument must be >= 0")
        hi = self.a_internal[-1]
        out = self._interp(np.minimum(arr, hi), self.g_internal)
        over = np.where(arr > hi)[0]
        c = 1.0 - self.l * (1.0 - self.alpha)
        shrink = 1.0 - self.alpha
        for i in over:
            chain = []
            x = float(arr[i])
            while x > hi:
                chain.append(x)
                x *= shrink
                if x == 0.0:
                    break
            gval = float(self._interp(np.array([x]), self.g_internal)[0])
            for xc in reversed(chain):
                gval = 1.0 / (1.0 + xc * c + self.l * (1.0 - gval))
            out[i] = gval
        return float(out[0]) if np.asarray(a).ndim == 0 else out

    def derivative_at_zero(self) -> float:
        """-G'(0+) by Richardson extrapolation on steps 1e-4 and 1e-5.

        Equals E[Z_0] = 1 for every (l, alpha); useful as a solution check.
        Both abscissae sit exactly on the internal grid, so no interpolation
        error enters, and the leading quadratic truncation term is pushed
        below 1e-8 even for strongly clustered (high-l, low-alpha) limits.
        """
        d4 = (1.0 - self.eval(1e-4)) / 1e-4
        d5 = (1.0 - self.eval(1e-5)) / 1e-5
        return float((10.0 * d5 - d4) / 9.0)


def solve_fixed_point(l: float, alpha: float, a_min: float = 1e-4,
                      a_max: float = 1e3, num: int = 256,
                      tol: float = 1e-12, max_iter: int = 200_000) -> LaplaceSolution:
    """Solve G = H(G) by damped-free fixed-point iteration from g = 1.

    Stops when the sup-norm change is below tol*(1-l), which bounds the
    distance to the true fixed point by tol (geometric-series argument).
    Rejects l >= 1 (no contraction) and alpha outside (0, 1].
    """
    if not 0.0 <= l < 1.0:
        raise ModelValidationError("ratio limit l must be in [0, 1)")
    if not 0.0 < alpha <= 1.0:
        raise ModelValidationError("last-step share alpha must be in (0, 1]")
    if not (0 < a_min < a_max) or num < 16:
        raise ModelValidationError("need 0 < a_min < a_max and num >= 16")
    a_req = np.geomspace(a_min, a_max, num)
    per_decade = (num - 1) / math.log10(a_max / a_min)
    n_ext = max(8, int(math.ceil(4 * per_decade)))
    ext = np.geomspace(a_min * 1e-4, a_min, n_ext + 1)[:-1]
    # keep the derivative-check abscissae exactly on the grid
    a_int = np.unique(np.concatenate((ext, a_req, [1e-3, 1e-4, 1e-5])))

    sol = LaplaceSolution(l=float(l), alpha=float(alpha), a_grid=a_req,
                          G=np.ones_like(a_req), residual=np.zeros_like(a_req),
                          iterations=0, sup_change=math.inf,
                          a_internal=a_int, g_internal=np.ones_like(a_int))
    g = np.ones_like(a_int)
    target = tol * (1.0 - l)
    it = 0
    while it < max_iter:
        g_new = sol.apply_operator(g)
        change = float(np.max(np.abs(g_new - g)))
        g = g_new
        it += 1
        if change <= target:
            break
    else:
        raise ArithmeticError("fixed-point iteration did not converge")
    sol.g_internal = g
    sol.iterations = it
    sol.sup_change = change
    sol.G = sol._interp(a_req, g)
    res_full = np.abs(sol.apply_operator(g) - g)
    sol.residual = np.interp(a_req, a_int, res_full)
    return sol


def transform_Z(sol: LaplaceSolution, a, tol: float = 1e-14):
    """Transform of the whole normalized descent time from infinity.

    prod_{k>=0} G(a alpha (1-alpha)^k); remaining factors after truncation
    differ from 1 by at most sum of the remaining arguments, kept below
    ``tol``.  For alpha = 1 the product has a single factor.
    """
    arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if np.any(arr < 0):
        raise ModelValidationError("transform argument must be >= 0")
    out = np.zeros_like(arr)
    shrink = 1.0 - sol.alpha
    x = arr * sol.alpha
    remaining = arr * shrink          # bound on sum of untaken arguments
    guard = 0
    while True:
        out += np.log(np.maximum(sol.eval(x), 1e-300))
        if np.all(remaining <= tol) or sol.alpha == 1.0:
            break
        x = x * shrink
        remaining *= shrink
        guard += 1
        if guard > 10_000:
            raise ArithmeticError("transform product did not truncate")
    res = np.exp(out)
    return float(res[0]) if np.asarray(a).ndim == 0 else res


# ---------------------------------------------------------------------------
# exact one-step transforms for a concrete model
# ---------------------------------------------------------------------------

def _tau_sweep(model: RateModel, n: int, anchor: int, a: np.ndarray) -> np.ndarray:
    """Backward sweep from the anchor down to level n.

    Works with x_k = (1 - G_k)/G_k ... no: directly with G in [0, 1]; the
    ratio a/mu is formed in log scale so explosive death rates cannot
    overflow.
    """
    levels = np.arange(n + 1, anchor + 2)
    log_lam, log_mu = model.log_rates(levels)
    log_a = np.where(a > 0, np.log(np.maximum(a, 1e-300)), NEG_INF)
    # seed: pure-death closure at the anchor, G = 1/(1 + a/mu_{anchor+1})
    G = 1.0 / (1.0 + np.exp(log_a - log_mu[-1]))
    for j in range(len(levels) - 2, -1, -1):
        lm, ll = log_mu[j], log_lam[j]
        x = np.exp(log_a - lm)
        if ll != NEG_INF:
            x = x + math.exp(ll - lm) * (1.0 - G)
        G = 1.0 / (1.0 + x)
    return G


def transform_tau(model: RateModel, n: int, a, rel_tol: float = 1e-12):
    """E[exp(-a tau_n)] for the one-step descent from n+1 to n.

    ``a`` may be a scalar or array of nonnegative reals.  For truncated
    tables the anchor sits at the top level and the sweep is exact; for
    infinite models the anchor is doubled until the value stabilizes.
    """
    arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if np.any(arr < 0):
        raise ModelValidationError("transform argument must be >= 0")
    f = model.floor
    if n < f:
        raise ModelValidationError(f"level {n} is below the absorbing floor {f}")
    if model.finite:
        N = model.table_max
        if n > N - 1:
            raise ModelValidationError(f"level {n} beyond truncated table")
        G = _tau_sweep(model, n, N - 1, arr)
        return float(G[0]) if np.asarray(a).ndim == 0 else G
    anchor = max(2 * (n + 1), n + 64)
    prev = _tau_sweep(model, n, anchor, arr)
    while True:
        anchor *= 2
        if anchor > _MAX_ANCHOR:
            raise ArithmeticError("transform sweep did not stabilize")
        cur = _tau_sweep(model, n, anchor, arr)
        if float(np.max(np.abs(cur - prev))) <= rel_tol:
            return float(cur[0]) if np.asarray(a).ndim == 0 else cur
        prev = cur


# ---------------------------------------------------------------------------
# excursion heights
# ---------------------------------------------------------------------------

def excursion_moments(model: RateModel, n_lo: int, n_hi: int,
                      rel_tol: float = 1e-10) -> tuple:
    """(E[H_n], E[H_n^2]) for n in [n_lo, n_hi].

    H_n counts the up-steps made between first reaching n (from above) and
    first reaching n-1.  The moments obey the coupled backward recursions

        E H_n   = (lam_n/mu_n) (1 + E H_{n+1})
        E H_n^2 = (lam_n/mu_n) (E H_{n+1}^2 + 1
                   + 2 (E H_n + E H_{n+1} + E H_n E H_{n+1}))

    seeded with 0 at a high anchor (exact for pure death, contracting like
    the lam/mu product otherwise).  Raises SeriesDivergenceError when the
    ratio does not stay below 1 near the anchor (heights then blow up).
    """
    if n_lo < model.floor + 1 or n_hi < n_lo:
        raise ModelValidationError("need floor < n_lo <= n_hi")
    if model.pure_death:
        z = np.zeros(n_hi - n_lo + 1)
        return z, z.copy()

    def sweep(anchor: int):
        if model.finite:
            anchor = min(anchor, model.table_max)
        levels = np.arange(n_lo, anchor + 1)
        log_lam, log_mu = model.log_rates(levels)
        ratio = np.exp(log_lam - log_mu)
        tail = ratio[len(ratio) // 2:]
        if not model.finite and np.max(tail) >= 1.0:
            raise SeriesDivergenceError(
                "lam/mu reaches 1 near the anchor: excursion heights diverge")
        h = np.zeros(len(levels) + 1)
        s = np.zeros(len(levels) + 1)
        for j in range(len(levels) - 1, -1, -1):
            q = ratio[j]
            h[j] = q * (1.0 + h[j + 1])
            s[j] = q * (s[j + 1] + 1.0 + 2.0 * (h[j] + h[j + 1] + h[j] * h[j + 1]))
        k = n_hi - n_lo + 1
        return h[:k], s[:k]

    if model.finite:
        res = sweep(model.table_max)
        return res
    anchor = max(2 * n_hi, n_hi + 64)
    h_prev, s_prev = sweep(anchor)
    while True:
        anchor *= 2
        if anchor > _MAX_ANCHOR:
            raise ArithmeticError("excursion recursion did not stabilize")
        h, s = sweep(anchor)
        scale = max(float(np.max(s_prev)), 1e-300)
        if (float(np.max(np.abs(h - h_prev))) <= rel_tol * max(float(np.max(h_prev)), 1e-300)
                and float(np.max(np.abs(s - s_prev))) <= rel_tol * scale):
            return h, s
        h_prev, s_prev = h, s
