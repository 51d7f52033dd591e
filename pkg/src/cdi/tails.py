"""Certified tail estimation for positive decreasing series.

The analytics layer needs suffix sums like sum_{i >= n} m_i where the terms
are only tabulated up to some anchor level K.  Two certification routes are
provided for the remainder sum_{i > K} f(i):

* block-geometric bound: when the b-step term ratios f(i+b)/f(i) over a
  trailing window are all <= q < 1 and non-increasing, the remainder is at
  most (sum of the last b terms) * q/(1-q).  This certifies genuinely
  geometric tails (exponential, factorial, oscillating death rates) but is
  deliberately rejected for power-like tails, where the window ratio
  underestimates the remainder.

* Euler-Maclaurin: when the terms extend to a smooth function f(x) of a real
  argument, sum_{i>K} f(i) = int_{K+1}^inf f + f(K+1)/2 - f'(K+1)/12
  + f'''(K+1)/720 - f^(5)(K+1)/30240 + R.  The integral is computed by
  adaptive quadrature after the substitution x = a*e^u (which turns
  power-law decay into clean exponential decay), the derivatives by central
  finite differences with step sizes balanced against roundoff, and R is
  proxied by a geometric extrapolation of the derivative magnitudes.  The
  proxy is part of the returned error bound, so callers can degrade to an
  "inconclusive" outcome instead of trusting an uncertified number.

Everything works on *log* terms so that series whose terms underflow
float64 (death rates like (n!)^2) are handled without special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

_EPS = np.finfo(float).eps
LOG_EPS = math.log(_EPS)


class SeriesDivergenceError(ArithmeticError):
    """The series has no finite sum (or decays too slowly to certify one)."""


class TailCertificationError(ArithmeticError):
    """No certification route applies; the tail value would be a guess."""


@dataclass
class TailEstimate:
    """Outcome of a tail certification.

    log_value is the log of the tail mass to *add* to the partial sum
    (-inf when the route only bounds the tail and the bound is folded into
    the error).  log_abs_err bounds the absolute error, in log scale.
    """

    log_value: float
    log_abs_err: float
    method: str
    detail: dict = field(default_factory=dict)


def logsumexp_sorted(log_terms: np.ndarray) -> float:
    if len(log_terms) == 0:
        return float("-inf")
    a = float(np.max(log_terms))
    if a == float("-inf"):
        return a
    return a + math.log(float(np.sum(np.exp(log_terms - a))))


def suffix_logsum(log_terms: np.ndarray, log_tail: float = float("-inf")) -> np.ndarray:
    """log of (sum_{j >= i} exp(log_terms[j]) + exp(log_tail)) for each i."""
    arr = np.append(np.asarray(log_terms, dtype=np.float64), log_tail)
    out = np.logaddexp.accumulate(arr[::-1])[::-1]
    return out[:-1]


def geometric_block_bound(log_terms: np.ndarray, q_cap: float = 0.95,
                          window: int = 64,
                          blocks: tuple = (1, 2, 4, 8)) -> TailEstimate | None:
    """Try to bound sum over terms *after* log_terms[-1] geometrically.

    Examines b-step ratios over the trailing window for each block size b.
    A block certifies when its ratios are finite, at most q_cap, and
    non-increasing (within slack) across the window -- the last condition
    rejects power-like tails, whose window ratios creep upward and would
    otherwise give an invalid bound.  Returns None if no block certifies.
    """
    lt = np.asarray(log_terms, dtype=np.float64)
    if len(lt) and lt[-1] == float("-inf"):
        # the series has already died off exactly (interior zero birth rate)
        return TailEstimate(float("-inf"), float("-inf"), "zero")
    for b in blocks:
        if len(lt) < 2 * b + 8:
            continue
        ratios = lt[b:] - lt[:-b]
        w = ratios[-min(window, len(ratios)):]
        if not np.all(np.isfinite(w)):
            continue
        if np.any(np.diff(w) > 1e-9):        # ratios creeping up: not geometric
            continue
        log_q = float(np.max(w))
        if log_q > math.log(q_cap):
            continue
        q = math.exp(log_q)
        log_bound = logsumexp_sorted(lt[-b:]) + log_q - math.log1p(-q)
        return TailEstimate(float("-inf"), log_bound, "geometric-bound",
                            {"q": q, "block": b})
    return None


def _central_derivs(g, a: float, d_hat: float) -> tuple:
    """g', g''' and g^(5) at a by central differences.

    Step sizes follow the usual truncation/roundoff balance for each order,
    scaled by 1/d_hat where d_hat is the local log-decay rate of g (so x*d
    of order 1 spans one e-folding of the function).
    """
    d = max(d_hat, 1e-12)
    h1 = max(_EPS ** (1 / 3) / d, 1e-9)
    h3 = max(_EPS ** (1 / 5) / d, 1e-7)
    h5 = max(_EPS ** (1 / 7) / d, 1e-5)
    g1 = (g(a + h1) - g(a - h1)) / (2 * h1)
    g3 = (g(a + 2 * h3) - 2 * g(a + h3) + 2 * g(a - h3) - g(a - 2 * h3)) / (2 * h3 ** 3)
    g5 = (g(a + 3 * h5) - 4 * g(a + 2 * h5) + 5 * g(a + h5)
          - 5 * g(a - h5) + 4 * g(a - 2 * h5) - g(a - 3 * h5)) / (2 * h5 ** 5)
    # roundoff floor of each stencil (eps per g evaluation, |g| ~ 1 near a)
    r1 = _EPS / h1
    r3 = 3 * _EPS / h3 ** 3
    r5 = 8 * _EPS / h5 ** 5
    return g1, g3, g5, r1 / 12 + r3 / 720 + r5 / 30240


def euler_maclaurin_tail(log_f, last_index: float,
                         min_power: float = 1.05) -> TailEstimate:
    """Estimate sum_{i > last_index} f(i) for smooth log_f.

    ``log_f`` must accept real scalar arguments >= last_index - O(1).
    Raises SeriesDivergenceError when the terms do not decay fast enough
    for a finite, certifiable sum (effective power <= min_power).
    """
    a = float(last_index) + 1.0
    lfa = float(log_f(a))
    if not math.isfinite(lfa):
        return TailEstimate(float("-inf"), float("-inf"), "zero")
    # effective decay per unit step and per octave
    d_hat = lfa - float(log_f(a + 1.0))
    p_hat = (lfa - float(log_f(2.0 * a))) / math.log(2.0)
    if d_hat <= 1e-12 or p_hat <= min_power:
        raise SeriesDivergenceError(
            f"series terms decay with effective power {p_hat:.3f} at index "
            f"{a:g}: tail sum diverges or cannot be certified")

    def g(x: float) -> float:
        return math.exp(float(log_f(x)) - lfa)

    # integral int_a^inf g(x) dx with x = a e^u; decay is exponential in u
    # (u > 500 would overflow a*e^u before g can report a clean zero)
    integrand = lambda u: 0.0 if u > 500.0 else g(a * math.exp(u)) * a * math.exp(u)
    I, Ierr = quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=300)
    g1, g3, g5, fd_round = _central_derivs(g, a, d_hat)
    total = I + 0.5 - g1 / 12.0 + g3 / 720.0 - g5 / 30240.0
    if total <= 0 or not math.isfinite(total):
        raise SeriesDivergenceError("tail summation produced a non-positive total")
    # remainder proxy: geometric extrapolation of derivative magnitudes,
    # exact for exponential decay and within a small factor for power laws
    g7_est = abs(g5) * (abs(g5) / max(abs(g3), 1e-300))
    proxy = 4.0 * g7_est / 1209600.0 + Ierr + fd_round
    return TailEstimate(lfa + math.log(total), lfa + math.log(max(proxy, 1e-300)),
                        "euler-maclaurin",
                        {"p_hat": p_hat, "d_hat": d_hat, "quad_err": Ierr})
