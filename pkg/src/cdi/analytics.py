"""Hitting-time analytics for birth-death chains descending from infinity.

For a chain with birth rates lam_n and death rates mu_n (state 0 absorbing),
let tau_n denote the passage time from level n+1 down to level n and T_n the
passage time to n from far above.  This module computes, per level,

    m_n   = E[tau_n]               (mean one-step descent)
    m2_n  = E[tau_n^2]
    m3_n  = E[tau_n^3]
    v_n   = Var[tau_n]
    e_inf(n)   = sum_{i>=n} m_i    = E[T_n] started from infinity
    var_inf(n) = sum_{i>=n} v_i    = Var[T_n] started from infinity
    r_n   = m_n / e_inf(n)         (last-step share of the descent time)

The moments satisfy backward recursions driven by the one-step rates:

    m_{n-1}  = (1 + lam_n * m_n) / mu_n
    m2_{n-1} = (lam_n/mu_n) * m2_n + 2 * m_{n-1}^2
    m3_{n-1} = (lam_n/mu_n) * m3_n + 6 * m_{n-1} * v_{n-1}

run entirely in log scale so that explosive death rates (factorial,
exponential) do not overflow.  For pure-death chains the recursions collapse
to closed forms (m = 1/mu, m2 = 2m^2, m3 = 6m^3).  For chains with births
the anchor value at the top level is seeded with the pure-death closure and
the anchor is doubled until the requested levels stabilize -- the seed error
contracts by the product of lam/mu ratios on the way down.

Suffix sums get certified tails from :mod:`cdi.tails`: a block-geometric
bound when the term ratios are genuinely geometric, else Euler-Maclaurin
summation on the smooth real-argument extension of the level functions.
When neither route certifies to the requested tolerance the computation
raises TailCertificationError rather than returning an uncertified number.

>>> from cdi import make_model, moment_table
>>> t = moment_table(make_model("kingman"), n_hi=100)
>>> round(t.S, 12)            # total descent time from infinity
2.0
>>> round(t.e_inf[t.idx(50)], 12)
0.04
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .rates import NEG_INF, ModelValidationError, RateModel, validate
from .tails import (
    SeriesDivergenceError,
    TailCertificationError,
    TailEstimate,
    euler_maclaurin_tail,
    geometric_block_bound,
    suffix_logsum,
)

LOG2 = math.log(2.0)
LOG3 = math.log(3.0)
LOG4 = math.log(4.0)
LOG6 = math.log(6.0)
_EPS = float(np.finfo(float).eps)

_MAX_ANCHOR_PURE = 1 << 24
_MAX_ANCHOR_BIRTH = 1 << 21

HOLDS = "holds"
FAILS = "fails"
INCONCLUSIVE = "inconclusive"
HOLDS_TO_HORIZON = "holds-to-horizon"


class NoDescentError(ArithmeticError):
    """Births dominate deaths: the chain does not come down from infinity."""


class RangeQueryError(LookupError):
    """A speed/ratio query fell outside the tabulated range."""


def _ladd(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


# ---------------------------------------------------------------------------
# backward recursions
# ---------------------------------------------------------------------------

def _pure_death_logs(log_mu_above: np.ndarray):
    """Closed forms for levels lo..hi given log mu at lo+1..hi+1."""
    log_m = -log_mu_above
    log_m2 = LOG2 + 2.0 * log_m
    log_m3 = LOG6 + 3.0 * log_m
    log_v = 2.0 * log_m
    return log_m, log_m2, log_m3, log_v


def _birth_death_logs(log_lam: np.ndarray, log_mu: np.ndarray):
    """Backward recursion for levels lo..hi.

    ``log_lam``/``log_mu`` cover levels lo..hi+1 (index j <-> level lo+j);
    the seed at level hi is the pure-death closure using mu_{hi+1}, which is
    exact when lam_{hi+1} = 0 and otherwise must be washed out by anchoring
    high enough (the caller's job).
    """
    L = len(log_lam) - 1           # number of output levels
    log_m = np.empty(L)
    log_m2 = np.empty(L)
    log_m3 = np.empty(L)
    log_v = np.empty(L)
    log_m[L - 1] = -log_mu[L]
    log_m2[L - 1] = LOG2 + 2.0 * log_m[L - 1]
    log_m3[L - 1] = LOG6 + 3.0 * log_m[L - 1]
    log_v[L - 1] = 2.0 * log_m[L - 1]
    for j in range(L - 1, 0, -1):
        la = log_lam[j]
        mu = log_mu[j]
        log_m[j - 1] = _ladd(0.0, la + log_m[j]) - mu
        log_m2[j - 1] = _ladd(la - mu + log_m2[j], LOG2 + 2.0 * log_m[j - 1])
        # v = m2 - m^2; the recursion guarantees m2 >= 2 m^2 so no cancellation
        log_v[j - 1] = log_m2[j - 1] + math.log1p(
            -math.exp(2.0 * log_m[j - 1] - log_m2[j - 1]))
        log_m3[j - 1] = _ladd(la - mu + log_m3[j], LOG6 + log_m[j - 1] + log_v[j - 1])
    return log_m, log_m2, log_m3, log_v


def _smooth_level_fns(model: RateModel, x_ref: float):
    """(log_m(x), log_v(x), log_lyap(x)) on real x, or (None,)*3.

    lyap(x) is the third-absolute-moment bound m3 + 3 m m2 + 4 m^3.  For
    chains with births the values come from the same backward recursion run
    on the real-shifted grid x, x+1, ..., x+K with a pure-death seed; K is
    calibrated once at x_ref so the seed error is below 1e-13.
    """
    if model.smooth_from is None:
        return None, None, None
    if model.pure_death:
        def log_m(x: float) -> float:
            return -float(model.smooth_log_mu(x + 1.0))

        return (log_m,
                lambda x: 2.0 * log_m(x),
                lambda x: math.log(16.0) + 3.0 * log_m(x))

    def _eval(x: float, K: int):
        grid = x + np.arange(K + 2, dtype=np.float64)
        lmu = np.asarray(model.smooth_log_mu(grid), dtype=np.float64)
        ll = model.smooth_log_lam(grid)
        llam = (np.full(K + 2, NEG_INF) if ll is None
                else np.asarray(ll, dtype=np.float64))
        lm, lm2, lm3, lv = _birth_death_logs(llam, lmu)
        return lm[0], lm2[0], lm3[0], lv[0]

    K = 64
    while K < 4096:
        a = _eval(x_ref, K)
        b = _eval(x_ref, 2 * K)
        if all(abs(u - v) <= 1e-13 + 1e-13 * abs(v) for u, v in zip(a, b)):
            break
        K *= 2
    K_final = 2 * K

    def log_m(x: float) -> float:
        return _eval(x, K_final)[0]

    def log_v(x: float) -> float:
        return _eval(x, K_final)[3]

    def log_lyap(x: float) -> float:
        lm, lm2, lm3, _ = _eval(x, K_final)
        return _lyap_term(lm, lm2, lm3)

    return log_m, log_v, log_lyap


def _lyap_term(lm: float, lm2: float, lm3: float) -> float:
    """log of the E|tau - m|^3 bound m3 + 3 m m2 + 4 m^3."""
    return _ladd(_ladd(lm3, LOG3 + lm + lm2), LOG4 + 3.0 * lm)


# ---------------------------------------------------------------------------
# certified suffix sums
# ---------------------------------------------------------------------------

def _certified_suffix(log_terms: np.ndarray, idx_hi: int, smooth_log_f,
                      anchor_level: int, rel_tol: float):
    """Suffix-sum log_terms (levels lo..anchor) with a certified tail.

    Returns (log_suffix array, rel_err, method) or None when the caller
    should extend the anchor and retry.  Raises TailCertificationError when
    no route can ever certify (no geometric trend, no smooth extension).
    """
    est: TailEstimate | None = geometric_block_bound(log_terms)
    if est is not None and est.method == "zero":
        return suffix_logsum(log_terms), 0.0, "finite"
    log_partial = suffix_logsum(log_terms[idx_hi:])[0]
    if est is not None:
        rel = math.exp(min(est.log_abs_err - log_partial, 50.0))
        if rel <= rel_tol:
            return suffix_logsum(log_terms), rel, est.method
        # geometric trend confirmed but the bound is too coarse at this
        # anchor: fall through to Euler-Maclaurin when available, else ask
        # the caller to extend the anchor
    if smooth_log_f is not None:
        try:
            em = euler_maclaurin_tail(smooth_log_f, float(anchor_level))
        except SeriesDivergenceError:
            if est is not None:
                return None              # geometric route just needs a higher anchor
            raise
        log_total = _ladd(log_partial, em.log_value)
        rel = math.exp(min(em.log_abs_err - log_total, 50.0))
        if rel <= rel_tol:
            return suffix_logsum(log_terms, log_tail=em.log_value), rel, em.method
        return None
    if est is not None:
        return None                      # geometric but anchor too low: extend
    raise TailCertificationError(
        "suffix tail cannot be certified: term ratios are not geometric and "
        "the rates have no smooth extension (oscillating rates?)")


# ---------------------------------------------------------------------------
# the moment table
# ---------------------------------------------------------------------------

@dataclass
class MomentTable:
    """Per-level descent analytics over levels floor..n_hi.

    All log_* arrays are aligned with ``levels``.  Linear-scale properties
    exponentiate on the fly and may underflow to 0 for explosive models;
    the log columns are always finite (log_pi may be -inf for pure-death
    chains, where the natural-scale weights beyond the first level are
    exactly zero).  For finite (truncated) models, e_inf/var_inf/r describe
    the descent from the top tabulated level instead of from infinity.

    Arrays are shared with an internal cache; treat them as read-only.
    """

    model: RateModel
    levels: np.ndarray
    log_pi: np.ndarray
    log_m: np.ndarray
    log_m2: np.ndarray
    log_m3: np.ndarray
    log_v: np.ndarray
    log_e: np.ndarray
    log_var: np.ndarray
    rel_bound: float
    tail_method: str
    anchor: int
    meta: dict = field(default_factory=dict)

    @property
    def floor(self) -> int:
        return int(self.levels[0])

    @property
    def n_hi(self) -> int:
        return int(self.levels[-1])

    def idx(self, n: int) -> int:
        i = int(n) - self.floor
        if not 0 <= i < len(self.levels):
            raise RangeQueryError(f"level {n} outside table [{self.floor}, {self.n_hi}]")
        return i

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def m2(self) -> np.ndarray:
        return np.exp(self.log_m2)

    @property
    def m3(self) -> np.ndarray:
        return np.exp(self.log_m3)

    @property
    def var_tau(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def e_inf(self) -> np.ndarray:
        return np.exp(self.log_e)

    @property
    def var_inf(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_m - self.log_e)

    @property
    def S(self) -> float:
        """Total expected descent time from infinity to the floor."""
        return float(np.exp(self.log_e[0]))

    def columns(self) -> dict:
        """Column dict matching the delimited-output schema."""
        return {
            "n": self.levels,
            "log_pi": self.log_pi,
            "m": self.m,
            "m2": self.m2,
            "m3": self.m3,
            "var_tau": self.var_tau,
            "e_inf": self.e_inf,
            "var_inf": self.var_inf,
            "r": self.r,
        }


def _log_pi_column(log_lam: np.ndarray, log_mu: np.ndarray) -> np.ndarray:
    """Natural-scale weights relative to the floor (index 0 of the arrays).

    pi_{f+1} = 1/mu_{f+1}, pi_{n+1} = pi_n * lam_n / mu_{n+1}; the floor row
    itself gets the reference weight 1 (log 0).  -inf entries are exact
    zero weights (pure-death chains beyond the first level).
    """
    L = len(log_lam) - 1
    out = np.zeros(L)
    if L >= 2:
        inc = np.empty(L - 1)
        inc[0] = -log_mu[1]
        if L >= 3:
            inc[1:] = log_lam[1:L - 1] - log_mu[2:L]
        out[1:] = np.cumsum(inc)
    return out


@lru_cache(maxsize=12)
def _build_table(model: RateModel, n_hi: int, rel_tol: float,
                 suffix: bool) -> MomentTable:
    f = model.floor
    if n_hi <= f:
        raise ModelValidationError(
            f"n_hi must exceed the absorbing floor ({f}) of the model")

    # finite chains: anchor at N-1 where the pure-death seed is exact
    if model.finite:
        N = model.table_max
        if n_hi > N - 1:
            raise ModelValidationError(
                f"n_hi must be <= N-1 = {N - 1} for a truncated table")
        lo, hi = f, N - 1
        n_all = np.arange(lo, hi + 2)
        log_lam, log_mu = model.log_rates(n_all)
        lm, lm2, lm3, lv = _birth_death_logs(log_lam, log_mu)
        log_e = suffix_logsum(lm)
        log_var = suffix_logsum(lv)
        sl = slice(0, n_hi - lo + 1)
        return MomentTable(
            model=model, levels=n_all[:-1][sl],
            log_pi=_log_pi_column(log_lam, log_mu)[sl],
            log_m=lm[sl], log_m2=lm2[sl], log_m3=lm3[sl], log_v=lv[sl],
            log_e=log_e[sl], log_var=log_var[sl],
            rel_bound=64 * _EPS * (hi - lo + 1), tail_method="finite", anchor=hi,
            meta={"finite": True})

    # quick structural screen: births persistently dominating deaths
    diag = validate(model, horizon=max(1024, min(2 * n_hi, 8192)))
    if diag.ratio_liminf >= 1.0 - 1e-9:
        raise NoDescentError(
            "birth/death ratio stays >= 1 over the diagnostic window; "
            "the chain does not come down from infinity")

    smooth_m = smooth_v = smooth_b = None
    want_smooth = model.smooth_from is not None

    if model.pure_death:
        M = n_hi + 64
        stab_bound = 0.0
        prev = None
        while True:
            n_all = np.arange(f, M + 2)
            _, log_mu = model.log_rates(n_all)
            lm, lm2, lm3, lv = _pure_death_logs(log_mu[1:])
            if want_smooth and smooth_m is None:
                smooth_m, smooth_v, smooth_b = _smooth_level_fns(model, float(M))
            got = _try_suffixes(lm, lv, n_hi - f, smooth_m, smooth_v, M,
                                rel_tol, suffix)
            if got is not None:
                break
            M *= 2
            if M > _MAX_ANCHOR_PURE:
                raise TailCertificationError(
                    f"could not certify suffix tails below anchor {_MAX_ANCHOR_PURE}")
        log_lam = np.full(len(n_all), NEG_INF)
    else:
        M = 1 << max(8, int(math.ceil(math.log2(max(2 * n_hi, 256)))))
        prev = None
        while True:
            n_all = np.arange(f, M + 2)
            log_lam, log_mu = model.log_rates(n_all)
            lm, lm2, lm3, lv = _birth_death_logs(log_lam, log_mu)
            k = n_hi - f + 1
            stable = prev is not None and all(
                float(np.max(np.abs(cur[:k] - old[:k]))) <= max(rel_tol / 8, 64 * _EPS)
                for cur, old in ((lm, prev[0]), (lm2, prev[1]), (lm3, prev[2])))
            if stable:
                if want_smooth and smooth_m is None:
                    smooth_m, smooth_v, smooth_b = _smooth_level_fns(model, float(M))
                got = _try_suffixes(lm, lv, n_hi - f, smooth_m, smooth_v, M,
                                    rel_tol, suffix)
                if got is not None:
                    break
            prev = (lm, lm2, lm3)
            M *= 2
            if M > _MAX_ANCHOR_BIRTH:
                raise TailCertificationError(
                    f"moment recursion did not stabilize below anchor {_MAX_ANCHOR_BIRTH}")
        stab_bound = max(rel_tol / 8, 64 * _EPS)

    log_e, log_var, tail_rel, tail_method = got
    sl = slice(0, n_hi - f + 1)
    accum = 8 * _EPS * math.sqrt(max(M - f, 2))
    rel_bound = tail_rel + stab_bound + accum
    return MomentTable(
        model=model, levels=n_all[:-1][sl],
        log_pi=_log_pi_column(log_lam, log_mu)[sl],
        log_m=lm[sl], log_m2=lm2[sl], log_m3=lm3[sl], log_v=lv[sl],
        log_e=log_e[sl] if log_e is not None else np.full(n_hi - f + 1, np.nan),
        log_var=log_var[sl] if log_var is not None else np.full(n_hi - f + 1, np.nan),
        rel_bound=rel_bound, tail_method=tail_method, anchor=M,
        meta={"smooth": want_smooth, "lyap_smooth": smooth_b is not None})


def _try_suffixes(lm, lv, idx_hi, smooth_m, smooth_v, M, rel_tol, suffix):
    """Suffix sums for both m and v, or None to request a higher anchor."""
    if not suffix:
        return None, None, 0.0, "skipped"
    res_e = _certified_suffix(lm, idx_hi, smooth_m, M, rel_tol / 2)
    if res_e is None:
        return None
    res_v = _certified_suffix(lv, idx_hi, smooth_v, M, rel_tol / 2)
    if res_v is None:
        return None
    log_e, rel_e, meth_e = res_e
    log_var, rel_v, meth_v = res_v
    return log_e, log_var, max(rel_e, rel_v), meth_e


def moment_table(model: RateModel, n_hi: int | None = None,
                 rel_tol: float = 1e-10, suffix: bool = True) -> MomentTable:
    """Build the per-level analytics table for levels floor..n_hi.

    rel_tol controls the certified relative error of the suffix columns
    (e_inf, var_inf); the recursion columns are exact to rounding for
    pure-death and truncated chains and stabilization-certified otherwise.
    With suffix=False only the per-level moment columns are computed (for
    models whose tails cannot be certified, e.g. oscillating birth rates).
    """
    if n_hi is None:
        if model.finite:
            n_hi = model.table_max - 1
        else:
            raise ModelValidationError("n_hi is required for non-truncated models")
    if not (0 < rel_tol <= 1e-2):
        raise ModelValidationError("rel_tol must be in (0, 1e-2]")
    return _build_table(model, int(n_hi), float(rel_tol), bool(suffix))


# ---------------------------------------------------------------------------
# descent / regime reports
# ---------------------------------------------------------------------------

@dataclass
class ConditionVerdict:
    verdict: str
    statistic: float | None = None
    trend_exponent: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "statistic": self.statistic,
                "trend_exponent": self.trend_exponent, "detail": self.detail}


@dataclass
class DescentReport:
    floor: int
    absorption: ConditionVerdict
    S: float | None                 # total descent time; inf when divergent
    S_rel_bound: float | None
    comes_down: bool | None
    messages: list

    def to_dict(self) -> dict:
        return {"floor": self.floor, "absorption": self.absorption.to_dict(),
                "S": self.S, "S_rel_bound": self.S_rel_bound,
                "comes_down": self.comes_down, "messages": self.messages}


def _absorption_verdict(model: RateModel, horizon: int) -> ConditionVerdict:
    """Divergence check for the series sum 1/(lam_n pi_n).

    Successive terms have ratio mu_{n+1}/lam_{n+1}, so death dominance makes
    the series diverge (absorption certain) and sustained birth dominance
    makes it converge (escape possible).  Zero birth rates give infinite
    terms outright.
    """
    if model.finite:
        return ConditionVerdict(HOLDS, detail="finite state space")
    f = model.floor
    hor = max(horizon, f + 16)
    n = np.arange(f + 1, hor + 1)
    log_lam, log_mu = model.log_rates(n)
    if np.any(log_lam == NEG_INF):
        k = int(n[np.argmax(log_lam == NEG_INF)])
        return ConditionVerdict(HOLDS, detail=f"zero birth rate at level {k}")
    log_ratio = log_mu - log_lam               # term growth per step
    w = log_ratio[int(0.5 * len(log_ratio)):]
    if np.min(w) > 1e-9:
        return ConditionVerdict(
            HOLDS, statistic=float(np.exp(np.min(w))),
            detail="death/birth ratio stays above 1: series terms grow")
    if np.max(w) < -1e-9:
        return ConditionVerdict(
            FAILS, statistic=float(np.exp(np.max(w))),
            detail="birth/death ratio stays above 1: series converges, "
                   "the chain can escape to infinity")
    # mixed or critical: compare partial sums of the terms over two windows
    n_full = np.arange(f, hor + 2)
    ll_full, lm_full = model.log_rates(n_full)
    log_pi = _log_pi_column(ll_full, lm_full)          # levels f .. hor
    log_terms = -(ll_full[1:-1] + log_pi[1:])          # 1/(lam_n pi_n), n >= f+1
    half = len(log_terms) // 2
    s1 = float(np.logaddexp.reduce(log_terms[:half]))
    s2 = float(np.logaddexp.reduce(log_terms[half:]))
    if s2 >= s1 - LOG2:
        return ConditionVerdict(HOLDS_TO_HORIZON,
                                detail="partial sums still growing at the horizon")
    return ConditionVerdict(INCONCLUSIVE, detail="term trend not resolved at the horizon")


def descent_check(model: RateModel, horizon: int = 2048,
                  rel_tol: float = 1e-8) -> DescentReport:
    """Absorption verdict plus the total descent-time constant S."""
    msgs: list[str] = []
    absorption = _absorption_verdict(model, horizon)
    S = S_bound = None
    comes_down: bool | None = None
    if absorption.verdict == FAILS:
        comes_down = False
        msgs.append("absorption fails; descent moments are not finite")
        return DescentReport(model.floor, absorption, None, None, comes_down, msgs)
    try:
        t = moment_table(model, n_hi=model.floor + 8, rel_tol=rel_tol)
        S, S_bound = t.S, t.rel_bound
        comes_down = math.isfinite(S)
    except SeriesDivergenceError as e:
        S = math.inf
        comes_down = False
        msgs.append(str(e))
    except (TailCertificationError, NoDescentError) as e:
        msgs.append(str(e))
    return DescentReport(model.floor, absorption, S, S_bound, comes_down, msgs)


def _loglog_slope(levels: np.ndarray, log_vals: np.ndarray,
                  lo_frac: float = 0.25) -> tuple:
    """Least-squares slope of log value against log level over the top window."""
    mask = np.isfinite(log_vals) & (levels >= max(2, lo_frac * levels[-1]))
    if mask.sum() < 4:
        return None, None
    x = np.log(levels[mask].astype(float))
    y = log_vals[mask]
    if len(x) > 48:                       # thin to a geometric subsample
        pick = np.unique(np.geomspace(1, len(x), 48).astype(int) - 1)
        x, y = x[pick], y[pick]
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + intercept))))
    return float(slope), resid


def _stabilized(vals: np.ndarray, rtol: float = 1e-6) -> bool:
    v = vals[np.isfinite(vals)]
    if len(v) < 4:
        return False
    scale = max(float(np.max(np.abs(v))), 1e-300)
    return float(np.max(v) - np.min(v)) <= rtol * scale + 1e-12


@dataclass
class RegimeReport:
    regime: str                       # "fast" | "gradual" | "mixed" | "inconclusive"
    alpha: float | None               # limit of r_n when it exists
    r_limit_points: list              # cluster values when r oscillates
    ratio_limit: float | None         # lim lam_n/mu_n when it stabilizes
    conditions: dict                  # name -> ConditionVerdict
    horizon: int
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"regime": self.regime, "alpha": self.alpha,
                "r_limit_points": self.r_limit_points,
                "ratio_limit": self.ratio_limit,
                "conditions": {k: v.to_dict() for k, v in self.conditions.items()},
                "horizon": self.horizon, "messages": self.messages}


def _cluster_limits(levels: np.ndarray, r: np.ndarray) -> list | None:
    """Stabilized limit points of r over parity classes (mod 2, then mod 4)."""
    for modulus in (2, 4):
        pts = []
        ok = True
        for res in range(modulus):
            sel = r[levels % modulus == res]
            if len(sel) < 4 or not _stabilized(sel, rtol=1e-5):
                ok = False
                break
            pts.append(float(np.mean(sel[-4:])))
        if ok:
            uniq: list[float] = []
            for p in sorted(pts):
                if not uniq or abs(p - uniq[-1]) > 1e-6 * max(1.0, abs(p)):
                    uniq.append(p)
            return uniq
    return None


def regime_classify(model: RateModel, horizon: int = 2048,
                    rel_tol: float = 1e-8) -> RegimeReport:
    """Classify the descent regime and check the standard conditions.

    The regime is read off the last-step share r_n = m_n/e_inf(n): a
    stabilized positive limit means a macroscopic share of the descent time
    is spent on the last step ("fast"); r_n -> 0 means the descent time
    accumulates gradually over many levels ("gradual"); r_n oscillating
    between several positive cluster values is reported as "mixed" with the
    detected limit-point set.  Condition verdicts
    are trend-based (fitted log-log exponents over the top window) and may
    report holds-to-horizon/inconclusive instead of a clean holds/fails.
    """
    msgs: list[str] = []
    conditions: dict[str, ConditionVerdict] = {}
    conditions["absorption"] = _absorption_verdict(model, horizon)
    diag = validate(model, horizon=max(horizon, 1024))
    if diag.stabilized and diag.ratio_limit is not None:
        l = diag.ratio_limit
        conditions["subcritical_ratio"] = ConditionVerdict(
            HOLDS if l < 1 - 1e-9 else FAILS, statistic=l,
            detail=f"lam/mu ratio stabilizes at {l:.6g}")
    else:
        v = HOLDS_TO_HORIZON if diag.ratio_limsup < 1 - 1e-9 else INCONCLUSIVE
        conditions["subcritical_ratio"] = ConditionVerdict(
            v, statistic=diag.ratio_limsup,
            detail=f"ratio window [{diag.ratio_liminf:.4g}, {diag.ratio_limsup:.4g}]")

    suffix_ok = True
    try:
        t = moment_table(model, n_hi=horizon, rel_tol=rel_tol)
    except NoDescentError as e:
        conditions["finite_descent"] = ConditionVerdict(FAILS, detail=str(e))
        return RegimeReport("inconclusive", None, [], diag.ratio_limit,
                            conditions, horizon, [str(e)])
    except (TailCertificationError, SeriesDivergenceError) as e:
        msgs.append(f"suffix tails uncertified: {e}")
        t = moment_table(model, n_hi=horizon, rel_tol=rel_tol, suffix=False)
        suffix_ok = False

    if suffix_ok:
        conditions["finite_descent"] = ConditionVerdict(
            HOLDS, statistic=t.S, detail=f"total descent time S = {t.S:.6g}")
    else:
        conditions["finite_descent"] = ConditionVerdict(
            INCONCLUSIVE, detail="tail certification unavailable")

    levels = t.levels
    # condition: bounded second-moment ratio m2/m^2
    stat5 = t.log_m2 - 2.0 * t.log_m
    slope5, _ = _loglog_slope(levels, stat5)
    sup5 = float(np.exp(np.max(stat5)))
    if slope5 is not None and slope5 <= 0.02:
        conditions["bounded_second_moment_ratio"] = ConditionVerdict(
            HOLDS, statistic=sup5, trend_exponent=slope5,
            detail=f"sup m2/m^2 = {sup5:.4g} over the table, trend flat or falling")
    elif slope5 is not None:
        conditions["bounded_second_moment_ratio"] = ConditionVerdict(
            INCONCLUSIVE, statistic=sup5, trend_exponent=slope5,
            detail="second-moment ratio still growing at the horizon")
    else:
        conditions["bounded_second_moment_ratio"] = ConditionVerdict(
            INCONCLUSIVE, statistic=sup5)

    alpha: float | None = None
    limit_points: list = []
    regime = "inconclusive"
    if suffix_ok:
        r = t.r
        w0 = len(r) // 2
        win_levels, win_r = levels[w0:], r[w0:]
        slope_r, _ = _loglog_slope(levels, t.log_m - t.log_e)
        if _stabilized(win_r):
            alpha = float(np.mean(win_r[-8:]))
            if alpha > 1e-4:
                regime = "fast"
                limit_points = [alpha]
            else:
                regime = "gradual"
                alpha = 0.0
        else:
            pts = _cluster_limits(win_levels, win_r)
            if pts is not None and len(pts) > 1:
                limit_points = pts
                regime = "mixed" if min(pts) > 1e-4 else "inconclusive"
                msgs.append("last-step share oscillates; reporting its limit points")
            elif slope_r is not None and slope_r <= -0.05:
                regime = "gradual"
                alpha = 0.0
            else:
                # r_n can creep toward 1 without ever stabilizing at the
                # horizon (e.g. factorial rates, 1 - r_n ~ 1/n); a power-law
                # decay of the complement still identifies the fast regime
                comp = 1.0 - win_r
                slope_c = None
                if np.all(comp > 0):
                    slope_c, _ = _loglog_slope(win_levels, np.log(comp))
                if slope_c is not None and slope_c <= -0.5 and comp[-1] < 0.1:
                    regime = "fast"
                    alpha = 1.0
                    limit_points = [1.0]
                    msgs.append("last-step share creeps to 1 "
                                f"(complement decays like n^{slope_c:.2f})")
                else:
                    msgs.append("last-step share neither stabilizes nor decays cleanly")

        # condition: square-summable r (needs r_n ~ n^{-p} with p > 1/2)
        p_hat = None if slope_r is None else -slope_r
        if regime in ("fast", "mixed"):
            conditions["square_summable_r"] = ConditionVerdict(
                FAILS, statistic=float(win_r[-1]), trend_exponent=slope_r,
                detail="r_n stays bounded away from 0; sum r_n^2 diverges")
        elif p_hat is None:
            conditions["square_summable_r"] = ConditionVerdict(INCONCLUSIVE)
        elif p_hat >= 0.55:
            conditions["square_summable_r"] = ConditionVerdict(
                HOLDS, statistic=float(win_r[-1]), trend_exponent=slope_r,
                detail=f"r_n decays like n^-{p_hat:.2f}")
        elif p_hat <= 0.45:
            conditions["square_summable_r"] = ConditionVerdict(
                FAILS, statistic=float(win_r[-1]), trend_exponent=slope_r,
                detail=f"r_n decays like n^-{p_hat:.2f}: too slow for square-summability")
        else:
            conditions["square_summable_r"] = ConditionVerdict(
                INCONCLUSIVE, trend_exponent=slope_r,
                detail="fitted decay exponent in the gray zone around 1/2")

        # condition: vanishing per-level variance share v_n / var_inf(n)
        stat24 = t.log_v - t.log_var
        slope24, _ = _loglog_slope(levels, stat24)
        val24 = float(np.exp(stat24[-1]))
        if slope24 is not None and slope24 <= -0.05:
            conditions["vanishing_variance_ratio"] = ConditionVerdict(
                HOLDS, statistic=val24, trend_exponent=slope24)
        elif _stabilized(np.exp(stat24[w0:]), rtol=1e-3) and val24 > 1e-6:
            conditions["vanishing_variance_ratio"] = ConditionVerdict(
                FAILS, statistic=val24,
                detail="variance share of the last level does not vanish")
        else:
            conditions["vanishing_variance_ratio"] = ConditionVerdict(
                INCONCLUSIVE, statistic=val24, trend_exponent=slope24)

        # condition: third-moment Lyapunov ratio
        lyap = _third_moment_condition(model, t)
        conditions["third_moment_lyapunov"] = lyap

        # condition: tail-ratio separation e_inf(2n)/e_inf(n) bounded below 1
        sep = _tail_ratio_separation(t)
        conditions["tail_ratio_separation"] = sep
    else:
        for key in ("square_summable_r", "vanishing_variance_ratio",
                    "third_moment_lyapunov", "tail_ratio_separation"):
            conditions[key] = ConditionVerdict(
                INCONCLUSIVE, detail="requires certified suffix sums")

    return RegimeReport(regime, alpha, limit_points, diag.ratio_limit,
                        conditions, horizon, msgs)


def _third_moment_condition(model: RateModel, t: MomentTable) -> ConditionVerdict:
    """Lyapunov ratio sum_{k>=n} E|tau_k - m_k|^3 / var_inf(n)^{3/2} -> 0.

    Uses the bound E|tau - m|^3 <= m3 + 3 m m2 + 4 m^3 for the numerator
    terms, summed with the same certified-tail machinery as e_inf.
    """
    log_b = np.array([_lyap_term(a, b, c)
                      for a, b, c in zip(t.log_m, t.log_m2, t.log_m3)])
    idx_hi = len(log_b) - 1
    smooth_b = _smooth_level_fns(model, float(t.anchor))[2]
    try:
        res = _certified_suffix(log_b, idx_hi, smooth_b, t.n_hi, 1e-6)
    except (TailCertificationError, SeriesDivergenceError):
        res = None
    if res is None:
        return ConditionVerdict(INCONCLUSIVE, detail="numerator tail uncertified")
    log_num = res[0]
    stat = log_num - 1.5 * t.log_var
    slope, _ = _loglog_slope(t.levels, stat)
    val = float(np.exp(stat[-1]))
    if slope is not None and slope <= -0.05:
        return ConditionVerdict(HOLDS, statistic=val, trend_exponent=slope,
                                detail="Lyapunov ratio decays along the table")
    if slope is not None and abs(slope) < 0.05 and val > 1e-3:
        return ConditionVerdict(FAILS, statistic=val, trend_exponent=slope,
                                detail="Lyapunov ratio does not vanish")
    return ConditionVerdict(INCONCLUSIVE, statistic=val, trend_exponent=slope)


def _tail_ratio_separation(t: MomentTable) -> ConditionVerdict:
    f, hi = t.floor, t.n_hi
    ns = np.arange(max(f + 1, hi // 16), hi // 2 + 1)
    if len(ns) < 4:
        return ConditionVerdict(INCONCLUSIVE, detail="table too short")
    ratios = np.exp(t.log_e[2 * ns - f] - t.log_e[ns - f])
    worst = float(np.max(ratios[len(ratios) // 2:]))
    if worst < 0.98:
        return ConditionVerdict(HOLDS, statistic=worst,
                                detail="e_inf halves by a definite factor per doubling")
    slope, _ = _loglog_slope(ns, np.log(ratios))
    if slope is not None and slope > 0.01:
        return ConditionVerdict(FAILS, statistic=worst,
                                detail="doubling ratio creeps toward 1")
    return ConditionVerdict(INCONCLUSIVE, statistic=worst)


# ---------------------------------------------------------------------------
# descent speed
# ---------------------------------------------------------------------------

@dataclass
class SpeedTable:
    """Inverse descent-time profile v(t) = smallest n with e_inf(n) <= t."""

    model: RateModel
    levels: np.ndarray
    e_inf: np.ndarray
    rel_bound: float

    @property
    def S(self) -> float:
        return float(self.e_inf[0])

    @property
    def t_min(self) -> float:
        return float(self.e_inf[-1])

    def v(self, t):
        """Vectorized level query; raises RangeQueryError below the table."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t_arr <= 0):
            raise RangeQueryError("v(t) needs t > 0")
        slack = 1.0 + max(8.0 * self.rel_bound, 1e-14)
        rev = self.e_inf[::-1]
        count = np.searchsorted(rev, t_arr * slack, side="right")
        if np.any(count == 0):
            bad = float(t_arr[np.argmax(count == 0)])
            raise RangeQueryError(
                f"t = {bad:g} below the tabulated range (e_inf(n_hi) = {self.t_min:g}); "
                "rebuild the speed table with a larger n_hi")
        out = self.levels[len(self.levels) - count]
        return (int(out[0]) if np.isscalar(t) or np.asarray(t).ndim == 0
                else out.astype(np.int64))

    def ratio(self, x: float, y: float) -> float:
        """e_inf(floor(x)) / e_inf(floor(y))."""
        ix = self._idx_for(x)
        iy = self._idx_for(y)
        return float(self.e_inf[ix] / self.e_inf[iy])

    def _idx_for(self, x: float) -> int:
        n = int(math.floor(x))
        i = n - int(self.levels[0])
        if not 0 <= i < len(self.levels):
            raise RangeQueryError(f"level {n} outside speed table")
        return i


def speed_table(model: RateModel, n_hi: int, rel_tol: float = 1e-10) -> SpeedTable:
    t = moment_table(model, n_hi=n_hi, rel_tol=rel_tol)
    return SpeedTable(model=model, levels=t.levels, e_inf=t.e_inf,
                      rel_bound=t.rel_bound)


def ratio_R(model: RateModel, x: float, y: float, rel_tol: float = 1e-10) -> float:
    """Descent-time ratio e_inf(floor(x)) / e_inf(floor(y))."""
    hi = int(math.floor(max(x, y)))
    t = moment_table(model, n_hi=hi, rel_tol=rel_tol)
    return float(np.exp(t.log_e[t.idx(int(math.floor(x)))]
                        - t.log_e[t.idx(int(math.floor(y)))]))


# ---------------------------------------------------------------------------
# regularly-varying tail check
# ---------------------------------------------------------------------------

@dataclass
class RVTailReport:
    rho_hat: float | None
    regularly_varying: bool
    mean_stat: float | None          # e_inf(n) * mu(n+1) * (rho-1) / n
    var_stat: float | None           # var_inf(n) * mu(n+1)^2 * (2 rho - 1) / n
    halving_stat: float | None       # R(2n, n) * 2^(rho-1)
    verdict: str
    n: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {"rho_hat": self.rho_hat, "regularly_varying": self.regularly_varying,
                "mean_stat": self.mean_stat, "var_stat": self.var_stat,
                "halving_stat": self.halving_stat, "verdict": self.verdict,
                "n": self.n, "detail": self.detail}


def rv_tail_check(model: RateModel, n: int = 1024, rel_tol: float = 1e-8,
                  band: float = 0.1) -> RVTailReport:
    """Check the power-law descent asymptotics for regularly varying deaths.

    For mu growing like n^rho (rho > 1, slowly varying corrections allowed)
    the descent obeys e_inf(n) ~ n / ((rho-1) mu_{n+1}) and var_inf(n) ~
    n / ((2 rho - 1) mu_{n+1}^2), and halving the level scales the descent
    time by 2^(rho-1).  All three normalized statistics should be near 1.
    """
    if model.smooth_from is None:
        return RVTailReport(None, False, None, None, None, INCONCLUSIVE, n,
                            "no smooth rate extension")
    x = float(max(n, model.smooth_from + 2))
    rho1 = float(model.smooth_log_mu(2 * x) - model.smooth_log_mu(x)) / LOG2
    rho2 = float(model.smooth_log_mu(4 * x) - model.smooth_log_mu(2 * x)) / LOG2
    if abs(rho1 - rho2) > 0.05 * max(1.0, abs(rho1)) or rho1 <= 1.0:
        return RVTailReport(rho1, False, None, None, None, INCONCLUSIVE, n,
                            f"octave exponents {rho1:.3f}, {rho2:.3f}: "
                            "death rates are not power-like with rho > 1")
    rho = 0.5 * (rho1 + rho2)
    t = moment_table(model, n_hi=2 * n, rel_tol=rel_tol)
    i = t.idx(n)
    log_mu_next = float(model.log_rates(n + 1)[1])
    mean_stat = math.exp(t.log_e[i] + log_mu_next + math.log(rho - 1.0)
                         - math.log(n))
    var_stat = math.exp(t.log_var[i] + 2.0 * log_mu_next
                        + math.log(2.0 * rho - 1.0) - math.log(n))
    halving = math.exp(t.log_e[t.idx(2 * n)] - t.log_e[i] + (rho - 1.0) * LOG2)
    ok = all(abs(s - 1.0) <= band for s in (mean_stat, var_stat, halving))
    return RVTailReport(rho, True, mean_stat, var_stat, halving,
                        HOLDS if ok else FAILS, n)
