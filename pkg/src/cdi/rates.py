"""Rate models for absorbing birth-death chains on the nonnegative integers.

A model supplies birth rates lam_n and death rates mu_n for every level
n >= 0, with lam_0 = mu_0 = 0 so that state 0 is absorbing.  Because the
models of interest have death rates growing like n^rho, e^(beta*n) or even
(n!)^gamma, rates are handled in *log scale* throughout: the primitive query
is ``log_rates``, which returns (log lam_n, log mu_n) with -inf standing for
a zero rate.  Linear-scale helpers are provided for small levels.

Built-in catalog (kind -> parameters):

    kingman             c (pair-merge rate, default 1): mu_n = c*n*(n-1)/2, no births
    exp-death           beta, scale: mu_n = scale*exp(beta*n), no births
    power-death         rho, gamma, birth: mu_n = n^rho * (log n)^gamma, lam_n = birth*n
    logistic            birth, death: lam_n = birth*n, mu_n = death*n^2
    factorial-death     gamma: mu_n = (n!)^gamma, no births
    subexp-death        (none): mu_n = exp(n/log n) * log n, no births
    oscillating-death   base: mu_n = base^(2*floor(n/2)), no births
    oscillating-birth   (none): mu_n = n^2, lam_n = 2*n^2 on multiples of 4, n^2/2 otherwise

Conventions for n = 1 where the literal formula degenerates: power-death with
gamma != 0 and subexp-death set mu_1 = 1 (log 1 = 0 would otherwise give a
zero or singular rate); oscillating-death gives mu_1 = base^0 = 1 naturally.
Kingman has mu_1 = 0, so level 1 is itself absorbing ("floor" = 1).

User tables: pass ``table=[(lam_0, mu_0), (lam_1, mu_1), ...]`` with row 0
equal to (0, 0), plus an ``extension`` describing levels beyond the last row
N: "truncate" (lam_N forced to 0; queries beyond N are errors), "geometric"
(each rate continues with the constant ratio of its last two values), or
"power" (continues with the power-law exponent fitted to the last two
values).

Example
-------
>>> from cdi.rates import make_model
>>> m = make_model("power-death", rho=2.0)
>>> m.rates(10)
(0.0, 100.0)
>>> m.pure_death
True
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import gammaln

NEG_INF = float("-inf")

_CATALOG_KINDS = (
    "kingman",
    "exp-death",
    "power-death",
    "logistic",
    "factorial-death",
    "subexp-death",
    "oscillating-death",
    "oscillating-birth",
)

_EXTENSIONS = ("truncate", "geometric", "power")


class ModelValidationError(ValueError):
    """Raised when a rate model is malformed or queried out of range."""


def _as_float_array(n) -> np.ndarray:
    a = np.asarray(n, dtype=np.float64)
    if np.any(a < 0) or np.any(a != np.floor(a)):
        raise ModelValidationError("levels must be nonnegative integers")
    return a


# ---------------------------------------------------------------------------
# catalog rate formulas (log scale; input is a float array of integer levels)
# ---------------------------------------------------------------------------

def _safe_log(x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, NEG_INF)
    pos = x > 0
    out[pos] = np.log(x[pos])
    return out


def _kingman(p, n):
    c = p.get("c", 1.0)
    log_mu = np.full(n.shape, NEG_INF)
    mask = n >= 2
    nm = n[mask]
    log_mu[mask] = math.log(c / 2.0) + np.log(nm) + np.log(nm - 1.0)
    return np.full(n.shape, NEG_INF), log_mu


def _exp_death(p, n):
    beta = p.get("beta", 1.0)
    scale = p.get("scale", 1.0)
    log_mu = np.where(n >= 1, math.log(scale) + beta * n, NEG_INF)
    return np.full(n.shape, NEG_INF), log_mu


def _power_death(p, n):
    rho = p["rho"]
    gamma = p.get("gamma", 0.0)
    birth = p.get("birth", 0.0)
    log_mu = np.full(n.shape, NEG_INF)
    m1 = n == 1
    log_mu[m1] = 0.0  # mu_1 = 1 by convention (see module docstring)
    m2 = n >= 2
    nm = n[m2]
    log_mu[m2] = rho * np.log(nm)
    if gamma != 0.0:
        log_mu[m2] += gamma * np.log(np.log(nm))
    if birth > 0.0:
        log_lam = np.where(n >= 1, math.log(birth) + _safe_log(n), NEG_INF)
    else:
        log_lam = np.full(n.shape, NEG_INF)
    return log_lam, log_mu


def _logistic(p, n):
    birth = p.get("birth", 1.0)
    death = p.get("death", 1.0)
    log_lam = np.where(n >= 1, math.log(birth) + _safe_log(n), NEG_INF)
    log_mu = np.where(n >= 1, math.log(death) + 2.0 * _safe_log(n), NEG_INF)
    return log_lam, log_mu


def _factorial_death(p, n):
    gamma = p.get("gamma", 1.0)
    log_mu = np.where(n >= 1, gamma * gammaln(n + 1.0), NEG_INF)
    return np.full(n.shape, NEG_INF), log_mu


def _subexp_death(p, n):
    log_mu = np.full(n.shape, NEG_INF)
    log_mu[n == 1] = 0.0  # mu_1 = 1 by convention
    m = n >= 2
    nm = n[m]
    ln = np.log(nm)
    log_mu[m] = nm / ln + np.log(ln)
    return np.full(n.shape, NEG_INF), log_mu


def _oscillating_death(p, n):
    base = p.get("base", 3.0)
    log_mu = np.where(n >= 1, 2.0 * np.floor(n / 2.0) * math.log(base), NEG_INF)
    return np.full(n.shape, NEG_INF), log_mu


def _oscillating_birth(p, n):
    log_mu = np.where(n >= 1, 2.0 * _safe_log(n), NEG_INF)
    mult4 = (n >= 1) & (np.mod(n, 4) == 0)
    log_lam = np.where(n >= 1, log_mu + math.log(0.5), NEG_INF)
    log_lam = np.where(mult4, log_mu + math.log(2.0), log_lam)
    return log_lam, log_mu


_KIND_FN = {
    "kingman": _kingman,
    "exp-death": _exp_death,
    "power-death": _power_death,
    "logistic": _logistic,
    "factorial-death": _factorial_death,
    "subexp-death": _subexp_death,
    "oscillating-death": _oscillating_death,
    "oscillating-birth": _oscillating_birth,
}

# kinds whose rate formulas extend to smooth functions of a real level
# (the oscillating kinds do not: their rates depend on integer parity)
_SMOOTH_KINDS = {
    "kingman": 2.0,
    "exp-death": 1.0,
    "power-death": 2.0,
    "logistic": 1.0,
    "factorial-death": 1.0,
    "subexp-death": 2.0,
}

_PURE_DEATH_KINDS = {
    "kingman", "exp-death", "factorial-death", "subexp-death", "oscillating-death",
}

_REQUIRED_PARAMS = {"power-death": ("rho",)}
_ALLOWED_PARAMS = {
    "kingman": {"c"},
    "exp-death": {"beta", "scale"},
    "power-death": {"rho", "gamma", "birth"},
    "logistic": {"birth", "death"},
    "factorial-death": {"gamma"},
    "subexp-death": set(),
    "oscillating-death": {"base"},
    "oscillating-birth": set(),
}


@dataclass(frozen=True)
class RateModel:
    """Immutable birth-death rate model (catalog kind or user table).

    Construct via :func:`make_model`, :func:`parse_model` or
    :func:`model_from_json` rather than directly; the constructors validate
    parameters and table contents.  Instances are hashable and safe to share
    across threads.
    """

    kind: str
    params: tuple = ()
    table: tuple = ()
    extension: str = "truncate"

    # -- basic queries ------------------------------------------------------

    def param(self, name: str, default: float | None = None) -> float:
        for k, v in self.params:
            if k == name:
                return v
        if default is None:
            raise KeyError(name)
        return default

    @cached_property
    def _pdict(self) -> dict:
        return dict(self.params)

    @cached_property
    def table_max(self) -> int | None:
        """Last tabulated level, or None for catalog models."""
        return len(self.table) - 1 if self.table else None

    @cached_property
    def finite(self) -> bool:
        """True when the state space is effectively {0, ..., N}."""
        return self.kind == "table" and self.extension == "truncate"

    def log_rates(self, n) -> tuple[np.ndarray, np.ndarray]:
        """Return (log lam_n, log mu_n) for integer levels ``n`` (array ok).

        Zero rates come back as -inf.  For truncated tables, levels beyond
        the last row raise :class:`ModelValidationError`.
        """
        a = _as_float_array(n)
        scalar = a.ndim == 0
        a = np.atleast_1d(a)
        if self.kind == "table":
            log_lam, log_mu = self._table_log_rates(a)
        else:
            log_lam, log_mu = _KIND_FN[self.kind](self._pdict, a)
        zero = a == 0
        log_lam[zero] = NEG_INF
        log_mu[zero] = NEG_INF
        if scalar:
            return float(log_lam[0]), float(log_mu[0])
        return log_lam, log_mu

    def rates(self, n: int) -> tuple[float, float]:
        """(lam_n, mu_n) in linear scale; may overflow to inf for huge rates."""
        ll, lm = self.log_rates(int(n))
        return math.exp(ll) if ll > NEG_INF else 0.0, math.exp(lm) if lm > NEG_INF else 0.0

    @cached_property
    def pure_death(self) -> bool:
        if self.kind == "table":
            lam = np.array([row[0] for row in self.table])
            if np.any(lam[1:] > 0):
                return False
            return True  # extensions keep zero rates at zero
        if self.kind == "power-death":
            return self._pdict.get("birth", 0.0) == 0.0
        return self.kind in _PURE_DEATH_KINDS

    @cached_property
    def floor(self) -> int:
        """Largest level f with lam_j = mu_j = 0 for all j <= f.

        The chain started above the floor is absorbed at the floor; all
        descent-time analytics are taken relative to it.  For every catalog
        kind except kingman the floor is 0; kingman has mu_1 = 0 and floor 1.
        """
        f = 0
        for j in range(1, 64):
            ll, lm = self.log_rates(j)
            if ll == NEG_INF and lm == NEG_INF:
                f = j
            else:
                break
        return f

    # -- table handling -----------------------------------------------------

    def _table_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.table, dtype=np.float64)
        return arr[:, 0], arr[:, 1]

    def _table_log_rates(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lam, mu = self._table_arrays()
        N = len(lam) - 1
        if self.extension == "truncate" and np.any(a > N):
            raise ModelValidationError(
                f"level {int(a.max())} beyond truncated table (last level {N})")
        idx = np.minimum(a, N).astype(np.int64)
        log_lam = _safe_log(lam[idx])
        log_mu = _safe_log(mu[idx])
        beyond = a > N
        if np.any(beyond):
            k = a[beyond]
            gl, gm = self._extension_rules
            log_lam[beyond] = gl(k) if gl is not None else NEG_INF
            log_mu[beyond] = gm(k)
        return log_lam, log_mu

    @cached_property
    def _extension_rules(self):
        """(log lam(x), log mu(x)) callables valid for real x > table_max."""
        lam, mu = self._table_arrays()
        N = len(lam) - 1
        if self.extension == "geometric":
            g_mu = mu[N] / mu[N - 1]
            lgm = math.log(mu[N]) + 0.0  # anchor
            fmu = lambda x: math.log(mu[N]) + (x - N) * math.log(g_mu)
            if lam[N] > 0:
                g_lam = lam[N] / lam[N - 1]
                flam = lambda x: math.log(lam[N]) + (x - N) * math.log(g_lam)
            else:
                flam = None
            return flam, fmu
        if self.extension == "power":
            p_mu = math.log(mu[N] / mu[N - 1]) / math.log(N / (N - 1))
            fmu = lambda x: math.log(mu[N]) + p_mu * (np.log(x) - math.log(N))
            if lam[N] > 0:
                p_lam = math.log(lam[N] / lam[N - 1]) / math.log(N / (N - 1))
                flam = lambda x: math.log(lam[N]) + p_lam * (np.log(x) - math.log(N))
            else:
                flam = None
            return flam, fmu
        return None, None

    # -- smooth tail extensions (for certified tail summation) ---------------

    @cached_property
    def smooth_from(self) -> float | None:
        """Smallest real x from which the rates extend smoothly, else None."""
        if self.kind == "table":
            if self.extension in ("geometric", "power"):
                return float(self.table_max)
            return None
        return _SMOOTH_KINDS.get(self.kind)

    def smooth_log_mu(self, x) -> np.ndarray:
        """log mu at real argument ``x`` >= ``smooth_from`` (vectorized)."""
        if self.smooth_from is None:
            raise ModelValidationError(f"{self.kind} has no smooth rate extension")
        x = np.asarray(x, dtype=np.float64)
        p = self._pdict
        if self.kind == "table":
            return self._extension_rules[1](x)
        if self.kind == "kingman":
            c = p.get("c", 1.0)
            return math.log(c / 2.0) + np.log(x) + np.log(x - 1.0)
        if self.kind == "exp-death":
            return math.log(p.get("scale", 1.0)) + p.get("beta", 1.0) * x
        if self.kind == "power-death":
            out = p["rho"] * np.log(x)
            g = p.get("gamma", 0.0)
            if g != 0.0:
                out = out + g * np.log(np.log(x))
            return out
        if self.kind == "logistic":
            return math.log(p.get("death", 1.0)) + 2.0 * np.log(x)
        if self.kind == "factorial-death":
            return p.get("gamma", 1.0) * gammaln(x + 1.0)
        if self.kind == "subexp-death":
            ln = np.log(x)
            return x / ln + np.log(ln)
        raise AssertionError(self.kind)

    def smooth_log_lam(self, x) -> np.ndarray | None:
        """log lam at real ``x``, or None when births are identically zero."""
        if self.smooth_from is None:
            raise ModelValidationError(f"{self.kind} has no smooth rate extension")
        if self.pure_death:
            return None
        x = np.asarray(x, dtype=np.float64)
        p = self._pdict
        if self.kind == "table":
            f = self._extension_rules[0]
            return None if f is None else f(x)
        if self.kind == "power-death":
            return math.log(p["birth"]) + np.log(x)
        if self.kind == "logistic":
            return math.log(p.get("birth", 1.0)) + np.log(x)
        raise AssertionError(self.kind)

    # -- serialization ------------------------------------------------------

    def to_spec(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.params:
            d["params"] = dict(self.params)
        if self.table:
            d["table"] = [list(row) for row in self.table]
            d["extension"] = self.extension
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_spec())

    def describe(self) -> str:
        if self.kind == "table":
            return f"table[N={self.table_max},{self.extension}]"
        ps = ",".join(f"{k}={v:g}" for k, v in self.params)
        return f"{self.kind}({ps})" if ps else self.kind

    @classmethod
    def from_spec(cls, d: dict) -> "RateModel":
        kind = d.get("kind")
        if kind == "table" or "table" in d:
            return make_table_model(d["table"], d.get("extension", "truncate"))
        return make_model(kind, **d.get("params", {}))


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_model(kind: str, **params) -> RateModel:
    """Build a catalog model, validating the kind and its parameters."""
    if kind not in _CATALOG_KINDS:
        raise ModelValidationError(
            f"unknown model kind {kind!r}; choose from {', '.join(_CATALOG_KINDS)}")
    allowed = _ALLOWED_PARAMS[kind]
    for k in params:
        if k not in allowed:
            raise ModelValidationError(f"{kind} does not take parameter {k!r}")
    for k in _REQUIRED_PARAMS.get(kind, ()):
        if k not in params:
            raise ModelValidationError(f"{kind} requires parameter {k!r}")
    vals = {k: float(v) for k, v in params.items()}
    for k, v in vals.items():
        if not math.isfinite(v):
            raise ModelValidationError(f"parameter {k} must be finite")
    if kind == "power-death" and vals["rho"] <= 0:
        raise ModelValidationError("power-death requires rho > 0")
    if kind == "exp-death" and vals.get("beta", 1.0) <= 0:
        raise ModelValidationError("exp-death requires beta > 0")
    if kind == "factorial-death" and vals.get("gamma", 1.0) <= 0:
        raise ModelValidationError("factorial-death requires gamma > 0")
    if kind == "oscillating-death" and vals.get("base", 3.0) <= 1:
        raise ModelValidationError("oscillating-death requires base > 1")
    for k in ("c", "scale", "death"):
        if k in vals and vals[k] <= 0:
            raise ModelValidationError(f"parameter {k} must be positive")
    if "birth" in vals and vals["birth"] < 0:
        raise ModelValidationError("parameter birth must be nonnegative")
    return RateModel(kind=kind, params=tuple(sorted(vals.items())))


def make_table_model(table, extension: str = "truncate") -> RateModel:
    """Build a model from explicit (lam_n, mu_n) rows for n = 0..N."""
    arr = np.asarray(table, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ModelValidationError("table must be a sequence of (lam, mu) pairs")
    N = arr.shape[0] - 1
    if N < 1:
        raise ModelValidationError("table needs at least levels 0 and 1")
    if extension not in _EXTENSIONS:
        raise ModelValidationError(f"extension must be one of {_EXTENSIONS}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ModelValidationError("table rates must be finite and nonnegative")
    if arr[0, 0] != 0 or arr[0, 1] != 0:
        raise ModelValidationError("row 0 must be (0, 0): state 0 is absorbing")
    if np.any(arr[1:, 1] <= 0):
        bad = 1 + int(np.argmax(arr[1:, 1] <= 0))
        raise ModelValidationError(f"mu_{bad} must be positive")
    if extension == "truncate":
        arr = arr.copy()
        arr[N, 0] = 0.0  # no escape above the last tabulated level
    else:
        if N < 2:
            raise ModelValidationError(f"{extension} extension needs at least two positive-rate rows")
        if arr[N, 1] <= 0 or arr[N - 1, 1] <= 0:
            raise ModelValidationError("extension needs mu at the last two levels")
        if arr[N, 0] > 0 and arr[N - 1, 0] == 0:
            raise ModelValidationError(
                "cannot extend births: lam at the last level is positive but the "
                "previous one is zero; fix the table or use extension='truncate'")
    return RateModel(kind="table", table=tuple(map(tuple, arr.tolist())),
                     extension=extension)


def model_from_json(src: str) -> RateModel:
    """Parse a model from a JSON string or a path to a JSON file."""
    text = src
    if not src.lstrip().startswith("{") and os.path.exists(src):
        with open(src, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"invalid model JSON: {e}") from None
    if not isinstance(d, dict):
        raise ModelValidationError("model JSON must be an object")
    return RateModel.from_spec(d)


def parse_model(text: str) -> RateModel:
    """Parse the compact command-line model syntax.

    Accepts a bare catalog name (``kingman``), a name with parameters
    (``power-death:rho=2,gamma=1``), an inline JSON object, or a path to a
    JSON file with the same schema as :meth:`RateModel.to_spec`.
    """
    text = text.strip()
    if text.startswith("{") or (os.path.exists(text) and text.endswith(".json")):
        return model_from_json(text)
    name, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            if not item:
                continue
            k, sep, v = item.partition("=")
            if not sep:
                raise ModelValidationError(f"bad parameter {item!r}; expected key=value")
            try:
                params[k.strip()] = float(v)
            except ValueError:
                raise ModelValidationError(f"parameter {k.strip()!r} must be numeric") from None
    return make_model(name.strip(), **params)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ModelDiagnostics:
    """Sampled structural diagnostics from :func:`validate`."""

    horizon: int
    floor: int
    pure_death: bool
    ratio_limit: float | None      # lim lam_n/mu_n if it stabilizes, else None
    ratio_limsup: float            # sup of lam_n/mu_n over the check window
    ratio_liminf: float
    stabilized: bool               # ratio window spread < 1e-6
    mu_eventually_nondecreasing: bool
    mu_backstep_sup: float         # sup over window of mu_n / mu_{n+1}
    messages: list = field(default_factory=list)


def validate(model: RateModel, horizon: int = 10_000) -> ModelDiagnostics:
    """Sample rates up to ``horizon`` and report structural diagnostics.

    The birth/death ratio's behaviour over the last 10% of the horizon
    decides ``stabilized`` and the limit estimate; oscillating models report
    stabilized=False with their window limsup/liminf.
    """
    if horizon < 10:
        raise ModelValidationError("horizon must be at least 10")
    if model.finite:
        horizon = min(horizon, model.table_max)
    f = model.floor
    n = np.arange(f + 1, horizon + 1, dtype=np.int64)
    log_lam, log_mu = model.log_rates(n)
    msgs: list[str] = []
    if np.any(~np.isfinite(log_mu)):
        bad = int(n[np.argmax(~np.isfinite(log_mu))])
        raise ModelValidationError(f"mu_{bad} is zero above the floor ({f})")
    with np.errstate(invalid="ignore"):
        log_ratio = log_lam - log_mu
    ratio = np.exp(log_ratio)
    w0 = max(0, int(0.9 * len(n)))
    window = ratio[w0:]
    hi, lo = float(window.max()), float(window.min())
    stab = (hi - lo) < 1e-6
    limit = float(window[-1]) if stab else None
    dmu = np.diff(log_mu)
    tail_dmu = dmu[w0:] if w0 < len(dmu) else dmu
    nondec = bool(np.all(tail_dmu >= -1e-12))
    backstep = float(np.exp(np.maximum(-dmu, 0.0).max())) if len(dmu) else 1.0
    if limit is not None and limit >= 1.0:
        msgs.append(f"birth/death ratio stabilizes at {limit:g} >= 1: "
                    "the chain is not dominated by deaths")
    if not stab:
        msgs.append(f"birth/death ratio does not stabilize over the window "
                    f"(range [{lo:g}, {hi:g}])")
    return ModelDiagnostics(
        horizon=horizon, floor=f, pure_death=model.pure_death,
        ratio_limit=limit, ratio_limsup=hi, ratio_liminf=lo, stabilized=stab,
        mu_eventually_nondecreasing=nondec, mu_backstep_sup=backstep,
        messages=msgs,
    )
