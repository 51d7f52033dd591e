"""Monte Carlo engines for descent times, paths, and excursions.

Reproducibility contract: replicates are partitioned into fixed blocks of
1024, and block ``i`` always draws from ``Philox(key=[base_seed, i])``.
Blocks are independent streams, so results are bit-identical no matter how
many worker threads execute them, and a run can be widened (more reps)
without disturbing the blocks already drawn.

Models whose expected descent times underflow or overflow float64 (e.g.
factorial death rates at high levels) are handled by sampling in a scaled
clock: every sample record carries ``log_scale``, the natural log of the
time unit, and ``times`` are expressed in that unit.  For ordinarily scaled
models ``exp(log_scale)`` is finite and real times are recovered directly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analytics import moment_table
from .rates import ModelValidationError, RateModel

BLOCK = 1024           # replicate block size; part of the seeding contract
_LEVEL_CHUNK = 4096    # pure-death draw chunk; also part of the stream layout
_MAX_TRUNCATION = 1 << 22


class EventCeilingError(RuntimeError):
    """A replicate exceeded the configured event budget."""


@dataclass(frozen=True)
class SimConfig:
    """Knobs shared by all samplers.

    eps is the truncation tolerance: descents start from a level N with
    E_N[T] <= eps * E[T at the reference level], so the missing
    "come down from infinity" prefix is at most an eps-relative bias.
    """

    eps: float = 1e-2
    base_seed: int = 0
    threads: int = 1
    event_ceiling: int = 10 ** 9

    def __post_init__(self):
        if not 0.0 < self.eps <= 1e-2:
            raise ModelValidationError("eps must lie in (0, 1e-2]")
        if self.threads < 1:
            raise ModelValidationError("threads must be >= 1")
        if self.event_ceiling < 1:
            raise ModelValidationError("event ceiling must be positive")


@dataclass(frozen=True)
class DescentSample:
    """Hitting times of ``levels`` for chains released at ``start_level``.

    times[i, j] is the hitting time of levels[j] by replicate i, measured
    in units of exp(log_scale).  ``unit`` names what that scale is.
    """

    levels: np.ndarray
    times: np.ndarray
    log_scale: float
    unit: str
    start_level: int
    reps: int
    seed: int

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale) if self.log_scale < 709 else math.inf


@dataclass(frozen=True)
class ExcursionSample:
    """Up-step counts observed while descending one level."""

    level: int
    heights: np.ndarray
    reps: int
    seed: int


@dataclass(frozen=True)
class StateSample:
    """Chain positions at fixed clock times (real units)."""

    times: np.ndarray
    states: np.ndarray
    start_level: int
    reps: int
    seed: int


@dataclass(frozen=True)
class PathRecord:
    """One trajectory: jump times and the states entered."""

    times: np.ndarray
    states: np.ndarray
    events: int
    seed: int

    @property
    def final_state(self) -> int:
        return int(self.states[-1])


def _block_rng(cfg: SimConfig, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[cfg.base_seed, index]))


def _run_blocks(reps: int, cfg: SimConfig, fn):
    """Run fn(block_index, block_reps, rng) over all blocks, in order."""
    sizes = [(i, min(BLOCK, reps - i * BLOCK))
             for i in range((reps + BLOCK - 1) // BLOCK)]
    work = lambda args: fn(args[0], args[1], _block_rng(cfg, args[0]))
    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, sizes))
    else:
        parts = [work(s) for s in sizes]
    return parts


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

def _smallest_level_with_log_e_below(model: RateModel, target_log: float,
                                     start_hi: int) -> int:
    n_hi = start_hi
    while True:
        t = moment_table(model, n_hi=n_hi)
        if t.log_e[-1] <= target_log:
            idx = int(np.argmax(t.log_e <= target_log))
            return int(t.levels[idx])
        if n_hi >= _MAX_TRUNCATION:
            raise ArithmeticError("no level reaches the requested tolerance")
        n_hi = min(2 * n_hi, _MAX_TRUNCATION)


def choose_truncation(model: RateModel, n: int, eps: float) -> int:
    """Smallest N with E_N[T] <= eps * E_n-from-infinity expected descent.

    For truncated tables the top level is returned: the table itself is the
    truncation and no bias statement beyond it is possible.
    """
    if not 0.0 < eps <= 1e-2:
        raise ModelValidationError("eps must lie in (0, 1e-2]")
    if model.finite:
        return model.table_max
    if n < model.floor:
        raise ModelValidationError(f"level {n} is below the absorbing floor")
    t0 = moment_table(model, n_hi=max(n, model.floor + 1))
    target = float(t0.log_e[t0.idx(n)]) + math.log(eps)
    return _smallest_level_with_log_e_below(model, target, max(2 * n, n + 64))


def truncation_for_time(model: RateModel, t_min: float, eps: float) -> int:
    """Smallest N with E_N[T] <= eps * t_min (release level for state queries)."""
    if not 0.0 < eps <= 1e-2:
        raise ModelValidationError("eps must lie in (0, 1e-2]")
    if t_min <= 0:
        raise ModelValidationError("query times must be positive")
    if model.finite:
        return model.table_max
    target = math.log(t_min) + math.log(eps)
    return _smallest_level_with_log_e_below(model, target,
                                            max(2 * model.floor + 2, 64))


# ---------------------------------------------------------------------------
# descent-time sampling
# ---------------------------------------------------------------------------

def _pure_death_descent(model, levels, reps, cfg, start, log_scale):
    """Vectorized sum-of-exponentials sampler.

    tau at level k is Exp(mean m_k); descending from ``start``, the hitting
    time of level l is the partial sum over k = l .. start-1.  Coefficients
    are prepared once in the scaled clock so extreme rates stay finite.
    """
    lmin = int(levels[0])
    table = moment_table(model, n_hi=max(start - 1, model.floor + 1))
    base = table.idx(lmin)
    # c[k - lmin] = m_k / unit  for k = lmin .. start-1
    c = np.exp(table.log_m[base:table.idx(start - 1) + 1] - log_scale)

    def run(_i, bn, rng):
        t = np.zeros(bn)
        out = np.empty((bn, len(levels)))
        k_hi = start - 1
        while k_hi >= lmin:
            k_lo = max(lmin, k_hi - _LEVEL_CHUNK + 1)
            cs = c[k_lo - lmin:k_hi - lmin + 1][::-1]       # descending levels
            draws = rng.standard_exponential((bn, len(cs)))
            part = np.cumsum(draws * cs[None, :], axis=1)
            for j, lev in enumerate(levels):
                if k_lo <= lev <= k_hi:
                    col = k_hi - int(lev)                   # position in cs
                    out[:, j] = t + part[:, col]
            t = t + part[:, -1]
            k_hi = k_lo - 1
        return out

    parts = _run_blocks(reps, cfg, run)
    return np.concatenate(parts, axis=0)


def _event_loop_descent(model, levels, reps, cfg, start, log_scale):
    """Ensemble jump-chain sampler for models with births."""
    scale = math.exp(log_scale)
    lev = np.asarray(levels, dtype=np.int64)
    L = len(lev)

    def run(_i, bn, rng):
        state = np.full(bn, start, dtype=np.int64)
        t = np.zeros(bn)
        out = np.full((bn, L), np.nan)
        ptr = np.full(bn, L - 1, dtype=np.int64)            # next target (from top)
        alive = np.ones(bn, dtype=bool)
        events = 0
        while alive.any():
            log_lam, log_mu = model.log_rates(state)
            lam = np.exp(log_lam)
            mu = np.exp(log_mu)
            total = lam + mu
            # absorbed replicates with pending targets would hang; guard
            stuck = alive & (total <= 0)
            if stuck.any():
                raise ArithmeticError("chain stalled above a requested level")
            safe = np.where(total > 0, total, 1.0)
            t = t + np.where(alive, rng.standard_exponential(bn) / safe, 0.0)
            up = rng.random(bn) < lam / safe
            state = state + np.where(alive, np.where(up, 1, -1), 0)
            hit = alive & (state == lev[np.minimum(ptr, L - 1)])
            if hit.any():
                rows = np.where(hit)[0]
                out[rows, ptr[rows]] = t[rows] / scale
                ptr[rows] -= 1
                alive = ptr >= 0
            events += int(alive.sum()) + int(hit.sum())
            if events > cfg.event_ceiling:
                raise EventCeilingError(
                    f"block exceeded {cfg.event_ceiling:.0f} events")
        return out

    parts = _run_blocks(reps, cfg, run)
    return np.concatenate(parts, axis=0)


def sample_descent_times(model: RateModel, levels, reps: int,
                         config: SimConfig = SimConfig()) -> DescentSample:
    """Hitting times of each requested level, released from the truncation.

    ``levels`` must be distinct integers at or above the floor.  Times are
    reported in units of E[T at max(levels) from infinity], whose log is
    the record's log_scale; one chain serves all levels, so the columns are
    naturally coupled.
    """
    lev = np.unique(np.asarray(levels, dtype=np.int64))
    if len(lev) == 0:
        raise ModelValidationError("need at least one level")
    if lev[0] < model.floor:
        raise ModelValidationError("levels must be at or above the floor")
    if reps < 1:
        raise ModelValidationError("reps must be positive")
    n_ref = int(lev[-1])
    start = choose_truncation(model, n_ref, config.eps)
    if start <= n_ref:
        raise ModelValidationError(
            "truncation does not clear the highest requested level")
    # the release level itself needs no moment row (m_k is used for k < start)
    table = moment_table(model, n_hi=max(start - 1, model.floor + 1))
    log_scale = float(table.log_e[table.idx(n_ref)])
    if model.pure_death:
        times = _pure_death_descent(model, lev, reps, config, start, log_scale)
    else:
        times = _event_loop_descent(model, lev, reps, config, start, log_scale)
    return DescentSample(levels=lev, times=times, log_scale=log_scale,
                         unit="mean descent time to the highest level",
                         start_level=start, reps=reps, seed=config.base_seed)


def sample_tau(model: RateModel, n: int, reps: int,
               config: SimConfig = SimConfig()) -> DescentSample:
    """One-step descent times from n+1 to n, in units of their own mean.

    Pure-death models give Exp(1) draws exactly; with births the jump chain
    is run from n+1 until it first reaches n.
    """
    if n < model.floor:
        raise ModelValidationError(f"level {n} is below the absorbing floor")
    table = moment_table(model, n_hi=max(n, model.floor + 1))
    log_scale = float(table.log_m[table.idx(n)])
    lev = np.asarray([n], dtype=np.int64)
    if model.pure_death:
        def run(_i, bn, rng):
            return rng.standard_exponential((bn, 1))
        times = np.concatenate(_run_blocks(reps, config, run), axis=0)
    else:
        times = _event_loop_descent(model, lev, reps, config, n + 1, log_scale)
    return DescentSample(levels=lev, times=times, log_scale=log_scale,
                         unit="mean one-step descent time",
                         start_level=n + 1, reps=reps, seed=config.base_seed)


# ---------------------------------------------------------------------------
# positions at fixed times
# ---------------------------------------------------------------------------

def sample_states_at(model: RateModel, times, reps: int,
                     config: SimConfig = SimConfig(),
                     start: int | None = None) -> StateSample:
    """Chain position at each clock time, released high enough that the
    missing prefix is an eps-fraction of the earliest query (or from
    ``start`` when given, which must be at least that high).

    Real time units: the model's scales must be representable in float64.
    """
    ts = np.sort(np.asarray(times, dtype=np.float64))
    if len(ts) == 0 or ts[0] <= 0:
        raise ModelValidationError("query times must be positive")
    release = truncation_for_time(model, float(ts[0]), config.eps)
    if start is not None:
        if start < release:
            raise ModelValidationError(
                f"start {start} is below the bias-controlled release {release}")
        release = int(start)
    start = release
    floor = model.floor
    if model.pure_death:
        table = moment_table(model, n_hi=max(start - 1, floor + 1))
        base = table.idx(floor)
        means = np.exp(table.log_m[base:table.idx(start - 1) + 1])

        def run(_i, bn, rng):
            # count levels whose hitting time is <= each query; the position
            # is start minus that count (floored at absorption)
            counts = np.zeros((bn, len(ts)), dtype=np.int64)
            t = np.zeros(bn)
            k_hi = start - 1
            while k_hi >= floor:
                k_lo = max(floor, k_hi - _LEVEL_CHUNK + 1)
                cs = means[k_lo - floor:k_hi - floor + 1][::-1]
                draws = rng.standard_exponential((bn, len(cs)))
                part = t[:, None] + np.cumsum(draws * cs[None, :], axis=1)
                counts += (part[:, :, None] <= ts[None, None, :]).sum(axis=1)
                t = part[:, -1]
                k_hi = k_lo - 1
            return start - counts

        states = np.concatenate(_run_blocks(reps, config, run), axis=0)
    else:
        def run(_i, bn, rng):
            state = np.full(bn, start, dtype=np.int64)
            t = np.zeros(bn)
            out = np.empty((bn, len(ts)), dtype=np.int64)
            filled = np.zeros(bn, dtype=np.int64)   # queries answered so far
            events = 0
            while True:
                log_lam, log_mu = model.log_rates(state)
                lam, mu = np.exp(log_lam), np.exp(log_mu)
                total = lam + mu
                absorbed = total <= 0
                safe = np.where(absorbed, 1.0, total)
                dt = np.where(absorbed, np.inf,
                              rng.standard_exponential(bn) / safe)
                t_next = t + dt
                # answer every query that falls strictly before the next jump
                for q in range(len(ts)):
                    due = (filled <= q) & (ts[q] < t_next)
                    out[due, q] = state[due]
                    filled = np.where(due, q + 1, filled)
                if (filled >= len(ts)).all():
                    break
                up = rng.random(bn) < lam / safe
                state = state + np.where(absorbed, 0, np.where(up, 1, -1))
                t = t_next
                events += int((~absorbed).sum())
                if events > config.event_ceiling:
                    raise EventCeilingError(
                        f"block exceeded {config.event_ceiling:.0f} events")
            return out

        states = np.concatenate(_run_blocks(reps, config, run), axis=0)
    return StateSample(times=ts, states=states, start_level=start,
                       reps=reps, seed=config.base_seed)


# ---------------------------------------------------------------------------
# excursions and full paths
# ---------------------------------------------------------------------------

def sample_excursion_heights(model: RateModel, n: int, reps: int,
                             config: SimConfig = SimConfig()) -> ExcursionSample:
    """Number of up-steps made between reaching n and first reaching n-1."""
    if n < model.floor + 1:
        raise ModelValidationError("need a level strictly above the floor")
    if model.pure_death:
        heights = np.zeros(reps, dtype=np.int64)
        return ExcursionSample(level=n, heights=heights, reps=reps,
                               seed=config.base_seed)

    def run(_i, bn, rng):
        state = np.full(bn, n, dtype=np.int64)
        ups = np.zeros(bn, dtype=np.int64)
        alive = np.ones(bn, dtype=bool)
        events = 0
        while alive.any():
            log_lam, log_mu = model.log_rates(state)
            lam, mu = np.exp(log_lam), np.exp(log_mu)
            total = np.where(alive, lam + mu, 1.0)
            if (alive & (lam + mu <= 0)).any():
                raise ArithmeticError("chain stalled during an excursion")
            up = rng.random(bn) < lam / total
            step = np.where(up, 1, -1)
            state = state + np.where(alive, step, 0)
            ups += np.where(alive & up, 1, 0)
            alive = alive & (state > n - 1)
            events += int(alive.sum())
            if events > config.event_ceiling:
                raise EventCeilingError(
                    f"block exceeded {config.event_ceiling:.0f} events")
        return ups

    heights = np.concatenate(_run_blocks(reps, config, run), axis=0)
    return ExcursionSample(level=n, heights=heights, reps=reps,
                           seed=config.base_seed)


def simulate_path(model: RateModel, start: int, t_max: float,
                  config: SimConfig = SimConfig(),
                  max_events: int | None = None) -> PathRecord:
    """One trajectory from ``start`` until t_max or absorption.

    Uses the block-0 stream, so paths share the seeding contract with the
    ensemble samplers.
    """
    if start < model.floor:
        raise ModelValidationError("start must be at or above the floor")
    if t_max <= 0:
        raise ModelValidationError("t_max must be positive")
    ceiling = config.event_ceiling if max_events is None else max_events
    rng = _block_rng(config, 0)
    times = [0.0]
    states = [int(start)]
    t, state, events = 0.0, int(start), 0
    while t < t_max:
        log_lam, log_mu = model.log_rates(state)
        lam, mu = math.exp(log_lam), math.exp(log_mu)
        total = lam + mu
        if total <= 0:
            break                                   # absorbed
        t += rng.standard_exponential() / total
        if t >= t_max:
            break
        state += 1 if rng.random() < lam / total else -1
        times.append(t)
        states.append(state)
        events += 1
        if events > ceiling:
            raise EventCeilingError(f"path exceeded {ceiling:.0f} events")
    return PathRecord(times=np.asarray(times), states=np.asarray(states),
                      events=events, seed=config.base_seed)
