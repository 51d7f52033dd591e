"""Command-line front end.

Subcommands: ``analyze`` (per-level moment table + regime report),
``laplace`` (fixed-point transform table), ``simulate`` (hitting-time or
path CSVs), ``verify`` (statistical experiments with JSON reports).

Exit-code contract: 0 pass, 2 inconclusive or hypothesis mismatch
(including failed experiment verdicts), 1 hard error.  Every output embeds
the tool version, the resolved configuration, and the seed, so a run can
be reproduced exactly from its own artifacts.  Floats are printed at 17
significant digits for round-trip exactness.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .analytics import (NoDescentError, RangeQueryError, SeriesDivergenceError,
                        moment_table, regime_classify)
from .experiments import (HypothesisMismatch, run_clt, run_excursions,
                          run_fast_regime, run_lln, run_slln_proxy, run_speed)
from .laplace import solve_fixed_point
from .rates import ModelValidationError, parse_model
from .simulate import EventCeilingError, SimConfig, sample_descent_times, simulate_path
from .tails import TailCertificationError

_FLOAT = "%.17g"


def _default_seed() -> int:
    env = os.environ.get("CDI_SEED")
    try:
        return int(env) if env else 0
    except ValueError:
        raise ModelValidationError(f"CDI_SEED must be an integer, got {env!r}")


def _parse_int_list(text: str) -> list:
    """Accepts 'a,b,c' and 'lo..hi' range shorthand."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ModelValidationError(f"empty level range {text!r}")
        return list(range(lo, hi + 1))
    return [int(p) for p in text.split(",") if p.strip()]


def _parse_float_list(text: str) -> list:
    return [float(p) for p in text.split(",") if p.strip()]


def _np_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _emit(text: str, out: str | None):
    if out and out != "-":
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _meta(args, seed, extra=None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func",) and v is not None}
    d = {"version": __version__, "seed": seed, "config": cfg}
    if extra:
        d.update(extra)
    return d


def _csv(header, rows, meta) -> str:
    lines = ["# meta: " + json.dumps(meta, sort_keys=True, default=_np_default)]
    lines.append(",".join(header))
    for row in rows:
        cells = []
        for x in row:
            if isinstance(x, (int, np.integer)):
                cells.append(str(int(x)))
            else:
                cells.append(_FLOAT % float(x))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _report_path(out: str | None) -> str | None:
    if not out or out == "-":
        return None
    base, ext = os.path.splitext(out)
    return base + ".report.json"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    model = parse_model(args.model)
    seed = args.seed if args.seed is not None else _default_seed()
    levels = _parse_int_list(args.levels) if args.levels else None
    n_hi = max(levels) if levels else None
    tail_note = None
    try:
        table = moment_table(model, n_hi=n_hi, rel_tol=args.rel_tol)
    except TailCertificationError as e:
        # degrade to the per-level columns; e_inf/var_inf become NaN and the
        # regime report below says why the run is inconclusive
        tail_note = str(e)
        table = moment_table(model, n_hi=n_hi, rel_tol=args.rel_tol,
                             suffix=False)
    report = regime_classify(model, horizon=args.horizon)
    cols = table.columns()
    lo = table.floor if levels is None else max(table.floor, min(levels))
    sel = slice(table.idx(lo), table.idx(table.n_hi) + 1)
    extra = {"model": model.to_spec(), "rel_bound": table.rel_bound,
             "tail_method": table.tail_method}
    if tail_note:
        extra["tail_note"] = tail_note
    meta = _meta(args, seed, extra)
    header = list(cols.keys())
    rows = zip(*[cols[k][sel] for k in header])
    rep_dict = dict(report.to_dict(), **_meta(args, seed,
                                              {"model": model.to_spec()}))
    if args.format == "json":
        doc = {"table": {k: cols[k][sel] for k in header}, "report": rep_dict}
        _emit(json.dumps(doc, indent=2, default=_np_default) + "\n", args.out)
    else:
        _emit(_csv(header, rows, meta), args.out)
        rp = _report_path(args.out)
        rep_text = json.dumps(rep_dict, indent=2, default=_np_default) + "\n"
        if rp:
            with open(rp, "w") as fh:
                fh.write(rep_text)
        else:
            sys.stdout.write(rep_text)
    if args.figures:
        from .figures import fig_moment_profile
        fig_moment_profile(table, args.figures)
    bad = report.regime == "inconclusive"
    absorption = report.conditions.get("absorption")
    if absorption is not None and absorption.verdict == "inconclusive":
        bad = True
    return 2 if bad else 0


def cmd_laplace(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    sol = solve_fixed_point(args.l, args.alpha, a_min=args.a_min,
                            a_max=args.a_max, num=args.num, tol=args.tol)
    meta = _meta(args, seed, {"l": sol.l, "alpha": sol.alpha,
                              "iterations": sol.iterations,
                              "sup_residual": sol.sup_residual,
                              "derivative_at_zero": sol.derivative_at_zero()})
    rows = zip(sol.a_grid, sol.G, sol.residual)
    if args.format == "json":
        doc = dict(meta, a=sol.a_grid, G=sol.G, residual=sol.residual)
        _emit(json.dumps(doc, indent=2, default=_np_default) + "\n", args.out)
    else:
        _emit(_csv(["a", "G", "residual"], rows, meta), args.out)
    if args.figures:
        from .figures import fig_laplace
        fig_laplace(sol, args.figures)
    return 0


def cmd_simulate(args) -> int:
    model = parse_model(args.model)
    seed = args.seed if args.seed is not None else _default_seed()
    if args.reps is not None and args.reps < 1:
        raise ModelValidationError("reps must be a positive integer")
    cfg = SimConfig(eps=args.eps, base_seed=seed, threads=args.threads)
    if args.path:
        if args.start is None or args.t_max is None:
            raise ModelValidationError("path mode needs --start and --t-max")
        rec = simulate_path(model, args.start, args.t_max, cfg)
        meta = _meta(args, seed, {"model": model.to_spec(),
                                  "events": rec.events,
                                  "final_state": rec.final_state})
        _emit(_csv(["time", "state"], zip(rec.times, rec.states), meta),
              args.out)
        if args.figures:
            from .figures import fig_path
            fig_path(rec, args.figures)
        return 0
    if not args.from_infinity:
        raise ModelValidationError(
            "choose a mode: --from-infinity for hitting times or --path")
    levels = _parse_int_list(args.level)
    reps = args.reps if args.reps is not None else 1000
    if reps < 1:
        raise ModelValidationError("reps must be a positive integer")
    sample = sample_descent_times(model, levels, reps, cfg)
    if not math.isfinite(sample.scale) or sample.scale == 0.0:
        raise ModelValidationError(
            "descent times for this model under/overflow real time units; "
            "use the library interface for scaled sampling")
    meta = _meta(args, seed, {"model": model.to_spec(),
                              "start_level": sample.start_level,
                              "log_scale": sample.log_scale,
                              "unit": "real time"})
    rows = ((r, int(n), sample.times[r, j] * sample.scale)
            for r in range(reps) for j, n in enumerate(sample.levels))
    _emit(_csv(["replicate", "n", "T_n"], rows, meta), args.out)
    return 0


_EXPERIMENTS = {
    "lln": run_lln,
    "clt": run_clt,
    "fast": run_fast_regime,
    "speed": run_speed,
    "excursion": run_excursions,
    "slln-proxy": run_slln_proxy,
}


def cmd_verify(args) -> int:
    model = parse_model(args.model)
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = SimConfig(eps=args.eps, base_seed=seed, threads=args.threads)
    name = args.experiment
    kwargs: dict = {"config": cfg}
    if args.reps is not None:
        kwargs["reps"] = args.reps
    if name == "lln":
        if args.levels:
            kwargs["levels"] = _parse_int_list(args.levels)
        if args.delta:
            kwargs["deltas"] = _parse_float_list(args.delta)
    elif name == "clt":
        if args.level is not None:
            kwargs["n"] = args.level
    elif name == "fast":
        if args.level is None:
            raise ModelValidationError("verify fast needs --level")
        kwargs["n"] = args.level
        if args.alpha is not None:
            kwargs["alpha"] = args.alpha
        if args.l is not None:
            kwargs["l"] = args.l
        if args.a_max is not None:
            kwargs["a_max"] = args.a_max
    elif name == "speed":
        if not args.t:
            raise ModelValidationError("verify speed needs --t")
        kwargs["times"] = _parse_float_list(args.t)
    elif name in ("excursion", "slln-proxy"):
        if args.levels:
            kwargs["n_values"] = _parse_int_list(args.levels)
        if name == "slln-proxy" and args.delta:
            kwargs["delta"] = _parse_float_list(args.delta)[0]
    try:
        summary = _EXPERIMENTS[name](model, **kwargs)
    except HypothesisMismatch as e:
        doc = dict(_meta(args, seed, {"model": model.to_spec()}),
                   experiment=name, verdict="mismatch", message=str(e))
        _emit(json.dumps(doc, indent=2, default=_np_default) + "\n", args.out)
        return 2
    doc = dict(summary.to_dict(), **_meta(args, seed))
    _emit(json.dumps(doc, indent=2, default=_np_default) + "\n", args.out)
    if args.figures:
        from .figures import fig_experiment
        fig_experiment(summary, args.figures)
    return 0 if summary.verdict == "pass" else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, model=True):
    if model:
        p.add_argument("--model", required=True,
                       help="catalog name, name:key=val,..., inline JSON, or path")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed (default: CDI_SEED env var, else 0)")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (results are identical at any count)")
    p.add_argument("--figures", default=None, metavar="DIR",
                   help="also render figures into DIR")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cdi",
        description="Descent-from-infinity analytics, transforms, and "
                    "simulation for birth-death chains.")
    ap.add_argument("--version", action="version", version=f"cdi {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-level moment table + regime report")
    _add_common(p)
    p.add_argument("--levels", default=None, help="range lo..hi or list a,b,c")
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--horizon", type=int, default=2048)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("laplace", help="fast-regime fixed-point transform")
    _add_common(p, model=False)
    p.add_argument("--l", type=float, required=True,
                   help="birth/death ratio limit, in [0, 1)")
    p.add_argument("--alpha", type=float, required=True,
                   help="last-step share limit, in (0, 1]")
    p.add_argument("--a-min", type=float, default=1e-4)
    p.add_argument("--a-max", type=float, default=1e3)
    p.add_argument("--num", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_laplace)

    p = sub.add_parser("simulate", help="hitting-time or path CSVs")
    _add_common(p)
    p.add_argument("--from-infinity", action="store_true",
                   help="sample descent hitting times released above --level")
    p.add_argument("--level", default=None,
                   help="target level(s): int, list a,b,c, or range lo..hi")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-2,
                   help="truncation tolerance for the release level")
    p.add_argument("--path", action="store_true", help="record one trajectory")
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="statistical experiments (JSON report)")
    p.add_argument("experiment", choices=sorted(_EXPERIMENTS))
    _add_common(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--levels", default=None)
    p.add_argument("--delta", default=None, help="deviation threshold(s)")
    p.add_argument("--t", default=None, help="query times, comma separated")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--l", type=float, default=None)
    p.add_argument("--a-max", type=float, default=None)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelValidationError, RangeQueryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NoDescentError, SeriesDivergenceError, TailCertificationError,
            EventCeilingError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
