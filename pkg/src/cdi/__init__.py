"""Birth-death chains that come down from infinity.

Tools for absorbing birth-death processes on the nonnegative integers whose
death rates grow fast enough that the descent from arbitrarily high states
takes a finite expected time.  The package computes hitting-time moments and
their infinite-start limits, classifies the descent regime, solves the
fixed-point equation for the limiting normalized hitting-time transform,
simulates descent paths and excursions with a splittable counter-based RNG,
and runs statistical verification experiments (law of large numbers, central
limit behaviour, transform comparison, descent speed, excursion heights).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .rates import (
    RateModel,
    ModelValidationError,
    make_model,
    make_table_model,
    parse_model,
    model_from_json,
    validate,
)
from .analytics import (
    MomentTable,
    SpeedTable,
    moment_table,
    descent_check,
    regime_classify,
    speed_table,
    ratio_R,
    rv_tail_check,
    SeriesDivergenceError,
    NoDescentError,
)
from .laplace import (
    LaplaceSolution,
    solve_fixed_point,
    transform_Z,
    transform_tau,
    excursion_moments,
)
from .simulate import (
    SimConfig,
    PathRecord,
    sample_tau,
    sample_descent_times,
    simulate_path,
    sample_states_at,
    sample_excursion_heights,
    choose_truncation,
    truncation_for_time,
    EventCeilingError,
)
from .oracle import FiniteChain, hitting_mean, hitting_moment2, hitting_moment3, hitting_laplace
from . import experiments

__all__ = [
    "__version__",
    "RateModel", "ModelValidationError", "make_model", "make_table_model",
    "parse_model", "model_from_json", "validate",
    "MomentTable", "SpeedTable", "moment_table", "descent_check",
    "regime_classify", "speed_table", "ratio_R", "rv_tail_check",
    "SeriesDivergenceError", "NoDescentError",
    "LaplaceSolution", "solve_fixed_point", "transform_Z", "transform_tau",
    "excursion_moments",
    "SimConfig", "PathRecord", "sample_tau", "sample_descent_times",
    "simulate_path", "sample_states_at", "sample_excursion_heights",
    "choose_truncation", "truncation_for_time", "EventCeilingError",
    "FiniteChain", "hitting_mean", "hitting_moment2", "hitting_moment3",
    "hitting_laplace",
    "experiments",
]
