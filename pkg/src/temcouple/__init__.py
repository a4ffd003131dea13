"""Truncated Euler-Maruyama integration with coupling-based diagnostics.

Subpackages by responsibility:

* :mod:`temcouple.model` -- SDE drifts and structural-condition checkers
* :mod:`temcouple.calibrate` -- truncation map, step ceilings, all constants
* :mod:`temcouple.scheme` -- the integrator and moment diagnostics
* :mod:`temcouple.distfn` -- the concave contraction distance function
* :mod:`temcouple.coupling` -- one-step coupling and statistical verifiers
* :mod:`temcouple.measure` -- Wasserstein/KS analytics and experiments
* :mod:`temcouple.cli` -- experiment runner
"""

from .calibrate import Calibration, TruncationParams, calibrate_full, truncate, truncation_radius
from .distfn import DistanceFunction, build_distance_function, eval_f
from .errors import (
    CalibrationError,
    ConfigError,
    ConstructionError,
    InputError,
    NumericalError,
    TemcoupleError,
)
from .model import (
    CheckReport,
    DissipativityConstants,
    DriftModel,
    GrowthConstants,
    ModelBundle,
    check_contractivity_at_infinity,
    check_polynomial_lipschitz,
    eval_drift,
    get_model,
    make_double_well,
    make_polynomial,
    make_sin2,
)
from .scheme import PathEnsemble, TemState, moment_estimate, simulate_ensemble, tem_step

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "CalibrationError",
    "CheckReport",
    "ConfigError",
    "ConstructionError",
    "DissipativityConstants",
    "DistanceFunction",
    "DriftModel",
    "GrowthConstants",
    "InputError",
    "ModelBundle",
    "NumericalError",
    "PathEnsemble",
    "TemState",
    "TemcoupleError",
    "build_distance_function",
    "calibrate_full",
    "check_contractivity_at_infinity",
    "check_polynomial_lipschitz",
    "eval_drift",
    "eval_f",
    "get_model",
    "make_double_well",
    "make_polynomial",
    "make_sin2",
    "moment_estimate",
    "simulate_ensemble",
    "tem_step",
    "truncate",
    "truncation_radius",
]
