"""Ensemble Kalman inversion with adaptive data-misfit regularisation.

Library layout:

* ensemble   -- particles, empirical covariances, the Kalman-type update
* schedules  -- the data misfit controller, LM and ES-MDA baselines
* fields     -- Whittle-Matern parameterisation of smooth conductivities
* levelset   -- three-phase piecewise-constant parameterisation
* cem        -- complete-electrode-model forward solver on the unit disc
* tempering  -- closed-form/quadrature validation of the tempering theory
* experiments -- synthetic truths, data generation, run/repeat harness
* validation -- JSON-report validation suites
* cli        -- command-line entry point
"""

from .ensemble import (
    Ensemble,
    EvaluationBatch,
    Observation,
    eki_update,
    empirical_covariances,
    ensemble_mean,
)
from .errors import ConfigError, EkiError, NumericalError
from .fields import GridField, GridGeometry, P1Parameterisation, WMHyper, matern_acf, wm_transform
from .levelset import LevelSetParams, P2Parameterisation
from .schedules import LMConfig, MisfitStats, TemperingState, compute_misfits, dmc_step, esmda_alpha, lm_alpha, lm_stop
from .experiments import ExperimentConfig, RunResult, compare, config_from_dict, repeat, run

__all__ = [
    "ConfigError",
    "EkiError",
    "Ensemble",
    "EvaluationBatch",
    "ExperimentConfig",
    "GridField",
    "GridGeometry",
    "LMConfig",
    "LevelSetParams",
    "MisfitStats",
    "NumericalError",
    "Observation",
    "P1Parameterisation",
    "P2Parameterisation",
    "RunResult",
    "TemperingState",
    "WMHyper",
    "compare",
    "compute_misfits",
    "config_from_dict",
    "dmc_step",
    "eki_update",
    "empirical_covariances",
    "ensemble_mean",
    "esmda_alpha",
    "lm_alpha",
    "lm_stop",
    "matern_acf",
    "repeat",
    "run",
    "wm_transform",
]

__version__ = "0.1.0"
