"""Named experiment presets: paper-scale reproductions and desk-scale variants.

Desk presets shrink the parameter grid and meshes for fast iteration and CI;
paper presets carry the full 100x100 grid and 9216/7744-element meshes.  Every
preset resolves to a complete config, so a frozen copy written next to run
outputs reproduces the run bit for bit.
"""

from __future__ import annotations

from .errors import ConfigError
from .experiments import ExperimentConfig, config_from_dict

_BASE_EXP1 = {
    "experiment": "exp1",
    "parameterisation": "p1",
    "ensemble_size": 200,
    "grid_n": 100,
    "data_elements": 9216,
    "inversion_elements": 7744,
    "nu": 3.0,
    "sigma": 1.5,
}

_BASE_EXP2 = {
    "experiment": "exp2",
    "parameterisation": "p2",
    "ensemble_size": 200,
    "grid_n": 100,
    "data_elements": 9216,
    "inversion_elements": 7744,
    "nu_f": 2.0,
    "sigma_f": 0.5,
}

_DESK = {
    "grid_n": 50,
    "data_elements": 2304,  # 16 * 12^2
    "inversion_elements": 1936,  # 16 * 11^2
}

PRESETS: dict[str, dict] = {
    "exp1-dmc": {**_BASE_EXP1, "controller": {"kind": "dmc"}},
    "exp1-lm": {**_BASE_EXP1, "controller": {"kind": "lm", "rho": 0.6}},
    "exp1-esmda": {**_BASE_EXP1, "controller": {"kind": "esmda", "n_steps": 10}},
    "exp2-dmc": {**_BASE_EXP2, "controller": {"kind": "dmc"}},
    "exp2-lm": {**_BASE_EXP2, "controller": {"kind": "lm", "rho": 0.6}},
    "exp2-esmda": {**_BASE_EXP2, "controller": {"kind": "esmda", "n_steps": 13}},
    "exp1-dmc-desk": {**_BASE_EXP1, **_DESK, "controller": {"kind": "dmc"}},
    "exp1-lm-desk": {**_BASE_EXP1, **_DESK, "controller": {"kind": "lm", "rho": 0.6}},
    "exp2-dmc-desk": {**_BASE_EXP2, **_DESK, "controller": {"kind": "dmc"}},
    "exp2-lm-desk": {**_BASE_EXP2, **_DESK, "controller": {"kind": "lm", "rho": 0.6}},
    "toy-dmc": {
        "experiment": "toy",
        "ensemble_size": 10_000,
        "controller": {"kind": "dmc"},
        "repeats": 1,
    },
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return config_from_dict(PRESETS[name])
