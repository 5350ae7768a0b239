"""Perturbed-observation ensemble Kalman inversion: statistics and the update step.

The ensemble is stored as a (J, d) array, one particle per row.  The update
draws data perturbations from a caller-supplied seeded generator, so identical
seeds and inputs give bit-identical results regardless of how the forward
evaluations were scheduled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError

ENSEMBLE_MAGIC = b"EKI1"


@dataclass
class Observation:
    """Measurement vector with diagonal noise covariance.

    y : (M,) measurements
    gamma_diag : (M,) strictly positive diagonal of the noise covariance
    """

    y: np.ndarray
    gamma_diag: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.gamma_diag = np.asarray(self.gamma_diag, dtype=float).ravel()
        if self.y.size < 1:
            raise ValueError("observation must have at least one entry")
        if self.gamma_diag.shape != self.y.shape:
            raise ValueError("gamma_diag must match y in length")
        if not np.all(self.gamma_diag > 0):
            raise ValueError("all noise variances must be strictly positive")

    @property
    def m(self) -> int:
        return self.y.size

    def whiten(self, residual: np.ndarray) -> np.ndarray:
        """Scale a residual (or batch of residuals, last axis M) by gamma^(-1/2)."""
        return residual / np.sqrt(self.gamma_diag)


@dataclass
class Ensemble:
    """J particles of dimension d plus the iteration counter."""

    coeffs: np.ndarray  # (J, d)
    iteration_index: int = 0

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape[0] < 2:
            raise ValueError("ensemble needs at least two particles")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("particle coefficients must be finite")
        if self.iteration_index < 0:
            raise ValueError("iteration_index must be >= 0")

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    def particles(self) -> list[np.ndarray]:
        return [self.coeffs[j] for j in range(self.size)]


@dataclass
class EvaluationBatch:
    """Forward-map outputs for every particle: row j is G(u_j)."""

    values: np.ndarray  # (J, M)
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.mean = self.values.mean(axis=0)


def ensemble_mean(e: Ensemble) -> np.ndarray:
    """Arithmetic mean of the particles, the running estimate of the unknown."""
    return e.coeffs.mean(axis=0)


def empirical_covariances(e: Ensemble, ev: EvaluationBatch) -> tuple[np.ndarray, np.ndarray]:
    """Cross-covariance C_ug (d x M) and output covariance C_gg (M x M).

    Both use the unbiased 1/(J-1) normalisation.  The reductions are plain
    matrix products with a fixed internal order, so results never depend on
    how the forward evaluations were parallelised.
    """
    if ev.values.shape[0] != e.size:
        raise ValueError("evaluation batch and ensemble disagree on J")
    du = e.coeffs - ensemble_mean(e)
    dg = ev.values - ev.mean
    scale = 1.0 / (e.size - 1)
    cug = scale * (du.T @ dg)
    cgg = scale * (dg.T @ dg)
    return cug, cgg


def eki_update(
    e: Ensemble,
    ev: EvaluationBatch,
    obs: Observation,
    alpha: float,
    rng: np.random.Generator,
    perturb_mode: str = "per_particle",
) -> Ensemble:
    """One Kalman-type update u + C_ug (C_gg + alpha*Gamma)^(-1) (y + sqrt(alpha)*xi - G(u)).

    perturb_mode "per_particle" draws a fresh xi ~ N(0, Gamma) for every
    member (standard stochastic EnKF); "shared" draws a single xi used by all
    members, which collapses ensemble spread and is kept only for comparison.
    The M x M system is solved through a Cholesky factorisation; a failure
    there means alpha is too small or the covariance is corrupted.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if perturb_mode not in ("per_particle", "shared"):
        raise ValueError(f"unknown perturb_mode {perturb_mode!r}")
    if ev.values.shape != (e.size, obs.m):
        raise ValueError("evaluation batch shape does not match ensemble/observation")

    cug, cgg = empirical_covariances(e, ev)
    system = cgg + alpha * np.diag(obs.gamma_diag)
    try:
        factor = scipy.linalg.cho_factor(system, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            "Cholesky factorisation of (C_gg + alpha*Gamma) failed; "
            "alpha may be too small or the covariance is corrupted"
        ) from exc

    noise_scale = np.sqrt(obs.gamma_diag)
    if perturb_mode == "per_particle":
        xi = rng.standard_normal((e.size, obs.m)) * noise_scale
    else:
        xi = np.broadcast_to(rng.standard_normal(obs.m) * noise_scale, (e.size, obs.m))

    innovations = obs.y + np.sqrt(alpha) * xi - ev.values  # (J, M)
    solved = scipy.linalg.cho_solve(factor, innovations.T)  # (M, J)
    updated = e.coeffs + (cug @ solved).T
    return Ensemble(updated, iteration_index=e.iteration_index + 1)


def affine_span_residual(initial: Ensemble, particle: np.ndarray) -> float:
    """Relative residual of projecting a particle onto the affine span of an ensemble.

    The subspace property of the update guarantees this stays at rounding
    level for every iterate.
    """
    base = initial.coeffs[0]
    directions = (initial.coeffs[1:] - base).T  # (d, J-1)
    v = np.asarray(particle, dtype=float) - base
    coef, *_ = np.linalg.lstsq(directions, v, rcond=None)
    residual = v - directions @ coef
    scale = max(np.linalg.norm(particle), 1.0)
    return float(np.linalg.norm(residual) / scale)


def save_ensemble(path, e: Ensemble) -> None:
    """Flat binary snapshot: magic "EKI1", little-endian int64 J, d, n, float64 data."""
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<qqq", e.size, e.dim, e.iteration_index))
        fh.write(np.ascontiguousarray(e.coeffs, dtype="<f8").tobytes())


def load_ensemble(path) -> Ensemble:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENSEMBLE_MAGIC:
            raise ValueError(f"not an ensemble snapshot (magic {magic!r})")
        j, d, n = struct.unpack("<qqq", fh.read(24))
        data = np.frombuffer(fh.read(8 * j * d), dtype="<f8").reshape(j, d)
    return Ensemble(data.copy(), iteration_index=n)


def save_ensemble_csv(path, e: Ensemble) -> None:
    """Debug CSV, one particle per row."""
    np.savetxt(path, e.coeffs, delimiter=",")
