"""Regularisation-parameter controllers and stopping rules.

Three ways to pick the inflation parameter alpha_n for the ensemble update:

* the data misfit controller (DMC), which needs no tuning parameters and
  spends a unit tempering budget sum(1/alpha_n) = 1;
* the Levenberg-Marquardt style rule with its (rho, tau) pair and the
  discrepancy-principle stop;
* the constant schedule alpha_n = N used by multiple-data-assimilation
  smoothers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .ensemble import EvaluationBatch, Observation
from .errors import NumericalError


@dataclass
class MisfitStats:
    """Per-particle least-squares values 0.5*||Gamma^(-1/2)(y - G(u_j))||^2."""

    phis: np.ndarray
    mean: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=float).ravel()
        if np.any(self.phis < 0):
            raise ValueError("misfit values must be nonnegative")
        self.mean = float(self.phis.mean())
        self.variance = float(self.phis.var(ddof=1)) if self.phis.size > 1 else 0.0


def compute_misfits(ev: EvaluationBatch, obs: Observation) -> MisfitStats:
    """Misfit values for every particle plus their empirical mean/variance."""
    residuals = obs.whiten(obs.y - ev.values)  # (J, M)
    phis = 0.5 * np.sum(residuals**2, axis=1)
    return MisfitStats(phis)


@dataclass
class TemperingState:
    """Accumulated tempering parameter t = sum of emitted 1/alpha values."""

    t: float = 0.0
    alpha_inv_history: list[float] = field(default_factory=list)
    finished: bool = False

    def advance(self, alpha_inv: float, is_final: bool) -> None:
        self.alpha_inv_history.append(alpha_inv)
        self.t += alpha_inv
        if is_final:
            # t_n + (1 - t_n) rounds to exactly 1.0 in IEEE double arithmetic.
            self.finished = True


def dmc_step(stats: MisfitStats, m: int, state: TemperingState) -> tuple[float, bool]:
    """One step of the data misfit controller.

    Returns (alpha_inv, is_final) with
        alpha_inv = min(max(M / (2*mean), sqrt(M / (2*variance))), 1 - t)
    and advances the tempering state.  An exact fit (mean and variance both
    zero) makes both candidate terms infinite, so the step is capped at the
    remaining budget and terminates the schedule.
    """
    if state.finished:
        raise ValueError("tempering schedule already finished")
    if m < 1:
        raise ValueError("M must be >= 1")

    mean_term = np.inf if stats.mean == 0.0 else m / (2.0 * stats.mean)
    var_term = np.inf if stats.variance == 0.0 else np.sqrt(m / (2.0 * stats.variance))
    candidate = max(mean_term, var_term)

    remaining = 1.0 - state.t
    if candidate >= remaining:
        alpha_inv, is_final = remaining, True
    else:
        alpha_inv, is_final = candidate, False
    state.advance(alpha_inv, is_final)
    return alpha_inv, is_final


@dataclass
class LMConfig:
    """Inputs of the Levenberg-Marquardt controller.

    tau defaults to 1/rho + 1e-6 when not given.  The alpha search walks the
    geometric grid alpha0 * growth^i, which the source scheme leaves
    unspecified.
    """

    rho: float = 0.6
    tau: float | None = None
    alpha0: float = 1.0
    growth: float = 2.0
    max_doublings: int = 60

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.tau is None:
            self.tau = 1.0 / self.rho + 1e-6
        if self.tau <= 1.0 / self.rho:
            raise ValueError("tau must exceed 1/rho")
        if self.alpha0 <= 0 or self.growth <= 1:
            raise ValueError("alpha0 must be positive and growth > 1")


def lm_alpha(ev_mean: np.ndarray, obs: Observation, cgg: np.ndarray, cfg: LMConfig) -> float:
    """Smallest alpha on the geometric grid satisfying the LM inequality.

    Condition: rho * ||Gamma^(-1/2) r|| <= alpha * ||Gamma^(1/2) (C_gg + alpha*Gamma)^(-1) r||
    with r = y - mean(G).  The right side increases with alpha toward
    ||Gamma^(-1/2) r||, so the search terminates for any rho < 1 unless the
    grid is exhausted first.
    """
    r = obs.y - np.asarray(ev_mean, dtype=float)
    lhs = cfg.rho * np.linalg.norm(obs.whiten(r))
    if lhs == 0.0:
        return cfg.alpha0
    sqrt_gamma = np.sqrt(obs.gamma_diag)
    alpha = cfg.alpha0
    for _ in range(cfg.max_doublings + 1):
        system = cgg + alpha * np.diag(obs.gamma_diag)
        try:
            solved = scipy.linalg.cho_solve(scipy.linalg.cho_factor(system, lower=True), r)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError("LM system factorisation failed") from exc
        rhs = alpha * np.linalg.norm(sqrt_gamma * solved)
        if lhs <= rhs:
            return alpha
        alpha *= cfg.growth
    raise NumericalError(
        f"LM alpha search exhausted {cfg.max_doublings} doublings without "
        f"satisfying the inequality (rho={cfg.rho})"
    )


def lm_stop(dm1: float, cfg: LMConfig, delta: float) -> bool:
    """Discrepancy-principle stop: ||Gamma^(-1/2)(y - mean(G))|| <= tau * delta."""
    if delta <= 0:
        raise ValueError("noise level delta must be positive")
    return dm1 <= cfg.tau * delta


def esmda_alpha(n_total: int) -> float:
    """Constant inflation alpha = N so that N steps spend the unit budget exactly."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    return float(n_total)


SCHEDULE_COLUMNS = ["n", "alpha_inv", "t", "phi_mean", "phi_var", "dm1", "dm2", "dm3"]


def write_schedule_csv(path, rows: list[dict]) -> None:
    """Per-iteration schedule log with the fixed column set."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCHEDULE_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in SCHEDULE_COLUMNS})
