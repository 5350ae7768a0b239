"""Three-phase piecewise-constant conductivity through a thresholded smooth field.

A Whittle-Matern field f plays the role of a level-set function; conductivity
takes the low value where f <= zeta1, the background value on (zeta1, zeta2]
and the high value above zeta2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble
from .fields import DEFAULT_ZETA_R, GridField, GridGeometry, WMHyper, wm_transform


@dataclass
class LevelSetParams:
    """Phase conductivities, thresholds and the hyperparameters of f."""

    kappa_l: float
    kappa_b: float
    kappa_h: float
    zeta1: float
    zeta2: float
    wm: WMHyper

    def __post_init__(self):
        if min(self.kappa_l, self.kappa_b, self.kappa_h) <= 0:
            raise ValueError("phase conductivities must be positive")
        if not self.zeta1 < self.zeta2:
            raise ValueError("thresholds must satisfy zeta1 < zeta2")


def level_set_function(omega: GridField, wm: WMHyper, scaling: str = "matched") -> GridField:
    """f = log(lam_f) + W omega, the smooth field to be thresholded."""
    psi = wm_transform(omega, wm, scaling=scaling)
    return GridField(omega.grid, np.log(wm.lam) + psi.values)


def threshold(f: GridField, params: LevelSetParams) -> GridField:
    """Pointwise three-phase map; output takes at most three distinct values."""
    values = np.where(
        f.values <= params.zeta1,
        params.kappa_l,
        np.where(f.values <= params.zeta2, params.kappa_b, params.kappa_h),
    )
    return GridField(f.grid, values)


@dataclass
class P2Bounds:
    """Prior support of the scalar components; also the clamping box."""

    kappa_l: tuple[float, float] = (0.015, 0.075)
    kappa_b: tuple[float, float] = (0.1, 0.4)
    kappa_h: tuple[float, float] = (0.65, 1.1)
    l1: tuple[float, float] = (0.15, 0.6)
    l2: tuple[float, float] = (0.15, 0.6)


class P2Parameterisation:
    """Piecewise-constant conductivity from (kappa_l, kappa_b, kappa_h, L1f, L2f, omega_f).

    lam_f is fixed to 1 and nu_f, sigma_f are fixed, so the level-set function
    has zero prior mean; the default thresholds sit one amplitude each side
    of it (zeta = -sigma_f, +sigma_f), which leaves all three phases present
    in typical prior draws.
    """

    scalar_names = ("kappa_l", "kappa_b", "kappa_h", "l1", "l2")
    n_scalars = 5

    def __init__(
        self,
        grid: GridGeometry,
        nu: float = 2.0,
        sigma: float = 0.5,
        zeta_r: float = DEFAULT_ZETA_R,
        thresholds: tuple[float, float] | None = None,
        bounds: P2Bounds | None = None,
        scaling: str = "matched",
    ):
        self.grid = grid
        self.nu = nu
        self.sigma = sigma
        self.zeta_r = zeta_r
        self.zeta1, self.zeta2 = thresholds if thresholds is not None else (-sigma, sigma)
        if not self.zeta1 < self.zeta2:
            raise ValueError("thresholds must satisfy zeta1 < zeta2")
        self.bounds = bounds if bounds is not None else P2Bounds()
        self.scaling = scaling

    @property
    def dim(self) -> int:
        return self.n_scalars + self.grid.ncells

    def wm_hyper(self, l1: float, l2: float) -> WMHyper:
        return WMHyper(lam=1.0, nu=self.nu, sigma=self.sigma, l1=l1, l2=l2, zeta_r=self.zeta_r)

    def decode(self, u: np.ndarray) -> tuple[LevelSetParams, GridField]:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.dim:
            raise ValueError(f"particle length {u.size} != expected {self.dim}")
        b = self.bounds
        params = LevelSetParams(
            kappa_l=float(np.clip(u[0], *b.kappa_l)),
            kappa_b=float(np.clip(u[1], *b.kappa_b)),
            kappa_h=float(np.clip(u[2], *b.kappa_h)),
            zeta1=self.zeta1,
            zeta2=self.zeta2,
            wm=self.wm_hyper(float(np.clip(u[3], *b.l1)), float(np.clip(u[4], *b.l2))),
        )
        omega = GridField(self.grid, u[self.n_scalars:])
        return params, omega

    def clamp(self, coeffs: np.ndarray) -> None:
        b = self.bounds
        for i, box in enumerate((b.kappa_l, b.kappa_b, b.kappa_h, b.l1, b.l2)):
            np.clip(coeffs[..., i], *box, out=coeffs[..., i])

    def level_set(self, u: np.ndarray) -> GridField:
        params, omega = self.decode(u)
        return level_set_function(omega, params.wm, scaling=self.scaling)

    def kappa(self, u: np.ndarray) -> GridField:
        params, omega = self.decode(u)
        f = level_set_function(omega, params.wm, scaling=self.scaling)
        return threshold(f, params)

    def sample_prior(self, j: int, rng: np.random.Generator) -> Ensemble:
        """Disjoint uniform conductivity priors, uniform lengthscales, normal noise."""
        b = self.bounds
        coeffs = np.empty((j, self.dim))
        coeffs[:, 0] = rng.uniform(*b.kappa_l, size=j)
        coeffs[:, 1] = rng.uniform(*b.kappa_b, size=j)
        coeffs[:, 2] = rng.uniform(*b.kappa_h, size=j)
        coeffs[:, 3] = rng.uniform(*b.l1, size=j)
        coeffs[:, 4] = rng.uniform(*b.l2, size=j)
        coeffs[:, self.n_scalars:] = rng.standard_normal((j, self.grid.ncells))
        return Ensemble(coeffs)

    def scalars(self, u: np.ndarray) -> dict[str, float]:
        params, _ = self.decode(u)
        return {
            "kappa_l": params.kappa_l,
            "kappa_b": params.kappa_b,
            "kappa_h": params.kappa_h,
            "l1": params.wm.l1,
            "l2": params.wm.l2,
        }
