"""Whittle-Matern random fields on a cell-centred grid over [-1,1]^2.

White noise is pushed through inverse fractional powers of the elliptic
operator  I - div(diag(L1^2, L2^2) grad)  with Robin boundary conditions.
Because the operator is a Kronecker sum of two one-dimensional tridiagonal
operators, its symmetric eigendecomposition is exact and cheap, and any real
exponent (integer or half-integer) is applied spectrally.  A sparse assembly
of the same matrix is kept for validation.

Two right-hand-side scalings are available: "matched", calibrated so that a
field with smoothness nu and amplitude sigma has marginal variance close to
sigma^2 (the standard SPDE normalisation), and "printed", the literal
constant 4*pi*sigma^2*nu*sqrt(L1*L2), whose variance excess is reported by
the validation suite instead of being silently rescaled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import gammaln, kv

from .ensemble import Ensemble

GRID_MAGIC = b"GRD1"

# Robin parameter frozen by calibrate_robin_parameter on a 50x50 grid with
# nu=3, sigma=1.5, L=0.375: boundary-cell sampling variance within 20% of the
# interior value (see tests/test_fields.py::test_frozen_zeta_r_calibration).
DEFAULT_ZETA_R = 11.0


@dataclass
class GridGeometry:
    """Cell-centred n1 x n2 grid over the square [-extent, extent]^2."""

    n1: int
    n2: int
    extent: float = 1.0

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("grid needs at least 2 cells per direction")

    @property
    def h1(self) -> float:
        return 2.0 * self.extent / self.n1

    @property
    def h2(self) -> float:
        return 2.0 * self.extent / self.n2

    @property
    def ncells(self) -> int:
        return self.n1 * self.n2

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = -self.extent + (np.arange(self.n1) + 0.5) * self.h1
        x2 = -self.extent + (np.arange(self.n2) + 0.5) * self.h2
        return x1, x2


@dataclass
class GridField:
    """Scalar field sampled at cell centres; values[i1, i2] follows axis order (x1, x2)."""

    grid: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.n1, self.grid.n2)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass
class WMHyper:
    """Hyperparameters of the Whittle-Matern transform.

    lam is the multiplicative scale of the conductivity, nu the smoothness,
    sigma the amplitude, (l1, l2) the intrinsic lengthscales and zeta_r the
    Robin boundary parameter (0 = Dirichlet-like, large = Neumann-like).
    """

    lam: float = 1.0
    nu: float = 3.0
    sigma: float = 1.5
    l1: float = 0.3
    l2: float = 0.3
    zeta_r: float = DEFAULT_ZETA_R

    def __post_init__(self):
        if min(self.lam, self.nu, self.sigma, self.l1, self.l2) <= 0:
            raise ValueError("lam, nu, sigma and lengthscales must be positive")
        if self.zeta_r < 0:
            raise ValueError("zeta_r must be >= 0")

    @property
    def exponent(self) -> float:
        return (self.nu + 1.0) / 2.0

    def require_representable_exponent(self) -> None:
        """The transform realises only exponents that are multiples of 1/2.

        The autocorrelation function itself is defined for every nu, so this
        is checked when an operator is built, not at construction.
        """
        k = 2.0 * self.exponent
        if abs(k - round(k)) > 1e-12 or round(k) < 1:
            raise ValueError("(nu+1)/2 must be a positive multiple of 1/2")


def _tridiagonal_factor(n: int, h: float, length: float, zeta_r: float) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the 1D operator L^2 * (Robin-modified -d2/dx2)."""
    w = length**2 / h**2
    diag = np.full(n, 2.0 * w)
    off = np.full(n - 1, -w)
    # End cells see one interior face plus the Robin closure on the boundary
    # face: flux 2w/(1+beta) with beta = 2*zeta_r*L^2/h.
    beta = 2.0 * zeta_r * length**2 / h
    diag[0] = diag[-1] = w + 2.0 * w / (1.0 + beta)
    return diag, off


class WMOperator:
    """Spectral form of I - div(diag(L1^2,L2^2) grad) with Robin boundaries.

    Holds the eigendecompositions of the two 1D factors; apply_inverse_power
    evaluates A^(-p) omega for any real p >= 0.  Immutable after construction,
    safe to share across threads.
    """

    def __init__(self, hyper: WMHyper, grid: GridGeometry):
        hyper.require_representable_exponent()
        self.hyper = hyper
        self.grid = grid
        d1, e1 = _tridiagonal_factor(grid.n1, grid.h1, hyper.l1, hyper.zeta_r)
        d2, e2 = _tridiagonal_factor(grid.n2, grid.h2, hyper.l2, hyper.zeta_r)
        lam1, q1 = scipy.linalg.eigh_tridiagonal(d1, e1)
        lam2, q2 = scipy.linalg.eigh_tridiagonal(d2, e2)
        self._q1, self._q2 = q1, q2
        # Eigenvalues of the Kronecker sum I + T1 (+) T2.
        self._eigs = 1.0 + lam1[:, None] + lam2[None, :]

    def apply_inverse_power(self, omega: np.ndarray, power: float) -> np.ndarray:
        """A^(-power) applied to a (n1, n2) array."""
        coef = self._q1.T @ omega @ self._q2
        coef /= self._eigs**power
        return self._q1 @ coef @ self._q2.T

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """A applied to a (n1, n2) array (for residual checks)."""
        coef = self._q1.T @ psi @ self._q2
        coef *= self._eigs
        return self._q1 @ coef @ self._q2.T

    def variance_map(self, constant: float) -> np.ndarray:
        """Exact marginal variance of the transform output for white-noise input."""
        p = self.hyper.exponent
        weights = self._eigs ** (-2.0 * p)
        cell_scale = constant**2 / (self.grid.h1 * self.grid.h2)
        return cell_scale * (self._q1**2 @ weights @ (self._q2**2).T)


def assemble_wm_operator(hyper: WMHyper, grid: GridGeometry) -> sp.csr_matrix:
    """Sparse matrix of the same operator, cells flattened C-order (x1-major)."""
    d1, e1 = _tridiagonal_factor(grid.n1, grid.h1, hyper.l1, hyper.zeta_r)
    d2, e2 = _tridiagonal_factor(grid.n2, grid.h2, hyper.l2, hyper.zeta_r)
    t1 = sp.diags([e1, d1, e1], [-1, 0, 1], format="csr")
    t2 = sp.diags([e2, d2, e2], [-1, 0, 1], format="csr")
    eye1 = sp.identity(grid.n1, format="csr")
    eye2 = sp.identity(grid.n2, format="csr")
    return (sp.kron(t1, eye2) + sp.kron(eye1, t2) + sp.identity(grid.ncells)).tocsr()


def transform_constant(hyper: WMHyper, scaling: str = "matched") -> float:
    """Right-hand-side constant of the fractional solve.

    "matched": 2*sigma*sqrt(pi*nu*L1*L2), giving marginal variance ~ sigma^2.
    "printed": 4*pi*sigma^2*(Gamma(nu+1)/Gamma(nu))*sqrt(L1*L2), the literal
    constant; its variance inflation is measured by validate_acf.
    """
    gamma_ratio = np.exp(gammaln(hyper.nu + 1.0) - gammaln(hyper.nu))  # = nu
    root_l = np.sqrt(hyper.l1 * hyper.l2)
    if scaling == "matched":
        return float(2.0 * hyper.sigma * np.sqrt(np.pi * gamma_ratio) * root_l)
    if scaling == "printed":
        return float(4.0 * np.pi * hyper.sigma**2 * gamma_ratio * root_l)
    raise ValueError(f"unknown scaling {scaling!r}")


def wm_transform(
    omega: GridField,
    hyper: WMHyper,
    operator: WMOperator | None = None,
    scaling: str = "matched",
) -> GridField:
    """Smooth field Psi from white noise omega via the fractional solve.

    omega entries are i.i.d. N(0,1) per cell and are rescaled by
    1/sqrt(h1*h2) here to approximate spatial white noise.
    """
    grid = omega.grid
    op = operator if operator is not None else WMOperator(hyper, grid)
    c = transform_constant(hyper, scaling)
    rhs = omega.values * (c / np.sqrt(grid.h1 * grid.h2))
    return GridField(grid, op.apply_inverse_power(rhs, hyper.exponent))


def matern_acf(x: np.ndarray, hyper: WMHyper) -> float:
    """Matern autocorrelation sigma^2 * 2^(1-nu)/Gamma(nu) * r^nu * K_nu(r).

    r is the anisotropic distance sqrt((x1/L1)^2 + (x2/L2)^2); the zero-lag
    limit is sigma^2.
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt((x[0] / hyper.l1) ** 2 + (x[1] / hyper.l2) ** 2)
    if r == 0.0:
        return float(hyper.sigma**2)
    log_norm = (1.0 - hyper.nu) * np.log(2.0) - gammaln(hyper.nu)
    return float(hyper.sigma**2 * np.exp(log_norm + hyper.nu * np.log(r)) * kv(hyper.nu, r))


# Numerical-safety cap on the log-conductivity exponent; only pathological
# particles far outside the prior ever reach it.
_EXP_CAP = 80.0


@dataclass
class P1Bounds:
    """Prior support of the scalar components; also the clamping box."""

    lam: tuple[float, float] = (5e-3, 1.0)
    l1: tuple[float, float] = (0.15, 0.6)
    l2: tuple[float, float] = (0.15, 0.6)


class P1Parameterisation:
    """Smooth conductivity kappa = lam * exp(W omega).

    Particle layout: [lam, L1, L2, omega(n1*n2 cells, C-order)].  Smoothness
    nu and amplitude sigma are fixed, not inverted.
    """

    scalar_names = ("lam", "l1", "l2")
    n_scalars = 3

    def __init__(
        self,
        grid: GridGeometry,
        nu: float = 3.0,
        sigma: float = 1.5,
        zeta_r: float = DEFAULT_ZETA_R,
        bounds: P1Bounds | None = None,
        scaling: str = "matched",
    ):
        self.grid = grid
        self.nu = nu
        self.sigma = sigma
        self.zeta_r = zeta_r
        self.bounds = bounds if bounds is not None else P1Bounds()
        self.scaling = scaling

    @property
    def dim(self) -> int:
        return self.n_scalars + self.grid.ncells

    def hyper(self, lam: float, l1: float, l2: float) -> WMHyper:
        return WMHyper(lam=lam, nu=self.nu, sigma=self.sigma, l1=l1, l2=l2, zeta_r=self.zeta_r)

    def decode(self, u: np.ndarray) -> tuple[WMHyper, GridField]:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.dim:
            raise ValueError(f"particle length {u.size} != expected {self.dim}")
        b = self.bounds
        lam = float(np.clip(u[0], *b.lam))
        l1 = float(np.clip(u[1], *b.l1))
        l2 = float(np.clip(u[2], *b.l2))
        omega = GridField(self.grid, u[self.n_scalars:])
        return self.hyper(lam, l1, l2), omega

    def clamp(self, coeffs: np.ndarray) -> None:
        """Clamp scalar components to the prior box in place (after each update)."""
        b = self.bounds
        np.clip(coeffs[..., 0], *b.lam, out=coeffs[..., 0])
        np.clip(coeffs[..., 1], *b.l1, out=coeffs[..., 1])
        np.clip(coeffs[..., 2], *b.l2, out=coeffs[..., 2])

    def kappa(self, u: np.ndarray) -> GridField:
        """Conductivity field of one particle; strictly positive everywhere."""
        hyper, omega = self.decode(u)
        psi = wm_transform(omega, hyper, scaling=self.scaling)
        values = hyper.lam * np.exp(np.clip(psi.values, -_EXP_CAP, _EXP_CAP))
        return GridField(self.grid, values)

    def log_kappa_field(self, u: np.ndarray) -> GridField:
        """log(kappa) = log(lam) + Psi, the smooth field behind the conductivity."""
        hyper, omega = self.decode(u)
        psi = wm_transform(omega, hyper, scaling=self.scaling)
        return GridField(self.grid, np.log(hyper.lam) + psi.values)

    def sample_prior(self, j: int, rng: np.random.Generator) -> Ensemble:
        """Uniform scalars over the prior box, standard-normal white noise."""
        b = self.bounds
        coeffs = np.empty((j, self.dim))
        coeffs[:, 0] = rng.uniform(*b.lam, size=j)
        coeffs[:, 1] = rng.uniform(*b.l1, size=j)
        coeffs[:, 2] = rng.uniform(*b.l2, size=j)
        coeffs[:, self.n_scalars:] = rng.standard_normal((j, self.grid.ncells))
        return Ensemble(coeffs)

    def scalars(self, u: np.ndarray) -> dict[str, float]:
        hyper, _ = self.decode(u)
        return {"lam": hyper.lam, "l1": hyper.l1, "l2": hyper.l2}


def calibrate_robin_parameter(
    grid: GridGeometry,
    nu: float = 3.0,
    sigma: float = 1.5,
    length: float = 0.375,
    candidates: np.ndarray | None = None,
) -> tuple[float, dict[float, float]]:
    """Pick zeta_r so edge-cell variance best matches the interior variance.

    Uses the exact variance map of the discrete operator (no sampling).
    Returns the best candidate and the edge/interior variance ratio per
    candidate, for documentation.
    """
    if candidates is None:
        candidates = np.asarray([0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 12.0])
    ratios: dict[float, float] = {}
    for zeta in candidates:
        hyper = WMHyper(nu=nu, sigma=sigma, l1=length, l2=length, zeta_r=float(zeta))
        op = WMOperator(hyper, grid)
        var = op.variance_map(transform_constant(hyper, "matched"))
        edge = np.concatenate([var[0, :], var[-1, :], var[1:-1, 0], var[1:-1, -1]])
        q = grid.n1 // 4
        interior = var[q:-q, q:-q]
        ratios[float(zeta)] = float(edge.mean() / interior.mean())
    best = min(ratios, key=lambda z: abs(ratios[z] - 1.0))
    return best, ratios


def save_grid_field(path, f: GridField) -> None:
    """Flat binary: magic "GRD1", int64 n1, n2, float64 h1, h2, values C-order."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<qqdd", f.grid.n1, f.grid.n2, f.grid.h1, f.grid.h2))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_grid_field(path) -> GridField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRID_MAGIC:
            raise ValueError(f"not a grid field snapshot (magic {magic!r})")
        n1, n2, h1, h2 = struct.unpack("<qqdd", fh.read(32))
        values = np.frombuffer(fh.read(8 * n1 * n2), dtype="<f8").reshape(n1, n2)
    extent = 0.5 * h1 * n1
    grid = GridGeometry(n1, n2, extent=extent)
    return GridField(grid, values.copy())


def save_grid_field_csv(path, f: GridField) -> None:
    """Matrix CSV for plotting, rows follow x1."""
    np.savetxt(path, f.values, delimiter=",")
