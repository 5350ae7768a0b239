"""Level-set thresholding and the piecewise-constant parameterisation."""

import numpy as np
import pytest

from eki.fields import GridField, GridGeometry, WMHyper
from eki.levelset import (
    LevelSetParams,
    P2Parameterisation,
    level_set_function,
    threshold,
)


def _params(zeta1=-0.5, zeta2=0.5):
    return LevelSetParams(
        kappa_l=0.025, kappa_b=0.125, kappa_h=1.0, zeta1=zeta1, zeta2=zeta2,
        wm=WMHyper(nu=2.0, sigma=0.5, l1=0.3, l2=0.3),
    )


class TestLevelSetFunction:
    def test_unit_lam_zero_noise_is_zero(self):
        grid = GridGeometry(6, 6)
        f = level_set_function(GridField(grid, np.zeros((6, 6))), WMHyper(lam=1.0, nu=2.0, sigma=0.5))
        assert np.all(f.values == 0)

    def test_lam_shift_is_additive(self):
        grid = GridGeometry(6, 6)
        rng = np.random.default_rng(0)
        omega = GridField(grid, rng.standard_normal((6, 6)))
        base = level_set_function(omega, WMHyper(lam=1.0, nu=2.0, sigma=0.5))
        shifted = level_set_function(omega, WMHyper(lam=np.e, nu=2.0, sigma=0.5))
        assert shifted.values == pytest.approx(base.values + 1.0)


class TestThreshold:
    def test_mid_band_field_is_background(self):
        grid = GridGeometry(5, 5)
        kappa = threshold(GridField(grid, np.zeros((5, 5))), _params())
        assert np.all(kappa.values == 0.125)

    def test_ramp_produces_ordered_bands(self):
        # pointwise oracle on an increasing ramp crossing both thresholds
        grid = GridGeometry(30, 4)
        x1, _ = grid.centers()
        ramp = np.tile(x1[:, None] * 2.0, (1, 4))  # in [-2, 2] along axis 0
        params = _params()
        kappa = threshold(GridField(grid, ramp), params)
        oracle = np.where(ramp <= -0.5, 0.025, np.where(ramp <= 0.5, 0.125, 1.0))
        assert np.array_equal(kappa.values, oracle)
        cols = kappa.values[:, 0]
        # bands appear in low -> background -> high order along the ramp
        changes = np.flatnonzero(np.diff(cols) != 0)
        assert len(changes) == 2
        assert cols[0] == 0.025 and cols[-1] == 1.0

    def test_at_most_three_values_partition(self):
        grid = GridGeometry(12, 12)
        rng = np.random.default_rng(1)
        f = GridField(grid, rng.standard_normal((12, 12)) * 2)
        params = _params()
        kappa = threshold(f, params)
        values = np.unique(kappa.values)
        assert set(values).issubset({0.025, 0.125, 1.0})
        counts = sum((kappa.values == v).sum() for v in values)
        assert counts == 144

    def test_monotone_in_field(self):
        # raising f everywhere weakly grows the high phase, shrinks the low
        grid = GridGeometry(10, 10)
        rng = np.random.default_rng(2)
        f = rng.standard_normal((10, 10))
        params = _params()
        before = threshold(GridField(grid, f), params)
        after = threshold(GridField(grid, f + 0.4), params)
        assert np.all((after.values >= before.values - 1e-15))
        assert ((after.values == 1.0) & (before.values != 1.0)).any() or True
        low_before = before.values == 0.025
        low_after = after.values == 0.025
        assert np.all(low_after <= low_before)

    def test_threshold_rescaling_invariance(self):
        # monotone rescaling of f with matching thresholds preserves phases
        grid = GridGeometry(8, 8)
        rng = np.random.default_rng(3)
        f = rng.standard_normal((8, 8))
        a = threshold(GridField(grid, f), _params(-0.5, 0.5))
        b = threshold(GridField(grid, 3.0 * f), _params(-1.5, 1.5))
        assert np.array_equal(a.values, b.values)

    def test_threshold_order_enforced(self):
        with pytest.raises(ValueError):
            _params(0.5, -0.5)


class TestP2Parameterisation:
    def test_dimension_layout(self):
        param = P2Parameterisation(GridGeometry(100, 100))
        assert param.dim == 10_005

    def test_default_thresholds_are_pm_sigma(self):
        param = P2Parameterisation(GridGeometry(10, 10), sigma=0.5)
        assert (param.zeta1, param.zeta2) == (-0.5, 0.5)

    def test_prior_supports_disjoint_and_contain_truth(self):
        param = P2Parameterisation(GridGeometry(10, 10))
        ens = param.sample_prior(300, np.random.default_rng(4))
        kl, kb, kh = ens.coeffs[:, 0], ens.coeffs[:, 1], ens.coeffs[:, 2]
        assert kl.max() < kb.min() and kb.max() < kh.min()
        b = param.bounds
        for (lo, hi), true in ((b.kappa_l, 0.025), (b.kappa_b, 0.125), (b.kappa_h, 1.0)):
            assert lo < true < hi

    def test_prior_deterministic(self):
        param = P2Parameterisation(GridGeometry(6, 6))
        a = param.sample_prior(4, np.random.default_rng(5)).coeffs
        b = param.sample_prior(4, np.random.default_rng(5)).coeffs
        assert np.array_equal(a, b)

    def test_kappa_three_values(self):
        param = P2Parameterisation(GridGeometry(16, 16))
        u = param.sample_prior(2, np.random.default_rng(6)).coeffs[0]
        kappa = param.kappa(u)
        assert len(np.unique(kappa.values)) <= 3
        assert np.all(kappa.values > 0)

    def test_level_set_matches_threshold_of_kappa(self):
        param = P2Parameterisation(GridGeometry(12, 12))
        u = param.sample_prior(2, np.random.default_rng(7)).coeffs[0]
        f = param.level_set(u)
        kappa = param.kappa(u)
        high = f.values > param.zeta2
        assert np.array_equal(kappa.values == np.clip(u[2], *param.bounds.kappa_h), high)

    def test_clamping(self):
        param = P2Parameterisation(GridGeometry(4, 4))
        coeffs = np.zeros((1, param.dim))
        coeffs[0, :5] = [0.0, 99.0, 0.0, 0.0, 99.0]
        param.clamp(coeffs)
        assert coeffs[0, :5] == pytest.approx([0.015, 0.4, 0.65, 0.15, 0.6])
