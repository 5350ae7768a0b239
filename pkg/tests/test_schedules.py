"""Controllers: data misfit controller, LM baseline, ES-MDA, misfit statistics."""

import numpy as np
import pytest

from eki.ensemble import EvaluationBatch, Observation
from eki.errors import NumericalError
from eki.schedules import (
    LMConfig,
    MisfitStats,
    TemperingState,
    compute_misfits,
    dmc_step,
    esmda_alpha,
    lm_alpha,
    lm_stop,
    write_schedule_csv,
)


class TestComputeMisfits:
    def test_perfect_fit(self):
        obs = Observation([1.0, 2.0], [1.0, 1.0])
        ev = EvaluationBatch(np.tile(obs.y, (3, 1)))
        stats = compute_misfits(ev, obs)
        assert np.all(stats.phis == 0) and stats.mean == 0 and stats.variance == 0

    def test_hand_evaluated_scalar(self):
        # M=1, gamma=4, y=2, predictions {0, 4}: phi = (y-g)^2 / (2*gamma) = 0.5 each
        obs = Observation([2.0], [4.0])
        ev = EvaluationBatch(np.array([[0.0], [4.0]]))
        stats = compute_misfits(ev, obs)
        assert stats.phis == pytest.approx([0.5, 0.5])
        assert stats.mean == pytest.approx(0.5)
        assert stats.variance == pytest.approx(0.0)

    def test_against_two_pass_oracle(self):
        rng = np.random.default_rng(21)
        obs = Observation(rng.standard_normal(6), rng.uniform(0.5, 2.0, 6))
        ev = EvaluationBatch(rng.standard_normal((40, 6)))
        stats = compute_misfits(ev, obs)
        # independent two-pass summation oracle
        phis = []
        for j in range(40):
            acc = 0.0
            for m in range(6):
                acc += (obs.y[m] - ev.values[j, m]) ** 2 / obs.gamma_diag[m]
            phis.append(0.5 * acc)
        mean = sum(phis) / len(phis)
        var = sum((p - mean) ** 2 for p in phis) / (len(phis) - 1)
        assert stats.mean == pytest.approx(mean, rel=1e-12)
        assert stats.variance == pytest.approx(var, rel=1e-12)
        assert np.all(stats.phis >= 0)


def _dmc_oracle(m, phi_mean, phi_var, t):
    """Direct evaluation of the controller formula, written independently."""
    mean_term = np.inf if phi_mean == 0 else m / (2.0 * phi_mean)
    var_term = np.inf if phi_var == 0 else np.sqrt(m / (2.0 * phi_var))
    return min(max(mean_term, var_term), 1.0 - t)


def _stats_with(mean, variance):
    """MisfitStats carrying prescribed empirical moments."""
    stats = MisfitStats(np.array([mean]))
    stats.mean, stats.variance = float(mean), float(variance)
    return stats


class TestDmcStep:
    def test_mean_branch_dominates_for_large_variance(self):
        # M=256, mean=12800, var=1e8: mean term 0.01 beats the variance term
        # sqrt(256/2e8) ~ 1.13e-3, so alpha_inv = 0.01 (oracle-computed).
        state = TemperingState()
        alpha_inv, final = dmc_step(_stats_with(12800.0, 1e8), 256, state)
        assert alpha_inv == pytest.approx(_dmc_oracle(256, 12800.0, 1e8, 0.0))
        assert alpha_inv == pytest.approx(0.01)
        assert not final

    def test_variance_branch_dominates_for_smaller_variance(self):
        # with var = 1e5 the variance term sqrt(128/1e5) ~ 0.035777 wins
        state = TemperingState()
        alpha_inv, final = dmc_step(_stats_with(12800.0, 1e5), 256, state)
        assert alpha_inv == pytest.approx(_dmc_oracle(256, 12800.0, 1e5, 0.0))
        assert alpha_inv == pytest.approx(np.sqrt(128.0 / 1e5))
        assert not final

    def test_misfit_at_discrepancy_level_finishes_in_one_step(self):
        # mean = M/2 makes the mean term equal 1 >= 1 - t
        state = TemperingState()
        alpha_inv, final = dmc_step(_stats_with(128.0, 37.0), 256, state)
        assert alpha_inv == 1.0 and final and state.finished and state.t == 1.0

    def test_cap_by_remaining_budget(self):
        state = TemperingState()
        state.t = 0.95
        alpha_inv, final = dmc_step(_stats_with(256.0, 3_200_000.0), 256, state)
        assert alpha_inv == pytest.approx(0.05)  # terms 0.5 and 0.2 both capped
        assert final

    def test_exact_fit_terminates(self):
        stats = MisfitStats(np.zeros(4))
        state = TemperingState()
        alpha_inv, final = dmc_step(stats, 7, state)
        assert alpha_inv == 1.0 and final

    def test_finished_state_rejected(self):
        state = TemperingState(finished=True)
        with pytest.raises(ValueError):
            dmc_step(MisfitStats(np.zeros(2)), 4, state)

    def test_budget_sums_to_one_exactly(self):
        # emitted alpha_inv history must sum to exactly 1.0 in order
        rng = np.random.default_rng(2)
        for _ in range(50):
            state = TemperingState()
            while not state.finished:
                dmc_step(_stats_with(rng.uniform(50, 5e4), rng.uniform(1e2, 1e9)), 256, state)
            total = 0.0
            for a in state.alpha_inv_history:
                assert 0.0 < a <= 1.0
                total += a
            assert total == 1.0
            assert state.t == 1.0

    def test_statistical_discrepancy_honoured(self):
        # after each uncapped step: 2 a^-1 mean <= M or 4 a^-2 var <= 2M
        rng = np.random.default_rng(3)
        m = 64
        for _ in range(200):
            stats = _stats_with(rng.uniform(1, 1e5), rng.uniform(1, 1e9))
            state = TemperingState()
            alpha_inv, final = dmc_step(stats, m, state)
            if final:
                continue
            ok_mean = 2.0 * alpha_inv * stats.mean <= m * (1 + 1e-12)
            ok_var = 4.0 * alpha_inv**2 * stats.variance <= 2.0 * m * (1 + 1e-12)
            assert ok_mean or ok_var


class TestLmAlpha:
    def test_zero_covariance_accepts_alpha0(self):
        # M=1, Cgg=0, gamma=1: inequality rho|r| <= |r| holds at i=0
        obs = Observation([3.0], [1.0])
        cfg = LMConfig(rho=0.7, alpha0=1.0)
        alpha = lm_alpha(np.array([1.0]), obs, np.zeros((1, 1)), cfg)
        assert alpha == 1.0

    def test_scalar_closed_form_threshold(self):
        # M=1, Cgg=c>0: condition rho <= alpha*gamma/(c+alpha*gamma), so the
        # first geometric alpha >= rho*c/(gamma*(1-rho)) is returned
        c, gamma, rho = 5.0, 0.5, 0.8
        obs = Observation([2.0], [gamma])
        cfg = LMConfig(rho=rho, alpha0=1.0, growth=2.0)
        alpha = lm_alpha(np.array([0.0]), obs, np.array([[c]]), cfg)
        threshold = rho * c / (gamma * (1.0 - rho))
        grid = [1.0 * 2.0**i for i in range(40)]
        expected = next(a for a in grid if a >= threshold)
        assert alpha == expected

    def test_monotone_in_rho(self):
        rng = np.random.default_rng(8)
        m = 5
        obs = Observation(rng.standard_normal(m) * 3, rng.uniform(0.5, 2.0, m))
        a = rng.standard_normal((m, m))
        cgg = a @ a.T
        mean = rng.standard_normal(m)
        alphas = [
            lm_alpha(mean, obs, cgg, LMConfig(rho=rho, alpha0=0.25, growth=1.5))
            for rho in (0.3, 0.5, 0.7, 0.9)
        ]
        assert all(a1 <= a2 for a1, a2 in zip(alphas, alphas[1:]))

    def test_exhausted_search_raises(self):
        obs = Observation([1.0], [1.0])
        cfg = LMConfig(rho=0.9, alpha0=1.0, growth=2.0, max_doublings=3)
        # huge covariance forces many doublings
        with pytest.raises(NumericalError):
            lm_alpha(np.array([0.0]), obs, np.array([[1e12]]), cfg)


class TestLmStop:
    def test_below_threshold_stops(self):
        assert lm_stop(15.0, LMConfig(rho=0.6, tau=1.67), delta=16.0)

    def test_above_threshold_continues(self):
        assert not lm_stop(40.0, LMConfig(rho=0.6, tau=1.67), delta=16.0)

    def test_tau_validation(self):
        with pytest.raises(ValueError):
            LMConfig(rho=0.5, tau=1.5)  # tau <= 1/rho
        cfg = LMConfig(rho=0.5)
        assert cfg.tau == pytest.approx(2.0 + 1e-6)


class TestEsmda:
    def test_constant_schedule(self):
        assert esmda_alpha(4) == 4.0

    def test_single_step_is_classical_enkf(self):
        assert esmda_alpha(1) == 1.0

    def test_budget_identity(self):
        # power-of-two step counts give the unit budget exactly; the run loop
        # closes the budget on the final step for other counts
        for n in (1, 2, 4, 8):
            assert sum(1.0 / esmda_alpha(n) for _ in range(n)) == 1.0

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            esmda_alpha(0)


class TestScheduleCsv:
    def test_columns_and_rows(self, tmp_path):
        rows = [
            {"n": 0, "alpha_inv": 0.1, "t": 0.0, "phi_mean": 5.0, "phi_var": 2.0,
             "dm1": 3.0, "dm2": 3.1, "dm3": 3.2, "extra": "dropped"},
            {"n": 1, "alpha_inv": None, "t": 0.1, "phi_mean": 4.0, "phi_var": 1.0,
             "dm1": 2.0, "dm2": 2.1, "dm3": 2.2},
        ]
        path = tmp_path / "schedule.csv"
        write_schedule_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "n,alpha_inv,t,phi_mean,phi_var,dm1,dm2,dm3"
        assert len(lines) == 3
