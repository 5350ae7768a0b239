"""Self-contained validation suites with JSON reports.

Each suite returns a ValidationReport whose checks carry both sides of every
identity, so a report is reviewable without rerunning anything.  These back
the validate-* CLI subcommands and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .cem import CEMSetup, adjacent_patterns, build_disc_mesh, equispaced_electrodes
from .ensemble import Observation
from .fields import (
    GridField,
    GridGeometry,
    P1Parameterisation,
    WMHyper,
    WMOperator,
    matern_acf,
    transform_constant,
)
from .tempering import (
    GaussianMeasure,
    TemperedFamily,
    Toy1D,
    ValidationCheck,
    ValidationReport,
    jeffreys_divergence,
    tempered_gaussian,
    verify_corollary_derivative,
    verify_corollary_derivative_toy,
    verify_divergence_identity,
    verify_divergence_identity_toy,
    verify_dmc_bound,
    verify_normalizer_derivative,
)

ACF_LAGS = ((2, 0), (4, 0), (0, 2), (0, 4), (3, 3))


def validate_fields(grid_n: int = 50, n_samples: int = 2000, seed: int = 7,
                    nu: float = 3.0, sigma: float = 1.5, length: float = 0.375) -> ValidationReport:
    """Whittle-Matern sampling checks: exactness at zero noise, ACF shape, anisotropy.

    The Monte-Carlo autocorrelation at interior lags is compared with the
    closed-form Matern function through Fisher's z transform, whose sampling
    error 1/sqrt(N-3) gives the "3 standard errors" budget.  The variance
    inflation of the literal printed constant is reported, not asserted.
    """
    report = ValidationReport()
    grid = GridGeometry(grid_n, grid_n)
    hyper = WMHyper(nu=nu, sigma=sigma, l1=length, l2=length)
    op = WMOperator(hyper, grid)

    # zero noise -> kappa identically lam
    param = P1Parameterisation(grid, nu=nu, sigma=sigma)
    u = np.concatenate([[0.37, length, length], np.zeros(grid.ncells)])
    kappa = param.kappa(u)
    report.add(ValidationCheck("zero_noise_kappa_equals_lam",
                               float(np.abs(kappa.values - 0.37).max()), 0.0,
                               tol=0.0, relative=False))

    # Monte-Carlo ACF against the closed form at interior lags
    rng = np.random.default_rng(seed)
    scale = transform_constant(hyper, "matched") / np.sqrt(grid.h1 * grid.h2)
    center = grid_n // 2
    idx = [(center, center)] + [(center + a, center + b) for a, b in ACF_LAGS]
    draws = np.empty((n_samples, len(idx)))
    variance_accum = 0.0
    for i in range(n_samples):
        psi = op.apply_inverse_power(rng.standard_normal((grid_n, grid_n)) * scale, hyper.exponent)
        draws[i] = [psi[a, b] for a, b in idx]
        variance_accum += psi[center, center] ** 2
    se = 1.0 / np.sqrt(n_samples - 3)
    for k, (a, b) in enumerate(ACF_LAGS):
        emp = float(np.corrcoef(draws[:, 0], draws[:, k + 1])[0, 1])
        theo = matern_acf((a * grid.h1, b * grid.h2), hyper) / hyper.sigma**2
        report.add(ValidationCheck(
            f"acf_lag_{a}_{b}_within_3se",
            float(abs(np.arctanh(emp) - np.arctanh(theo))), 3.0 * se,
            tol=0.0, relative=False, kind="le"))

    # anisotropy: larger vertical lengthscale raises vertical correlation
    vertical_corrs = []
    for l2 in (0.2, 0.5):
        h2 = WMHyper(nu=nu, sigma=sigma, l1=length, l2=l2)
        op2 = WMOperator(h2, grid)
        s2 = transform_constant(h2, "matched") / np.sqrt(grid.h1 * grid.h2)
        rng2 = np.random.default_rng(seed + 1)
        a_vals = np.empty(500)
        b_vals = np.empty(500)
        for i in range(500):
            psi = op2.apply_inverse_power(rng2.standard_normal((grid_n, grid_n)) * s2, h2.exponent)
            a_vals[i] = psi[center, center]
            b_vals[i] = psi[center, center + grid_n // 8]
        vertical_corrs.append(float(np.corrcoef(a_vals, b_vals)[0, 1]))
    report.add(ValidationCheck("anisotropy_vertical_corr_monotone",
                               vertical_corrs[0], vertical_corrs[1],
                               tol=0.0, relative=False, kind="le"))

    mc_variance = variance_accum / n_samples
    printed_ratio = (transform_constant(hyper, "printed") / transform_constant(hyper, "matched")) ** 2
    report.extra = {
        "mc_zero_lag_variance": mc_variance,
        "target_sigma_sq": hyper.sigma**2,
        "printed_constant_variance_ratio": printed_ratio,
        "n_samples": n_samples,
    }
    return report


def validate_cem(elements: int = 1936) -> ValidationReport:
    """CEM physics: reciprocity, Kirchhoff balance, symmetry, convergence, scaling."""
    report = ValidationReport()
    layout = equispaced_electrodes()
    patterns = adjacent_patterns()
    mesh = build_disc_mesh(elements)
    setup = CEMSetup(mesh, layout, patterns)

    report.add(ValidationCheck("disc_area", float(mesh.element_areas().sum()), float(np.pi),
                               tol=0.01))

    kappa = np.ones(mesh.n_elements)
    solutions = setup.assemble(kappa).solve(patterns)
    voltages = np.array([s.voltages for s in solutions])

    grounding = max(abs(float(s.voltages.sum())) for s in solutions)
    report.add(ValidationCheck("grounding_sum_V", grounding, 0.0, tol=1e-10, relative=False))

    balance = max(abs(float(setup.electrode_currents(s).sum())) for s in solutions)
    report.add(ValidationCheck("kirchhoff_current_balance", balance, 0.0, tol=1e-10,
                               relative=False))

    injected = max(
        float(np.abs(setup.electrode_currents(s) - patterns.patterns[p]).max())
        for p, s in enumerate(solutions)
    )
    report.add(ValidationCheck("electrode_currents_match_injection", injected, 0.0,
                               tol=1e-9, relative=False))

    r_matrix = voltages @ patterns.patterns.T
    asym = float(np.abs(r_matrix - r_matrix.T).max() / np.abs(r_matrix).max())
    report.add(ValidationCheck("reciprocity_asymmetry", asym, 0.0, tol=1e-8, relative=False))

    fine_mesh = build_disc_mesh(4 * mesh.n_elements)
    fine = CEMSetup(fine_mesh, layout, patterns).measure(np.ones(fine_mesh.n_elements))
    coarse = np.concatenate([s.voltages for s in solutions])
    conv = float(np.abs(coarse - fine).max() / np.abs(fine).max())
    report.add(ValidationCheck("refinement_self_convergence", conv, 0.02,
                               tol=0.0, relative=False, kind="le"))

    doubled = setup.measure(2.0 * kappa)
    half_layout = equispaced_electrodes(contact_impedance=layout.contact_impedances[0] / 2.0)
    joint = CEMSetup(mesh, half_layout, patterns).measure(2.0 * kappa)
    report.add(ValidationCheck("kappa_z_joint_scaling",
                               float(np.abs(joint - coarse / 2.0).max()), 0.0,
                               tol=1e-12, relative=False))

    # raising kappa uniformly lowers voltage magnitudes
    report.add(ValidationCheck("monotone_sensitivity",
                               float(np.abs(doubled).max()), float(np.abs(coarse).max()),
                               tol=0.0, relative=False, kind="le"))
    report.extra = {"elements": mesh.n_elements, "nodes": mesh.n_nodes}
    return report


def validate_tempering() -> ValidationReport:
    """Tempering identities on linear-Gaussian and nonlinear 1D toys."""
    report = ValidationReport()
    fam = TemperedFamily(GaussianMeasure([0.0], [[1.0]]), [[1.0]], Observation([2.0], [1.0]))

    post = tempered_gaussian(fam, 1.0)
    report.add(ValidationCheck("conjugate_posterior_mean", float(post.mean[0]), 1.0, tol=1e-12))
    report.add(ValidationCheck("conjugate_posterior_var", float(post.cov[0, 0]), 0.5, tol=1e-12))
    report.add(ValidationCheck(
        "jeffreys_unit_mean_shift",
        jeffreys_divergence(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([1.0], [[1.0]])),
        1.0, tol=1e-12))

    report.add(verify_divergence_identity(fam, 0.3, 0.5, tol=1e-8))
    report.add(verify_corollary_derivative(fam, 0.4, dt=1e-4, tol=1e-6))

    toy = Toy1D(lambda u: u**3, 0.0, 1.0, 1.5, 0.5)
    report.add(verify_divergence_identity_toy(toy, 0.2, 0.35, tol=1e-6))
    report.add(verify_corollary_derivative_toy(toy, 0.3, dt=1e-4, tol=1e-6))
    report.add(verify_normalizer_derivative(toy, 0.3, dt=1e-4, tol=1e-6))

    far_fam = TemperedFamily(GaussianMeasure([0.0], [[1.0]]), [[1.0]], Observation([30.0], [1.0]))
    bound = verify_dmc_bound(far_fam)
    for check in bound.checks:
        report.add(check)
    report.add(ValidationCheck("dmc_bound_slack_epsilon", bound.extra["epsilon"], 0.5,
                               tol=0.0, relative=False, kind="le"))
    report.extra = {"dmc_bound": {k: bound.extra[k] for k in ("theta", "epsilon", "n_steps")}}
    return report
