"""End-to-end inversion harness: truths, synthetic data, run loop, repeats.

Two EIT experiments ship with the package: a smooth conductivity recovered
through the Whittle-Matern parameterisation and a three-phase piecewise
constant conductivity recovered through the level-set parameterisation.  A
1D linear-Gaussian toy runs through the same loop for fast validation.  Data
are always generated on a finer mesh than the inversion uses.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cem import (
    CEMSetup,
    adjacent_patterns,
    build_disc_mesh,
    equispaced_electrodes,
    save_measurements_csv,
    save_mesh_json,
)
from .ensemble import (
    Ensemble,
    EvaluationBatch,
    Observation,
    eki_update,
    empirical_covariances,
    ensemble_mean,
    save_ensemble,
)
from .errors import ConfigError, NumericalError
from .fields import DEFAULT_ZETA_R, GridField, GridGeometry, P1Parameterisation, save_grid_field
from .levelset import P2Parameterisation
from .schedules import (
    LMConfig,
    TemperingState,
    compute_misfits,
    dmc_step,
    esmda_alpha,
    lm_alpha,
    lm_stop,
    write_schedule_csv,
)
from .tempering import GaussianMeasure, TemperedFamily, tempered_gaussian


# ---------------------------------------------------------------------------
# Synthetic truths


def truth_exp1(points: np.ndarray) -> np.ndarray:
    """Smooth conductivity: two vertically elongated low inclusions, one high region.

    kappa = exp(s) with s a fixed sum of anisotropic Gaussian bumps on a
    log(0.3) background; infinitely differentiable and strictly positive.
    """
    x, y = points[:, 0], points[:, 1]

    def bump(cx, cy, sx, sy):
        return np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))

    s = (
        math.log(0.3)
        - 1.8 * bump(-0.40, 0.20, 0.12, 0.38)
        - 1.8 * bump(0.40, 0.25, 0.13, 0.35)
        + 1.4 * bump(0.0, -0.45, 0.28, 0.20)
    )
    return np.exp(s)


TRUE_KAPPA_LOW = 0.025
TRUE_KAPPA_BACKGROUND = 0.125
TRUE_KAPPA_HIGH = 1.0


def truth_exp2(points: np.ndarray) -> np.ndarray:
    """Piecewise-constant conductivity with values {0.025, 0.125, 1.0}.

    Two vertically elongated low-value ellipses, one high-value ellipse, the
    background covering the largest area fraction.
    """
    x, y = points[:, 0], points[:, 1]
    kappa = np.full(x.shape, TRUE_KAPPA_BACKGROUND)
    low1 = ((x + 0.40) / 0.20) ** 2 + ((y - 0.20) / 0.45) ** 2 <= 1.0
    low2 = ((x - 0.42) / 0.18) ** 2 + ((y - 0.18) / 0.40) ** 2 <= 1.0
    high = (x / 0.30) ** 2 + ((y + 0.50) / 0.22) ** 2 <= 1.0
    kappa[low1 | low2] = TRUE_KAPPA_LOW
    kappa[high] = TRUE_KAPPA_HIGH
    return kappa


TRUTHS = {"exp1": truth_exp1, "exp2": truth_exp2}


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ControllerConfig:
    kind: str = "dmc"  # dmc | lm | esmda
    # LM inputs
    rho: float = 0.6
    tau: float | None = None
    alpha0: float = 1.0
    growth: float = 2.0
    max_doublings: int = 60
    stop_rule: str = "discrepancy"  # discrepancy | tempering
    # ES-MDA step count
    n_steps: int = 8

    def lm(self) -> LMConfig:
        return LMConfig(self.rho, self.tau, self.alpha0, self.growth, self.max_doublings)


@dataclass
class ExperimentConfig:
    """Fully resolved description of one inversion run (or batch of repeats)."""

    experiment: str = "exp1"  # exp1 | exp2 | toy
    parameterisation: str = "p1"  # p1 | p2
    ensemble_size: int = 200
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    grid_n: int = 100
    data_elements: int = 9216
    inversion_elements: int = 7744
    n_electrodes: int = 16
    coverage: float = 0.5
    contact_impedance: float = 0.01
    current: float = 0.1
    nu: float = 3.0
    sigma: float = 1.5
    nu_f: float = 2.0
    sigma_f: float = 0.5
    zeta_r: float = DEFAULT_ZETA_R
    noise_relative: float = 0.01
    noise_floor: float = 1e-3
    data_seed: int = 2021
    ensemble_seed: int = 1
    repeats: int = 10
    perturb_mode: str = "per_particle"
    max_iterations: int = 200
    jobs: int = 1
    # toy problem inputs (experiment == "toy")
    toy_forward: float = 1.0
    toy_prior_mean: float = 0.0
    toy_prior_var: float = 1.0
    toy_y: float = 2.0
    toy_gamma: float = 1.0

    def __post_init__(self):
        if isinstance(self.controller, dict):
            self.controller = _controller_from_dict(self.controller)
        if self.experiment not in ("exp1", "exp2", "toy"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.parameterisation not in ("p1", "p2"):
            raise ConfigError(f"unknown parameterisation {self.parameterisation!r}")
        if self.controller.kind not in ("dmc", "lm", "esmda"):
            raise ConfigError(f"unknown controller {self.controller.kind!r}")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be >= 2")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.experiment != "toy" and self.data_elements == self.inversion_elements:
            raise ConfigError("data and inversion meshes must differ (inverse-crime guard)")

    def as_dict(self) -> dict:
        return asdict(self)


def _controller_from_dict(d: dict) -> ControllerConfig:
    known = set(ControllerConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown controller keys: {sorted(unknown)}")
    return ControllerConfig(**d)


def config_from_dict(d: dict) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**d)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Dotted key=value overrides onto a resolved config."""
    data = cfg.as_dict()
    for key, value in overrides.items():
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {key!r} does not reference a known section")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r} does not reference a known key")
        node[parts[-1]] = value
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Problems: EIT and the 1D toy


class EITModel:
    """Conductivity parameterisation plus the inversion-mesh forward operator."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.grid = GridGeometry(cfg.grid_n, cfg.grid_n)
        if cfg.parameterisation == "p1":
            self.param = P1Parameterisation(self.grid, nu=cfg.nu, sigma=cfg.sigma, zeta_r=cfg.zeta_r)
        else:
            self.param = P2Parameterisation(self.grid, nu=cfg.nu_f, sigma=cfg.sigma_f, zeta_r=cfg.zeta_r)
        layout = equispaced_electrodes(cfg.n_electrodes, cfg.coverage, cfg.contact_impedance)
        patterns = adjacent_patterns(cfg.n_electrodes, cfg.current)
        self.setup = CEMSetup(build_disc_mesh(cfg.inversion_elements), layout, patterns, self.grid)

    def forward_one(self, u: np.ndarray) -> np.ndarray:
        kappa = self.param.kappa(u)
        return self.setup.measure(self.setup.kappa_on_elements(kappa))


_WORKER_MODEL: EITModel | None = None


def _init_worker(cfg_dict: dict) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = EITModel(config_from_dict(cfg_dict))


def _eval_chunk(coeffs: np.ndarray) -> np.ndarray:
    return np.stack([_WORKER_MODEL.forward_one(u) for u in coeffs])


class ForwardEvaluator:
    """Maps particle batches through the forward model, optionally in processes.

    Results are independent of the job count: each particle evaluation is a
    pure function of its coefficients, and the batch is reassembled in
    particle order.
    """

    def __init__(self, model: EITModel, jobs: int = 1):
        self.model = model
        self.jobs = max(1, jobs)
        self._pool = None
        if self.jobs > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=self.jobs,
                initializer=_init_worker,
                initargs=(model.cfg.as_dict(),),
            )

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        if self._pool is None:
            return _local_eval(self.model, coeffs)
        chunks = np.array_split(coeffs, min(self.jobs * 4, coeffs.shape[0]))
        parts = list(self._pool.map(_eval_chunk, [c for c in chunks if c.size]))
        return np.concatenate(parts, axis=0)

    def evaluate_one(self, u: np.ndarray) -> np.ndarray:
        return self.model.forward_one(u)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _local_eval(model: EITModel, coeffs: np.ndarray) -> np.ndarray:
    return np.stack([model.forward_one(u) for u in coeffs])


def generate_data(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Observation, np.ndarray]:
    """Noisy synthetic measurements on the (finer) data mesh.

    gamma_m = (relative*|V_m|)^2 + (floor*range(V))^2 combines proportional
    noise with a floor that keeps variances positive for near-zero voltages.
    Returns the observation and the clean voltages.
    """
    layout = equispaced_electrodes(cfg.n_electrodes, cfg.coverage, cfg.contact_impedance)
    patterns = adjacent_patterns(cfg.n_electrodes, cfg.current)
    setup = CEMSetup(build_disc_mesh(cfg.data_elements), layout, patterns)
    truth_fn = TRUTHS[cfg.experiment]
    kappa_elems = truth_fn(setup.mesh.centroids())
    clean = setup.measure(kappa_elems)
    spread = clean.max() - clean.min()
    gamma = (cfg.noise_relative * np.abs(clean)) ** 2 + (cfg.noise_floor * spread) ** 2
    y = clean + rng.standard_normal(clean.size) * np.sqrt(gamma)
    return Observation(y, gamma), clean


class EITProblem:
    """Everything run() needs for an EIT experiment: model, data, truth, metrics."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = EITModel(cfg)
        self.obs, self.clean_voltages = generate_data(cfg, np.random.default_rng(cfg.data_seed))
        mesh = self.model.setup.mesh
        self.truth_on_inversion = TRUTHS[cfg.experiment](mesh.centroids())
        self._areas = mesh.element_areas()
        self._truth_norm = math.sqrt(float(self._areas @ self.truth_on_inversion**2))

    @property
    def delta(self) -> float:
        """Statistical noise level sqrt(M)."""
        return math.sqrt(self.obs.m)

    def sample_prior(self, rng: np.random.Generator) -> Ensemble:
        return self.model.param.sample_prior(self.cfg.ensemble_size, rng)

    def clamp(self, coeffs: np.ndarray) -> None:
        self.model.param.clamp(coeffs)

    def estimate(self, e: Ensemble) -> GridField:
        """Parameterisation applied to the ensemble mean, never the mean of transforms."""
        return self.model.param.kappa(ensemble_mean(e))

    def relative_error(self, kappa_estimate: GridField) -> float:
        est_elems = self.model.setup.kappa_on_elements(kappa_estimate)
        diff = est_elems - self.truth_on_inversion
        return math.sqrt(float(self._areas @ diff**2)) / self._truth_norm

    def scalars(self, e: Ensemble) -> dict[str, float]:
        return self.model.param.scalars(ensemble_mean(e))

    def snapshot(self, e: Ensemble, kappa_estimate: GridField) -> dict[str, GridField]:
        """Fields emitted per iteration: the estimate and, for P2, its level-set."""
        out = {"kappa": kappa_estimate}
        if isinstance(self.model.param, P2Parameterisation):
            out["level_set"] = self.model.param.level_set(ensemble_mean(e))
        return out


def data_misfits(obs: Observation, ev: EvaluationBatch, g_mean: np.ndarray) -> tuple[float, float, float]:
    """The three whitened data-misfit diagnostics.

    DM1 uses the mean of the forward evaluations, DM2 the forward evaluation
    of the ensemble mean, DM3 the root mean square of per-particle misfit
    norms (DM3^2 >= DM1^2 by Jensen).
    """
    dm1 = float(np.linalg.norm(obs.whiten(obs.y - ev.mean)))
    dm2 = float(np.linalg.norm(obs.whiten(obs.y - g_mean)))
    dm3 = float(np.sqrt(np.mean(np.sum(obs.whiten(obs.y - ev.values) ** 2, axis=1))))
    return dm1, dm2, dm3


class ToyProblem:
    """1D linear-Gaussian problem run through the identical loop."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.obs = Observation([cfg.toy_y], [cfg.toy_gamma])
        self.family = TemperedFamily(
            GaussianMeasure([cfg.toy_prior_mean], [[cfg.toy_prior_var]]),
            [[cfg.toy_forward]],
            self.obs,
        )
        self.posterior = tempered_gaussian(self.family, 1.0)

    @property
    def delta(self) -> float:
        return math.sqrt(self.obs.m)

    def sample_prior(self, rng: np.random.Generator) -> Ensemble:
        draws = self.cfg.toy_prior_mean + math.sqrt(self.cfg.toy_prior_var) * rng.standard_normal(
            (self.cfg.ensemble_size, 1)
        )
        return Ensemble(draws)

    def clamp(self, coeffs: np.ndarray) -> None:
        pass

    def forward_one(self, u: np.ndarray) -> np.ndarray:
        return np.asarray([self.cfg.toy_forward * float(u[0])])

    def relative_error_mean(self, e: Ensemble) -> float:
        target = float(self.posterior.mean[0])
        return abs(float(ensemble_mean(e)[0]) - target) / max(abs(target), 1e-300)


# ---------------------------------------------------------------------------
# Run loop


@dataclass
class RunResult:
    """Everything recorded over one inversion: schedule, metrics, snapshots."""

    n_star: int
    rows: list[dict]
    snapshots: dict[int, dict[str, GridField]]
    final_ensemble: Ensemble | None = None
    status: str = "completed"

    @property
    def alpha_inv_history(self) -> list[float]:
        return [r["alpha_inv"] for r in self.rows if r.get("alpha_inv") is not None]

    def trace(self, key: str) -> list:
        return [r.get(key) for r in self.rows]

    @property
    def final(self) -> dict:
        return self.rows[-1]


def _controller_loop(problem, evaluator, cfg: ExperimentConfig, ens_rng, pert_rng) -> RunResult:
    ens = problem.sample_prior(ens_rng)
    state = TemperingState()
    lm_cfg = cfg.controller.lm() if cfg.controller.kind == "lm" else None
    is_eit = isinstance(problem, EITProblem)
    rows: list[dict] = []
    snapshots: dict[int, dict[str, GridField]] = {}
    try:
        return _controller_iterations(
            problem, evaluator, cfg, pert_rng, ens, state, lm_cfg, is_eit, rows, snapshots, 0
        )
    except NumericalError as exc:
        exc.partial_rows = rows  # persisted by run() before propagating
        raise


def _controller_iterations(problem, evaluator, cfg, pert_rng, ens, state, lm_cfg,
                           is_eit, rows, snapshots, n) -> RunResult:
    cc = cfg.controller
    obs = problem.obs
    m = obs.m
    while True:
        values = evaluator.evaluate(ens.coeffs) if is_eit else _toy_eval(problem, ens)
        ev = EvaluationBatch(values)
        stats = compute_misfits(ev, obs)
        mean_u = ensemble_mean(ens)
        g_mean = evaluator.evaluate_one(mean_u) if is_eit else problem.forward_one(mean_u)
        dm1, dm2, dm3 = data_misfits(obs, ev, g_mean)

        row = {
            "n": n,
            "alpha_inv": None,
            "t": state.t,
            "phi_mean": stats.mean,
            "phi_var": stats.variance,
            "dm1": dm1,
            "dm2": dm2,
            "dm3": dm3,
        }
        if is_eit:
            estimate = problem.estimate(ens)
            row["error"] = problem.relative_error(estimate)
            row.update({f"mean_{k}": v for k, v in problem.scalars(ens).items()})
            snapshots[n] = problem.snapshot(ens, estimate)
        else:
            row["error"] = problem.relative_error_mean(ens)
        rows.append(row)

        # Decide whether to stop, otherwise pick alpha for the next update.
        if cc.kind == "dmc":
            if state.finished:
                break
            alpha_inv, _ = dmc_step(stats, m, state)
        elif cc.kind == "lm":
            if cc.stop_rule == "discrepancy":
                if lm_stop(dm1, lm_cfg, problem.delta):
                    break
            elif state.finished:
                break
            _, cgg = empirical_covariances(ens, ev)
            alpha_inv = 1.0 / lm_alpha(ev.mean, obs, cgg, lm_cfg)
            if cc.stop_rule == "tempering":
                remaining = 1.0 - state.t
                alpha_inv = min(alpha_inv, remaining)
                state.advance(alpha_inv, alpha_inv == remaining)
            else:
                state.advance(alpha_inv, False)
        else:  # esmda: exactly n_steps updates, last one closes the unit budget
            if n >= cc.n_steps:
                break
            is_last = n + 1 == cc.n_steps
            alpha_inv = 1.0 - state.t if is_last else 1.0 / esmda_alpha(cc.n_steps)
            state.advance(alpha_inv, is_last)

        row["alpha_inv"] = alpha_inv
        ens = eki_update(ens, ev, obs, 1.0 / alpha_inv, pert_rng, cfg.perturb_mode)
        problem.clamp(ens.coeffs)
        n += 1
        if n > cfg.max_iterations:
            raise NumericalError(f"run exceeded max_iterations={cfg.max_iterations}")

    n_star = n
    keep = {0, (n_star + 1) // 2, n_star}
    snapshots = {k: v for k, v in snapshots.items() if k in keep}
    return RunResult(n_star=n_star, rows=rows, snapshots=snapshots, final_ensemble=ens)


def _toy_eval(problem: ToyProblem, ens: Ensemble) -> np.ndarray:
    return np.stack([problem.forward_one(u) for u in ens.coeffs])


def run(cfg: ExperimentConfig, output_dir: str | None = None,
        evaluator: ForwardEvaluator | None = None,
        problem: EITProblem | ToyProblem | None = None) -> RunResult:
    """One inversion with the configured controller; optionally writes artifacts.

    A forward-solver failure persists the partial log before propagating.
    """
    if problem is None:
        problem = ToyProblem(cfg) if cfg.experiment == "toy" else EITProblem(cfg)
    owns_evaluator = evaluator is None and isinstance(problem, EITProblem)
    if owns_evaluator:
        evaluator = ForwardEvaluator(problem.model, cfg.jobs)
    ens_rng = np.random.default_rng(cfg.ensemble_seed)
    pert_rng = np.random.default_rng(cfg.ensemble_seed + 1_000_003)
    try:
        result = _controller_loop(problem, evaluator, cfg, ens_rng, pert_rng)
    except NumericalError as exc:
        if output_dir is not None:
            os.makedirs(output_dir, exist_ok=True)
            write_schedule_csv(os.path.join(output_dir, "schedule_partial.csv"),
                               getattr(exc, "partial_rows", []))
            with open(os.path.join(output_dir, "summary.json"), "w") as fh:
                json.dump({"status": "aborted", "reason": str(exc)}, fh, indent=2)
        raise
    finally:
        if owns_evaluator:
            evaluator.close()
    if output_dir is not None:
        write_run_outputs(output_dir, cfg, result, problem)
    return result


def write_run_outputs(output_dir: str, cfg: ExperimentConfig, result: RunResult, problem) -> None:
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg.as_dict(), fh, indent=2, sort_keys=True)
    write_schedule_csv(os.path.join(output_dir, "schedule.csv"), result.rows)
    metric_keys = [k for k in result.rows[0] if k not in ("alpha_inv", "t")]
    with open(os.path.join(output_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=metric_keys, extrasaction="ignore")
        writer.writeheader()
        for row in result.rows:
            writer.writerow({k: row.get(k, "") for k in metric_keys})
    summary = {
        "n_star": result.n_star,
        "status": result.status,
        "final": {k: v for k, v in result.final.items() if not isinstance(v, dict)},
        "sum_alpha_inv": float(sum(result.alpha_inv_history)) if result.alpha_inv_history else 0.0,
    }
    with open(os.path.join(output_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    for n, fields_ in result.snapshots.items():
        for name, f in fields_.items():
            save_grid_field(os.path.join(output_dir, f"{name}_n{n:03d}.grd"), f)
    if result.final_ensemble is not None:
        save_ensemble(os.path.join(output_dir, "final_ensemble.eki"), result.final_ensemble)
    if isinstance(problem, EITProblem):
        save_mesh_json(os.path.join(output_dir, "inversion_mesh.json"), problem.model.setup.mesh)
        save_measurements_csv(os.path.join(output_dir, "observations.csv"),
                              problem.obs.y, problem.cfg.n_electrodes)


@dataclass
class RepeatSummary:
    """Mean and standard deviation of the headline numbers over seeds."""

    n_runs: int
    n_star_mean: float
    n_star_sd: float
    error_mean: float
    error_sd: float
    dm1_mean: float
    dm1_sd: float
    dm2_mean: float
    dm2_sd: float
    dm3_mean: float
    dm3_sd: float
    results: list[RunResult]

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "n_runs", "n_star_mean", "n_star_sd", "error_mean", "error_sd",
            "dm1_mean", "dm1_sd", "dm2_mean", "dm2_sd", "dm3_mean", "dm3_sd")}
        return d


def repeat(cfg: ExperimentConfig, output_dir: str | None = None,
           seeds: list[int] | None = None) -> RepeatSummary:
    """Repeated runs over fresh initial ensembles with the data held fixed."""
    if seeds is None:
        seeds = [cfg.ensemble_seed + i for i in range(cfg.repeats)]
    problem = ToyProblem(cfg) if cfg.experiment == "toy" else EITProblem(cfg)
    evaluator = None
    if isinstance(problem, EITProblem):
        evaluator = ForwardEvaluator(problem.model, cfg.jobs)
    results = []
    try:
        for i, seed in enumerate(seeds):
            run_cfg = replace(cfg, ensemble_seed=seed)
            sub_dir = os.path.join(output_dir, f"run_{i:02d}") if output_dir else None
            result = run(run_cfg, sub_dir, evaluator=evaluator, problem=problem)
            result.final_ensemble = None  # keep batch memory bounded at paper scale
            results.append(result)
    finally:
        if evaluator is not None:
            evaluator.close()

    def stat(values):
        arr = np.asarray(values, dtype=float)
        return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0

    n_mean, n_sd = stat([r.n_star for r in results])
    e_mean, e_sd = stat([r.final["error"] for r in results])
    d1_mean, d1_sd = stat([r.final["dm1"] for r in results])
    d2_mean, d2_sd = stat([r.final["dm2"] for r in results])
    d3_mean, d3_sd = stat([r.final["dm3"] for r in results])
    summary = RepeatSummary(len(results), n_mean, n_sd, e_mean, e_sd,
                            d1_mean, d1_sd, d2_mean, d2_sd, d3_mean, d3_sd, results)
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "repeat_summary.json"), "w") as fh:
            json.dump(summary.as_dict(), fh, indent=2)
    return summary


def compare(cfg: ExperimentConfig, lm_rho: float, output_dir: str | None = None,
            seeds: list[int] | None = None) -> dict:
    """DMC and LM on identical data and identical initial ensembles, side by side."""
    if seeds is None:
        seeds = [cfg.ensemble_seed + i for i in range(cfg.repeats)]
    dmc_cfg = replace(cfg, controller=ControllerConfig(kind="dmc"))
    lm_cfg = replace(cfg, controller=ControllerConfig(kind="lm", rho=lm_rho))
    dmc_summary = repeat(dmc_cfg, None, seeds)
    lm_summary = repeat(lm_cfg, None, seeds)
    payload = {
        "seeds": seeds,
        "lm_rho": lm_rho,
        "dmc": dmc_summary.as_dict(),
        "lm": lm_summary.as_dict(),
        "n_star_ratio_lm_over_dmc": (
            lm_summary.n_star_mean / dmc_summary.n_star_mean if dmc_summary.n_star_mean else float("nan")
        ),
    }
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, "compare.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
    return payload
