"""
Named experiments: each one wires module operations into a reproducible run that writes its
csv outputs, checks the invariants of the modules it touches, and leaves a manifest behind
"""

import math
import time
import logging
import tempfile
from pathlib import Path
from datetime import datetime, timezone
from dataclasses import dataclass, field, asdict
from typing import (
    Any, Callable, Dict, Iterator, List, Literal, Mapping, Optional, Sequence, Tuple, TypeVar
    )

import numpy as np

from ._result import Result, Ok, Err
from ._types import (
    PhysicalParams, Grid1D, DensityMatrix, WignerFunction, ThermalEnvironment1D, QbmError,
    ConfigInvalid, InvalidParams, CFLViolation, RealArray
    )
from ._core import (
    gaussian_state, superposition_state, squeezed_state, position_variance,
    displaced_packet_wigner, thermal_wigner
    )
from ._kinematics import (
    Ensemble, run_collision_ensemble, apply_collision_decoherence, fit_decay_rate,
    mean_square_momentum
    )
from ._wigner import (
    wigner_transform, wigner_moments, WignerMoments, MomentSeries, write_wigner_csv,
    BoltzmannOperator, boltzmann_rate, boltzmann_step, fokker_planck_rhs, fokker_planck_step,
    BOLTZMANN_MAX_GAMMA_DT
    )
from ._evolvers import (
    evolve_free_decoherence, free_decoherence_offdiagonal_exact, evolve_caldeira_leggett,
    evolve_lindblad, build_qbm_lindblad, qbm_hamiltonian, lindblad_rhs, caldeira_leggett_rhs,
    DiagnosticsSeries, write_density_csv, Normalization
    )
from ._kernel import (
    GasParams, kernel_table, kernel_direct, kernel_brute_force, kernel_low_density,
    localization_rate_fit, number_density, number_density_quadrature, write_kernel_summary
    )
from ._config import ExperimentConfig, Value, load_config
from ._output import write_csv, write_json, PathLike
from .testing import test, assert_close

logger = logging.getLogger(__name__)

Bound = Literal["max", "min"]


class DuplicateExperiment(QbmError):
    """
    Raised when two experiments register under one name
    """
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Check:
    """
    One checked invariant: value against tolerance, as an upper or lower bound
    """
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    bound: Bound = "max"


@dataclass(slots=True)
class RunContext:
    """
    What an experiment gets to work with: its config, and the ledgers of checks and outputs
    """
    config: ExperimentConfig
    checks: List[Check] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)

    def output(self, name: str) -> Path:
        """
        Path of an output file in the run directory, recorded for the manifest
        """
        if name not in self.outputs:
            self.outputs.append(name)
        return self.config.output_dir / name

    def check(self, name: str, value: float, tolerance: float, detail: str = "",
              bound: Bound = "max") -> bool:
        """
        Records value <= tolerance (or >= for bound="min"); nan never passes
        """
        if any(i.name == name for i in self.checks):
            raise ValueError(f"check {name!r} recorded twice")

        passed = value <= tolerance if bound == "max" else value >= tolerance
        passed = passed and not math.isnan(value)

        self.checks.append(Check(name, passed, float(value), float(tolerance), detail, bound))
        logger.log(
            logging.INFO if passed else logging.WARNING,
            "%s %s: %.6g (%s %.3g) %s",
            "pass" if passed else "FAIL",
            name,
            value,
            "<=" if bound == "max" else ">=",
            tolerance,
            detail,
            )
        return passed


ExperimentFunc = Callable[[RunContext], Result[None, QbmError]]
X = TypeVar("X", bound=ExperimentFunc)


@dataclass(frozen=True, slots=True)
class Experiment:
    """
    A registered experiment with the default config layer it runs on
    """
    name: str
    func: ExperimentFunc
    defaults: Mapping[str, Mapping[str, Value]]

    @property
    def summary(self) -> str:
        """
        First line of the experiment's docstring
        """
        return (self.func.__doc__ or "").strip().split("\n", 1)[0]


_experiments: Dict[str, Experiment] = {}


def experiments() -> Iterator[Experiment]:
    """
    Returns an iterator of every registered experiment, in registration order
    """
    return iter(_experiments.values())


def register(*, name: str, defaults: Mapping[str, Mapping[str, Value]]) -> Callable[[X], X]:
    """
    Register an experiment under a cli name with its default config layer
    """
    def deco(f: X, /) -> X:
        if name in _experiments:
            raise DuplicateExperiment(f"experiment {name!r} registered twice")
        _experiments[name] = Experiment(name, f, defaults)
        return f

    return deco


def get_experiment(name: str) -> Result[Experiment, ConfigInvalid]:
    """
    Looks up a registered experiment
    """
    if name not in _experiments:
        known = ", ".join(_experiments)
        return Err(ConfigInvalid(f"unknown experiment {name!r}, expected one of {known}"))
    return Ok(_experiments[name])


def configure(
    name: str,
    path: Optional[PathLike] = None,
    overrides: Sequence[str] = (),
    output_dir: PathLike = ".",
    ) -> Result[ExperimentConfig, ConfigInvalid]:
    """
    Resolves the config of a named experiment on top of its default layer
    """
    if Err.is_instance(exp := get_experiment(name)):
        return exp
    return load_config(name, Ok.unwrap(exp).defaults, path, overrides, output_dir)


@dataclass(frozen=True, slots=True)
class RunManifest:
    """
    Single run record: config echo, tool version, timing, checked invariants and outputs
    """
    experiment: str
    tool_version: str
    started: str
    wall_clock_s: float
    seed: int
    config: Dict[str, Dict[str, Value]]
    sources: List[str]
    checks: List[Check]
    outputs: List[str]

    @property
    def passed(self) -> bool:
        """
        True if every check passed
        """
        return all(i.passed for i in self.checks)

    @property
    def failed(self) -> List[Check]:
        """
        Checks that did not pass
        """
        return [i for i in self.checks if not i.passed]

    def to_json(self) -> Dict[str, Any]:
        """
        Plain dict for json emission
        """
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def write(self, path: PathLike) -> None:
        """
        Writes the manifest atomically
        """
        write_json(path, self.to_json())


def run(config: ExperimentConfig, tool_version: str = "") -> Result[RunManifest, QbmError]:
    """
    Runs the experiment named by config and writes its outputs plus manifest.json into
    config.output_dir

    Errors come back with the experiment name prepended. A manifest is returned even if
    checks failed, inspect RunManifest.passed.
    """
    if Err.is_instance(exp := get_experiment(config.experiment)):
        return exp
    experiment = Ok.unwrap(exp)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(config)

    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    start = time.monotonic()
    logger.info("running %s into %s", experiment.name, config.output_dir)

    if Err.is_instance(res := experiment.func(ctx)):
        err = Err.unwrap(res)
        return Err(type(err)(f"{experiment.name}: {err}"))

    manifest = RunManifest(
        experiment.name,
        tool_version,
        started,
        time.monotonic() - start,
        config.seed,
        config.echo(),
        list(config.sources),
        list(ctx.checks),
        ctx.outputs + ["manifest.json"],
        )
    manifest.write(config.output_dir / "manifest.json")

    logger.info(
        "%s finished in %.1fs, %d/%d checks passed",
        experiment.name,
        manifest.wall_clock_s,
        len(manifest.checks) - len(manifest.failed),
        len(manifest.checks),
        )
    return Ok(manifest)


def _relative(value: float, reference: float) -> float:
    return abs(value - reference) / abs(reference)


def _index_of(grid: Grid1D, x: float) -> int:
    return int(np.argmin(np.abs(grid.points - x)))


def _grid(half_width: float, n: int, what: str) -> Result[Grid1D, ConfigInvalid]:
    return Err.map(
        Grid1D.create(-half_width, half_width, n), lambda e: ConfigInvalid(f"{what}: {e}")
        )


def _sample_every(t: float, stride: float) -> Callable[[float], bool]:
    """
    Predicate true once per crossing of a multiple of stride
    """
    last = [-math.inf]

    def due(now: float) -> bool:
        if now >= last[0] + stride * (1 - 1e-9) or math.isclose(now, t):
            last[0] = now
            return True
        return False

    return due


@register(
    name="decoherence-rate",
    defaults={
        "physics": {
            "M": 20.0,
            "Gamma": 2.5,
            },
        "decoherence-rate": {
            "separation": 4.0,
            "width": 0.5,
            "t": 1.0,
            "dt": 0.01,
            "sample_every": 0.05,
            "spread_width": 1.0,
            "spread_t": 2.0,
            "snapshot_stride": 4,
            },
        },
    )
def decoherence_rate(ctx: RunContext) -> Result[None, QbmError]:
    """
    Coherence decay of a two Gaussian superposition under free decoherence
    """
    cfg = ctx.config
    params, grid = cfg.params, cfg.grid
    d, width = cfg.get_float("separation"), cfg.get_float("width")
    t, dt = cfg.get_float("t"), cfg.get_float("dt")
    D, M, hbar = params.D, params.M, params.hbar

    rho0 = superposition_state(grid, [-d / 2, d / 2], width, hbar)
    i, j = _index_of(grid, d / 2), _index_of(grid, -d / 2)
    x = grid.points
    X, xi = (x[i] + x[j]) / 2, x[i] - x[j]

    diagnostics = DiagnosticsSeries(d / 2)
    sample = diagnostics.every(cfg.get_float("sample_every"))
    coherence: List[complex] = []

    def observe(now: float, rho: DensityMatrix) -> None:
        recorded = len(diagnostics.t)
        sample(now, rho)
        if len(diagnostics.t) > recorded:
            coherence.append(complex(rho.rho[i, j]))

    observe(0.0, rho0)
    if Err.is_instance(out := evolve_free_decoherence(
            rho0, D, t, dt, M=M, hbar=hbar, observer=observe)):
        return out
    final = Ok.unwrap(out)

    exact: List[complex] = []
    for now in diagnostics.t:
        value = free_decoherence_offdiagonal_exact(
            X, xi, now, separation_d=d, width=width, D=D, M=M, hbar=hbar
            )
        if Err.is_instance(value):
            return value
        exact.append(Ok.unwrap(value))

    times = np.array(diagnostics.t)
    magnitude = np.abs(np.array(coherence))
    if Err.is_instance(fit := fit_decay_rate(times, magnitude, np.zeros_like(times))):
        return fit
    rate = Ok.unwrap(fit)
    logger.info("coherence decay rate %.6g, D d^2 = %.6g", rate, D * xi**2)

    ctx.check(
        "decay_rate_vs_D_d2",
        _relative(rate, D * xi**2),
        0.05,
        f"fitted {rate:.6g}, D d^2 = {D * xi**2:.6g}",
        )
    oracle_gap = max(abs(a - b) for a, b in zip(coherence, exact)) / abs(exact[0])
    ctx.check("coherence_vs_characteristics_solution", oracle_gap, 1e-4,
              "sup over sampled times, relative to the initial coherence")
    ctx.check("trace_drift", max(abs(v - 1) for v in diagnostics.trace), 1e-10)
    ctx.check("hermiticity_error", diagnostics.max_hermiticity_error, 1e-10)
    ctx.check("purity_largest_step_change", float(np.max(np.diff(diagnostics.purity))), 0.0,
              "purity falls between every pair of samples")

    # D = 0 free spreading against the analytic variance
    sigma, t_spread = cfg.get_float("spread_width"), cfg.get_float("spread_t")
    if Err.is_instance(spread := evolve_free_decoherence(
            gaussian_state(grid, width=sigma, hbar=hbar), 0.0, t_spread, dt, M=M, hbar=hbar)):
        return spread
    variance = position_variance(Ok.unwrap(spread))
    expected = sigma**2 + (hbar * t_spread / (2 * M * sigma))**2
    ctx.check("free_spreading_variance", abs(variance - expected), 1e-6,
              f"variance {variance:.12g}, analytic {expected:.12g}")

    # Strang splitting is second order: halving dt quarters the change
    finals: List[RealArray] = []
    for step in (4 * dt, 2 * dt, dt):
        if Err.is_instance(res := evolve_free_decoherence(rho0, D, t, step, M=M, hbar=hbar)):
            return res
        finals.append(Ok.unwrap(res).rho)
    ratio = float(np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2])))
    ctx.check("split_step_richardson_ratio", abs(ratio - 4), 0.5, f"ratio {ratio:.4g}")

    write_csv(
        ctx.output("coherence.csv"),
        ["t", "abs_rho", "abs_exact", "re_rho", "im_rho"],
        ((now, abs(c), abs(e), c.real, c.imag)
         for now, c, e in zip(diagnostics.t, coherence, exact)),
        )
    diagnostics.write_csv(ctx.output("diagnostics.csv"))
    write_density_csv(ctx.output("rho_final.csv"), final, cfg.get_int("snapshot_stride"))
    return Ok(None)


def _momentum_grids(cfg: ExperimentConfig) -> Result[Tuple[Grid1D, Grid1D], ConfigInvalid]:
    if Err.is_instance(q := _grid(cfg.get_float("q_half_width"), cfg.get_int("n_q"), "q grid")):
        return q
    if Err.is_instance(p := _grid(cfg.get_float("p_half_width"), cfg.get_int("n_p"), "p grid")):
        return p
    return Ok((Ok.unwrap(q), Ok.unwrap(p)))


def _boltzmann_operator(cfg: ExperimentConfig) -> Result[BoltzmannOperator, QbmError]:
    gdt = cfg.params.Gamma * cfg.get_float("dt_boltzmann")
    if gdt >= BOLTZMANN_MAX_GAMMA_DT:
        return Err(CFLViolation(f"Gamma dt_boltzmann = {gdt:.3g} must stay below "
                                f"{BOLTZMANN_MAX_GAMMA_DT}"))
    return BoltzmannOperator.create(
        cfg.params,
        cfg.get_int("n_nodes"),
        cfg.get_str("interpolation"),  # type: ignore[arg-type]
        )


def _run_boltzmann(w: WignerFunction, op: BoltzmannOperator, t: float, dt: float,
                   stride: float) -> Result[MomentSeries, QbmError]:
    n_steps = max(1, math.ceil(t / dt - 1e-9))
    h = t / n_steps
    due = _sample_every(t, stride)

    times: List[float] = [0.0]
    moments: List[WignerMoments] = [wigner_moments(w)]
    due(0.0)
    for k in range(n_steps):
        if Err.is_instance(step := boltzmann_step(w, op, h)):
            return step
        w = Ok.unwrap(step)
        if due(now := (k + 1) * h):
            times.append(now)
            moments.append(wigner_moments(w))

    return Ok(MomentSeries.from_moments(times, moments))


_PHASE_SPACE: Dict[str, Value] = {
    "q_half_width": 4.0,
    "n_q": 8,
    "p_half_width": 12.0,
    "n_p": 128,
    "width": 1.0,
    "dt_boltzmann": 0.005,
    "n_nodes": 32,
    "interpolation": "spectral",
    "sample_every": 0.5,
    }


@register(
    name="thermalization",
    defaults={
        "physics": {
            "M": 1.0,
            "m": 0.01,
            "T": 1.0,
            "Gamma": 10.0,
            },
        "thermalization": {
            **_PHASE_SPACE,
            "P0": 3.0,
            "dt_fokker_planck": 0.05,
            "relaxation_times": 5.0,
            "t_boltzmann": 5.0,
            },
        },
    )
def thermalization(ctx: RunContext) -> Result[None, QbmError]:
    """
    Relaxation of a displaced momentum packet under the Fokker-Planck and Boltzmann evolvers
    """
    cfg = ctx.config
    params = cfg.params
    if Err.is_instance(grids := _momentum_grids(cfg)):
        return grids
    q_grid, p_grid = Ok.unwrap(grids)
    if params.gamma <= 0:
        return Err(ConfigInvalid("thermalization needs Gamma > 0"))

    if Err.is_instance(op := _boltzmann_operator(cfg)):
        return op

    w0 = displaced_packet_wigner(q_grid, p_grid, cfg.get_float("P0"), cfg.get_float("width"),
                                 params.hbar)
    mkt = params.M * params.kT
    stride = cfg.get_float("sample_every")

    # Fokker-Planck up to a multiple of the momentum relaxation time 1/gamma
    t_fp = cfg.get_float("relaxation_times") / params.gamma
    n_steps = max(1, math.ceil(t_fp / cfg.get_float("dt_fokker_planck") - 1e-9))
    h = t_fp / n_steps
    due = _sample_every(t_fp, stride)
    due(0.0)

    w = w0
    times: List[float] = [0.0]
    moments: List[WignerMoments] = [wigner_moments(w)]
    for k in range(n_steps):
        if Err.is_instance(step := fokker_planck_step(w, params, h)):
            return step
        w = Ok.unwrap(step)
        if due(now := (k + 1) * h):
            times.append(now)
            moments.append(wigner_moments(w))
    fp = MomentSeries.from_moments(times, moments)

    if Err.is_instance(fit := fit_decay_rate(fp.t, fp.mean_P, np.zeros_like(fp.t))):
        return fit
    fp_rate = Ok.unwrap(fit)
    logger.info("fokker-planck <P> rate %.6g, 2 gamma = %.6g", fp_rate, 2 * params.gamma)

    final = moments[-1]
    p2 = final.var_P + final.mean_P**2
    ctx.check("fokker_planck_rate_vs_2gamma", _relative(fp_rate, 2 * params.gamma), 0.01,
              f"fitted {fp_rate:.6g}")
    ctx.check("terminal_P2_vs_MkT", _relative(p2, mkt), 0.01,
              f"<P^2> = {p2:.6g} at t = {t_fp:.4g}, M kT = {mkt:.6g}")
    ctx.check("fokker_planck_norm_drift", abs(final.norm - w0.norm), 1e-8)

    # stationarity residual of Maxwell-Boltzmann at n_p and 2 n_p points
    residuals: List[float] = []
    for n in (p_grid.n, 2 * p_grid.n):
        fine = Grid1D(p_grid.x_min, p_grid.x_max, n)
        residuals.append(
            float(np.max(np.abs(fokker_planck_rhs(thermal_wigner(q_grid, fine, params), params))))
            )
    ratio = residuals[0] / residuals[1]
    ctx.check("stationary_residual_refinement_ratio", abs(ratio - 4), 0.5,
              f"residuals {residuals[0]:.4g} -> {residuals[1]:.4g}")

    # Boltzmann collision operator from the same packet, over the Fokker-Planck horizon; the
    # <P> rate is fitted on the leading t_boltzmann only
    t_b = cfg.get_float("t_boltzmann")
    boltzmann = _run_boltzmann(w0, Ok.unwrap(op), max(t_b, t_fp), cfg.get_float("dt_boltzmann"),
                               stride)
    if Err.is_instance(boltzmann):
        return boltzmann
    series = Ok.unwrap(boltzmann)
    early = series.t <= t_b * (1 + 1e-9)
    if Err.is_instance(fit := fit_decay_rate(series.t[early], series.mean_P[early],
                                             np.zeros(int(early.sum())))):
        return fit
    b_rate = Ok.unwrap(fit)
    exact_rate = boltzmann_rate(Ok.unwrap(op))
    logger.info("boltzmann <P> rate %.6g, Gamma (1 - a) = %.6g", b_rate, exact_rate)

    ctx.check("boltzmann_rate_vs_exact", _relative(b_rate, exact_rate), 0.01,
              f"fitted {b_rate:.6g}, Gamma (1 - a) = {exact_rate:.6g}")
    ctx.check("boltzmann_rate_vs_2gamma", _relative(b_rate, 2 * params.gamma),
              2 * params.m / params.M, "Fokker-Planck truncation is O(m/M)")

    # the <P^2> relaxation rates Gamma (1 - a^2) and 4 gamma differ by 2m/M
    fp_p2 = fp.var_P + fp.mean_P**2
    b_p2 = np.interp(fp.t, series.t, series.var_P + series.mean_P**2)
    ctx.check("boltzmann_vs_fokker_planck_P2", float(np.max(np.abs(b_p2 / fp_p2 - 1))),
              4 * params.m / params.M, f"sup over t <= {t_fp:.4g}")

    fp.write_csv(ctx.output("fokker_planck_moments.csv"))
    series.write_csv(ctx.output("boltzmann_moments.csv"))
    write_wigner_csv(ctx.output("wigner_final.csv"), w)
    return Ok(None)


@register(
    name="crosscheck-collisions",
    defaults={
        "physics": {
            "M": 1.0,
            "m": 0.01,
            "T": 1.0,
            "Gamma": 10.0,
            },
        "crosscheck-collisions": {
            **_PHASE_SPACE,
            "n_particles": 100_000,
            "P0": 5.0,
            "t_max": 10.0,
            "n_steps": 20,
            },
        },
    )
def crosscheck_collisions(ctx: RunContext) -> Result[None, QbmError]:
    """
    Monte Carlo collision ensemble against the Boltzmann evolver, both against 2 gamma
    """
    cfg = ctx.config
    params = cfg.params
    P0, t_max = cfg.get_float("P0"), cfg.get_float("t_max")
    if Err.is_instance(grids := _momentum_grids(cfg)):
        return grids
    q_grid, p_grid = Ok.unwrap(grids)

    if Err.is_instance(op := _boltzmann_operator(cfg)):
        return op
    if Err.is_instance(ens := Ensemble.create(params, cfg.get_int("n_particles"), P0, cfg.seed)):
        return ens

    if Err.is_instance(mc := run_collision_ensemble(Ok.unwrap(ens), t_max, cfg.get_int("n_steps"))):
        return mc
    ensemble = Ok.unwrap(mc)
    if Err.is_instance(fit := fit_decay_rate(ensemble.t, ensemble.mean_P, ensemble.stderr_P)):
        return fit
    mc_rate = Ok.unwrap(fit)

    w0 = displaced_packet_wigner(q_grid, p_grid, P0, cfg.get_float("width"), params.hbar)
    boltzmann = _run_boltzmann(w0, Ok.unwrap(op), t_max, cfg.get_float("dt_boltzmann"),
                               cfg.get_float("sample_every"))
    if Err.is_instance(boltzmann):
        return boltzmann
    series = Ok.unwrap(boltzmann)
    if Err.is_instance(fit := fit_decay_rate(series.t, series.mean_P, np.zeros_like(series.t))):
        return fit
    b_rate = Ok.unwrap(fit)

    two_gamma = 2 * params.gamma
    logger.info("<P> rates: monte carlo %.6g, boltzmann %.6g, 2 gamma %.6g", mc_rate, b_rate,
                two_gamma)

    ctx.check("monte_carlo_rate_vs_2gamma", _relative(mc_rate, two_gamma), 0.1,
              f"fitted {mc_rate:.6g} from {len(ensemble.t)} times")
    ctx.check("boltzmann_rate_vs_2gamma", _relative(b_rate, two_gamma), 0.02,
              f"fitted {b_rate:.6g}")
    ctx.check("monte_carlo_vs_boltzmann", _relative(mc_rate, b_rate), 0.1)

    # <P^2> relaxes towards M kT at Gamma (1 - a^2)
    p2 = ensemble.var_P + ensemble.mean_P**2
    expected = mean_square_momentum(params, P0**2, ensemble.t)
    ctx.check("monte_carlo_P2_vs_relaxation", float(np.max(np.abs(p2 / expected - 1))), 0.03,
              f"<P^2> = {p2[-1]:.6g} at t = {t_max:.4g}, heading to M kT = "
              f"{params.M * params.kT:.6g}")

    ensemble.write_csv(ctx.output("ensemble.csv"))
    series.write_csv(ctx.output("boltzmann_moments.csv"))
    return Ok(None)


def _generator_gap(params: PhysicalParams, gap_grid: Grid1D, width: float,
                   temps: Sequence[float]) -> Result[List[float], ConfigInvalid]:
    """
    Frobenius norm of the cl-matched Lindblad generator minus the Caldeira-Leggett one, on a
    Gaussian test state, at each temperature

    The test state must vanish wherever |x - y| exceeds half the box, where the Lindblad position
    operator and the minimum image separations of the Caldeira-Leggett terms part ways.
    """
    state = gaussian_state(gap_grid, width=width, hbar=params.hbar)
    norms: List[float] = []
    for T in temps:
        if T <= 0:
            return Err(ConfigInvalid(f"positivity: temperatures must be > 0, got {T}"))
        hot = params.replace(T=T)
        L = build_qbm_lindblad(hot, "cl-matched")
        diff = lindblad_rhs(state, qbm_hamiltonian(gap_grid, hot), [L], hot.hbar) - \
            caldeira_leggett_rhs(state, hot)
        norms.append(float(np.linalg.norm(diff)))
    return Ok(norms)


@register(
    name="positivity",
    defaults={
        "physics": {
            "M": 1.0,
            "m": 0.01,
            "T": 0.1,
            "Gamma": 10.0,
            },
        "grid": {
            "x_min": -10.0,
            "x_max": 10.0,
            "n": 64,
            },
        "positivity": {
            "squeeze": 1.0,
            "t": 1.0,
            "dt": 0.005,
            "sample_every": 0.05,
            "coherence_separation": 1.0,
            "T_low": 10.0,
            "T_high": 100.0,
            "state_width": 1.0,
            "gap_half_width": 16.0,
            "gap_n": 128,
            },
        },
    )
def positivity(ctx: RunContext) -> Result[None, QbmError]:
    """
    Caldeira-Leggett against Lindblad evolution of a squeezed low temperature state
    """
    cfg = ctx.config
    params, grid = cfg.params, cfg.grid
    t, dt = cfg.get_float("t"), cfg.get_float("dt")
    stride = cfg.get_float("sample_every")

    rho0 = squeezed_state(grid, params, cfg.get_float("squeeze"))

    cl = DiagnosticsSeries(cfg.get_float("coherence_separation"))
    cl.record(0.0, rho0)
    if Err.is_instance(res := evolve_caldeira_leggett(rho0, params, t, dt, cl.every(stride))):
        return res

    H = qbm_hamiltonian(grid, params)
    normalizations: Tuple[Normalization, ...] = ("published", "cl-matched")
    lindblad: Dict[Normalization, DiagnosticsSeries] = {}
    for normalization in normalizations:
        series = DiagnosticsSeries(cfg.get_float("coherence_separation"))
        series.record(0.0, rho0)
        L = build_qbm_lindblad(params, normalization)
        if Err.is_instance(res := evolve_lindblad(rho0, H, [L], t, dt, params.hbar,
                                                  series.every(stride))):
            return res
        lindblad[normalization] = series

    ctx.check("caldeira_leggett_min_eigenvalue", min(cl.min_eig), -1e-6,
              "positivity violation expected below the thermal width")
    ctx.check("caldeira_leggett_trace_drift", max(abs(v - 1) for v in cl.trace), 1e-8)
    ctx.check("caldeira_leggett_hermiticity_error", cl.max_hermiticity_error, 1e-10)
    for normalization, series in lindblad.items():
        name = normalization.replace("-", "_")
        ctx.check(f"lindblad_{name}_min_eigenvalue", min(series.min_eig), -1e-7, bound="min")
        ctx.check(f"lindblad_{name}_trace_drift", max(abs(v - 1) for v in series.trace), 1e-8)
        ctx.check(f"lindblad_{name}_hermiticity_error", series.max_hermiticity_error, 1e-10)

    # generator difference over one decade of temperature
    temps = [cfg.get_float("T_low"), cfg.get_float("T_high")]
    gap_grid = _grid(cfg.get_float("gap_half_width"), cfg.get_int("gap_n"), "generator gap grid")
    if Err.is_instance(gap_grid):
        return gap_grid
    if Err.is_instance(gap := _generator_gap(params, Ok.unwrap(gap_grid),
                                             cfg.get_float("state_width"), temps)):
        return gap
    norms = Ok.unwrap(gap)
    slope = math.log(norms[1] / norms[0]) / math.log(temps[1] / temps[0])
    ctx.check("generator_gap_temperature_slope", abs(slope + 1), 0.05, f"slope {slope:.4f}")

    cl.write_csv(ctx.output("caldeira_leggett.csv"))
    for normalization, series in lindblad.items():
        series.write_csv(ctx.output(f"lindblad_{normalization.replace('-', '_')}.csv"))
    write_csv(ctx.output("generator_gap.csv"), ["T", "norm"], zip(temps, norms))
    return Ok(None)


def _dilute_gas(gas: GasParams, occupation: float) -> Result[GasParams, InvalidParams]:
    """
    Same gas with mu lowered until the zero momentum occupation equals occupation
    """
    if gas.statistics == "bose":
        mu = -math.log1p(1 / occupation) / gas.beta
    else:
        mu = math.log(occupation) / gas.beta
    return GasParams.create(gas.m, gas.beta, mu, gas.statistics)


@register(
    name="kernel",
    defaults={
        "kernel": {
            "r_max": 10.0,
            "n_r": 41,
            "k_max": 6.0,
            "n_k": 60,
            "k_cutoff": 0.0,
            "brute_force_r": "0.25,0.5,1,2,3",
            "brute_force_n_k": 48,
            "brute_force_n_q": 24,
            "dilute_occupation": 0.005,
            },
        },
    )
def kernel(ctx: RunContext) -> Result[None, QbmError]:
    """
    Decoherence kernel F(r) and localization rate D of a particle in a thermal gas
    """
    cfg = ctx.config
    pot, gas = cfg.potential, cfg.gas
    if Err.is_instance(spots := cfg.get_floats("brute_force_r")):
        return spots
    cutoff = cfg.get_float("k_cutoff")
    if not 0 < (occupation := cfg.get_float("dilute_occupation")) < 0.01:
        return Err(
            ConfigInvalid(f"kernel.dilute_occupation must be in (0, 0.01), got {occupation}")
            )

    r_values = np.linspace(0.0, cfg.get_float("r_max"), cfg.get_int("n_r"))
    k_max, n_k = cfg.get_float("k_max"), cfg.get_int("n_k")
    k_values = np.linspace(k_max / n_k, k_max, n_k)

    table = kernel_table(pot, gas, r_values, k_values, cutoff if cutoff > 0 else None)
    if Err.is_instance(table):
        return table
    result = Ok.unwrap(table)
    if Err.is_instance(fit := localization_rate_fit(pot, gas)):
        return fit
    D_fit = Ok.unwrap(fit)
    logger.info("localization rate: moment %.8g, fit %.8g", result.D, D_fit)

    ctx.check("localization_rate_route_gap", _relative(D_fit, result.D), 0.005,
              f"k^4 moment {result.D:.8g}, small r fit {D_fit:.8g}")
    ctx.check("kernel_at_origin", abs(float(result.F_values[0])), 1e-15)
    ctx.check("kernel_nonnegative", float(np.min(result.F_values)), 0.0, bound="min")

    brute = kernel_brute_force(
        Ok.unwrap(spots),
        pot,
        gas,
        n_k=cfg.get_int("brute_force_n_k"),
        n_q=cfg.get_int("brute_force_n_q"),
        )
    direct: List[float] = []
    for r in Ok.unwrap(spots):
        if Err.is_instance(f := kernel_direct(r, pot, gas)):
            return f
        direct.append(Ok.unwrap(f))
    gaps = [_relative(float(b), a) for a, b in zip(direct, brute)]
    ctx.check("brute_force_vs_coefficient_route", max(gaps), 0.01,
              f"at r = {', '.join(format(r, 'g') for r in Ok.unwrap(spots))}")

    if Err.is_instance(dilute := _dilute_gas(gas, occupation)):
        return Err(ConfigInvalid(f"kernel: {Err.unwrap(dilute)}"))
    thin = Ok.unwrap(dilute)
    low_gaps: List[float] = []
    for r in r_values[1:]:
        if Err.is_instance(full := kernel_direct(r, pot, thin)):
            return full
        if Err.is_instance(low := kernel_low_density(r, pot, thin)):
            return low
        low_gaps.append(_relative(Ok.unwrap(low), Ok.unwrap(full)))
    ctx.check("low_density_vs_full_kernel", max(low_gaps), thin.max_occupation,
              f"largest occupation {thin.max_occupation:.4g}")

    if Err.is_instance(quad := number_density_quadrature(gas)):
        return quad
    ctx.check("number_density_normalization", _relative(Ok.unwrap(quad), number_density(gas)),
              1e-8)

    result.write_kernel_csv(ctx.output("kernel.csv"))
    result.write_coefficient_csv(ctx.output("coefficient.csv"))
    write_csv(ctx.output("brute_force.csv"), ["r", "F_brute_force", "F_via_ck"],
              zip(Ok.unwrap(spots), brute, direct))
    write_kernel_summary(ctx.output("kernel_summary.json"), result.D, D_fit, pot, gas)
    return Ok(None)


@register(
    name="equivalence",
    defaults={
        "physics": {
            "M": 1.0,
            "m": 0.01,
            "T": 0.25,
            "Gamma": 100.0,
            },
        "equivalence": {
            "width": 1.0,
            "relaxation_times": 1.0,
            "dt": 0.004,
            "sample_every": 0.1,
            "collision_separation": 1.0,
            "collision_width": 0.5,
            "collision_t": 1.0,
            "collision_dt": 0.01,
            },
        },
    )
def equivalence(ctx: RunContext) -> Result[None, QbmError]:
    """
    Density matrix against phase space evolution, collision map against free decoherence
    """
    cfg = ctx.config
    params, grid = cfg.params, cfg.grid
    hbar = params.hbar
    if params.gamma <= 0:
        return Err(ConfigInvalid("equivalence needs Gamma > 0"))

    # evolve then transform against transform then evolve
    t = cfg.get_float("relaxation_times") / params.gamma
    n_steps = max(1, math.ceil(t / cfg.get_float("dt") - 1e-9))
    h = t / n_steps
    rho0 = gaussian_state(grid, width=cfg.get_float("width"), hbar=hbar)

    snapshots: Dict[int, DensityMatrix] = {}
    due = _sample_every(t, cfg.get_float("sample_every"))

    def observe(now: float, rho: DensityMatrix) -> None:
        if due(now):
            snapshots[round(now / h)] = rho

    observe(0.0, rho0)
    if Err.is_instance(res := evolve_caldeira_leggett(rho0, params, t, h, observe)):
        return res

    if Err.is_instance(transformed := wigner_transform(rho0, hbar)):
        return transformed
    w = Ok.unwrap(transformed)

    gaps: List[Tuple[float, float]] = []
    for k in range(n_steps + 1):
        if k in snapshots:
            if Err.is_instance(ref := wigner_transform(snapshots[k], hbar)):
                return ref
            gaps.append((k * h, float(np.max(np.abs(Ok.unwrap(ref).w - w.w)))))
        if k < n_steps:
            if Err.is_instance(step := fokker_planck_step(w, params, h, "rk4", "spectral")):
                return step
            w = Ok.unwrap(step)

    worst = max(g for _, g in gaps)
    ctx.check("commuting_diagram_sup_gap", worst, 1e-6,
              f"over t = {t:.4g} in {n_steps} steps, {len(gaps)} samples")

    # collision map and free decoherence share D = 2 m Gamma kT / hbar^2 at small separation
    env = ThermalEnvironment1D.from_params(params)
    s = cfg.get_float("collision_separation")
    t_c, dt_c = cfg.get_float("collision_t"), cfg.get_float("collision_dt")
    cat = superposition_state(grid, [-s / 2, s / 2], cfg.get_float("collision_width"), hbar)
    i, j = _index_of(grid, s / 2), _index_of(grid, -s / 2)
    xi = grid.points[i] - grid.points[j]

    start = float(abs(cat.rho[i, j]))
    n_c = max(1, math.ceil(t_c / dt_c - 1e-9))
    collided = cat
    collision_abs = [start]
    for _ in range(n_c):
        collided = apply_collision_decoherence(collided, env, params.Gamma, t_c / n_c, hbar)
        collision_abs.append(float(abs(collided.rho[i, j])))

    # an infinitely heavy particle, so only the decoherence factor acts
    free_abs = [start]

    def record_free(_: float, rho: DensityMatrix) -> None:
        free_abs.append(float(abs(rho.rho[i, j])))

    if Err.is_instance(free := evolve_free_decoherence(
            cat, params.D, t_c, dt_c, M=math.inf, hbar=hbar, observer=record_free)):
        return free

    collision_rate = -math.log(collision_abs[-1] / start) / t_c
    free_rate = -math.log(free_abs[-1] / start) / t_c
    times = [k * t_c / n_c for k in range(n_c + 1)]
    logger.info("coherence decay at separation %.4g: collisions %.6g, free %.6g", xi,
                collision_rate, free_rate)
    ctx.check("collision_vs_free_decoherence_rate", _relative(collision_rate, free_rate), 0.02,
              f"separation {xi:.4g}, D xi^2 = {params.D * xi**2:.6g}")

    write_csv(ctx.output("wigner_gap.csv"), ["t", "sup_gap"], gaps)
    write_csv(ctx.output("collision_vs_free.csv"), ["t", "abs_collision", "abs_free"],
              zip(times, collision_abs, free_abs))
    return Ok(None)


def run_all(root: PathLike, tool_version: str = "") -> int:
    """
    Runs every experiment with its defaults into root/<name>, returning how many errored
    or failed a check
    """
    failures = 0
    for exp in experiments():
        if Err.is_instance(cfg := configure(exp.name, output_dir=Path(root) / exp.name)):
            print(f"ERROR {exp.name}: {Err.unwrap(cfg)}")
            failures += 1
            continue

        if Err.is_instance(res := run(Ok.unwrap(cfg), tool_version)):
            print(f"ERROR {exp.name}: {Err.unwrap(res)}")
            failures += 1
        elif not (manifest := Ok.unwrap(res)).passed:
            print(f"FAIL {exp.name}: {', '.join(i.name for i in manifest.failed)}")
            failures += 1
        else:
            print(f"ok {exp.name} ({manifest.wall_clock_s:.1f}s)")
    return failures


def _read_outputs(root: Path, names: Sequence[str]) -> List[bytes]:
    return [(root / i).read_bytes() for i in names if i != "manifest.json"]


@test
def test_registry() -> None:
    """
    Tests every named experiment is registered, and unknown names are ConfigInvalid
    """
    names = [i.name for i in experiments()]
    assert names == [
        "decoherence-rate", "thermalization", "crosscheck-collisions", "positivity", "kernel",
        "equivalence"
        ], names
    assert all(i.summary for i in experiments())

    assert isinstance(Err.get(get_experiment("nosuch")), ConfigInvalid)
    assert isinstance(Err.get(configure("nosuch")), ConfigInvalid)
    assert isinstance(Err.get(configure("kernel", overrides=["kernel.nosuch=1"])), ConfigInvalid)

    try:
        register(name="kernel", defaults={})(kernel)
    except DuplicateExperiment:
        pass
    else:
        raise AssertionError("duplicate registration accepted")


@test
def test_check_ledger() -> None:
    """
    Tests bounds, nan and duplicate check names
    """
    ctx = RunContext(Ok.unwrap(configure("kernel")))
    assert ctx.check("upper", 0.5, 1.0)
    assert not ctx.check("upper_fails", 1.5, 1.0)
    assert ctx.check("lower", 0.5, 0.0, bound="min")
    assert not ctx.check("nan", math.nan, 1.0)

    try:
        ctx.check("upper", 0.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("duplicate check accepted")

    assert [i.passed for i in ctx.checks] == [True, False, True, False]


@test
def test_crosscheck_run_is_deterministic() -> None:
    """
    Tests a small collision run writes a complete manifest and byte identical csv files
    """
    overrides = ["crosscheck-collisions.n_particles=5000", "crosscheck-collisions.t_max=2"]
    outputs: List[List[bytes]] = []

    with tempfile.TemporaryDirectory() as tmp:
        for attempt in ("a", "b"):
            cfg = Ok.unwrap(configure("crosscheck-collisions", None, overrides,
                                      Path(tmp) / attempt))
            manifest = Ok.unwrap(run(cfg, "test"))
            assert (cfg.output_dir / "manifest.json").exists()
            assert {i.name for i in manifest.checks} == {
                "monte_carlo_rate_vs_2gamma", "boltzmann_rate_vs_2gamma",
                "monte_carlo_vs_boltzmann", "monte_carlo_P2_vs_relaxation"
                }
            assert manifest.config["crosscheck-collisions"]["n_particles"] == 5000
            outputs.append(_read_outputs(cfg.output_dir, manifest.outputs))

    assert outputs[0] == outputs[1]
    assert len(outputs[0]) == 2


@test
def test_decoherence_rate_defaults() -> None:
    """
    Tests the default coherence decay run passes every check
    """
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Ok.unwrap(configure("decoherence-rate", output_dir=tmp))
        manifest = Ok.unwrap(run(cfg))

    assert manifest.passed, manifest.failed
    rate = next(i for i in manifest.checks if i.name == "decay_rate_vs_D_d2")
    assert_close(rate.tolerance, 0.05, rel=0)


@test
def test_errors_carry_experiment_name() -> None:
    """
    Tests a violated precondition inside an experiment comes back with context
    """
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Ok.unwrap(
            configure("thermalization", None, ["thermalization.dt_boltzmann=0.05"], tmp)
            )
        err = Err.get(run(cfg))

    assert err is not None and str(err).startswith("thermalization: "), err


@test
def test_generator_gap_falls_as_inverse_temperature() -> None:
    """
    Tests the Lindblad minus Caldeira-Leggett generator shrinks tenfold per decade of T on the
    positivity gap grid, and that a box too small for the test state breaks the scaling
    """
    cfg = Ok.unwrap(configure("positivity"))
    gap_grid = Ok.unwrap(_grid(cfg.get_float("gap_half_width"), cfg.get_int("gap_n"), ""))
    temps = [10.0, 100.0, 1000.0, 10000.0]

    norms = Ok.unwrap(_generator_gap(cfg.params, gap_grid, cfg.get_float("state_width"), temps))
    for low, high in zip(norms, norms[1:]):
        assert_close(low / high, 10.0, rel=0.01)

    # the evolution grid wraps the test state's coherences around the box
    small = Ok.unwrap(_generator_gap(cfg.params, cfg.grid, cfg.get_float("state_width"), temps))
    assert small[-1] > small[-2]

    assert isinstance(Err.get(_generator_gap(cfg.params, gap_grid, 1.0, [0.0])), ConfigInvalid)
