"""
The one dimensional collision model: elastic kinematics, the position map of a collision,
the decoherence factor of a thermal environment and a Monte Carlo collision ensemble
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Tuple, Type, List, Final, Union, TypeVar

import numpy as np

from ._result import Result, Ok, Err
from ._types import (
    PhysicalParams, ThermalEnvironment1D, DensityMatrix, RealArray, InvalidParams,
    EmptyEnsemble, QuadratureFailure
    )
from ._core import separation, integrate, worker_count, gaussian_state, superposition_state
from ._output import write_csv, PathLike
from .testing import test, assert_close

logger = logging.getLogger(__name__)

# particles per independent rng stream and unit of parallel work
BLOCK_SIZE: Final = 4096

ArrayOrFloat = TypeVar("ArrayOrFloat", float, RealArray)


@dataclass(frozen=True, slots=True)
class CollisionCoefficients:
    """
    Coefficients of the elastic collision map P' = aP + bp, p' = cP - ap
    """
    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if abs(self.a**2 + self.b * self.c - 1) > 1e-14:
            raise InvalidParams(f"a^2 + bc = {self.a**2 + self.b * self.c!r}, expected 1")

    @classmethod
    def from_masses(cls: Type["CollisionCoefficients"], M: float,
                    m: float) -> "CollisionCoefficients":
        """
        Coefficients for a system of mass M hit by a particle of mass m
        """
        total = M + m
        return cls((M - m) / total, 2 * M / total, 2 * m / total)

    @classmethod
    def from_params(cls: Type["CollisionCoefficients"],
                    params: PhysicalParams) -> "CollisionCoefficients":
        """
        Coefficients for the masses of a parameter set
        """
        return cls.from_masses(params.M, params.m)


def elastic_collision(P: ArrayOrFloat, p: ArrayOrFloat,
                      params: PhysicalParams) -> Tuple[ArrayOrFloat, ArrayOrFloat]:
    """
    Final momenta of a one dimensional elastic collision, for scalars or arrays
    """
    co = CollisionCoefficients.from_params(params)
    return co.a * P + co.b * p, co.c * P - co.a * p


def elastic_collision_limit(P: ArrayOrFloat,
                            p: ArrayOrFloat) -> Tuple[ArrayOrFloat, ArrayOrFloat]:
    """
    Light and fast environment limit m << M of elastic_collision
    """
    return P + 2 * p, -p


def collision_position_map(x: float, q: float) -> Tuple[float, float]:
    """
    Replacement of the environment coordinate q -> 2x - q a collision induces on a plane wave
    """
    return x, 2 * x - q


def decoherence_factor(x: ArrayOrFloat, y: ArrayOrFloat, env: ThermalEnvironment1D,
                       Gamma: float, hbar: float = 1.0) -> ArrayOrFloat:
    """
    F(x, y) = Gamma (1 - exp(-2 <p^2> (x - y)^2 / hbar^2)) of a thermal environment
    """
    return -Gamma * np.expm1(-2 * env.p2_mean * (x - y)**2 / hbar**2)


def decoherence_factor_quadrature(x: float, y: float, env: ThermalEnvironment1D, Gamma: float,
                                  hbar: float = 1.0) -> Result[float, QuadratureFailure]:
    """
    F(x, y) by quadrature of Gamma (1 - <cos(2 p (x - y) / hbar)>) over the Maxwell-Boltzmann
    momentum density
    """
    sigma = math.sqrt(env.p2_mean)
    s = 2 * abs(x - y) / hbar

    def density(p: float) -> float:
        return math.exp(-p * p / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))

    if s * sigma < 1:
        # 1 - cos(sp) = 2 sin^2(sp/2) keeps relative precision at small separations
        return Ok.map(
            integrate(
                lambda p: 4 * density(p) * math.sin(s * p / 2)**2,
                0.0,
                12 * sigma,
                epsabs=0.0,
                epsrel=1e-11,
                limit=200,
                ),
            lambda v: Gamma * v[0],
            )

    return Ok.map(
        integrate(density, 0.0, math.inf, weight="cos", wvar=s, epsabs=1e-13),
        lambda v: Gamma * (1 - 2 * v[0]),
        )


def decoherence_matrix(rho: DensityMatrix, env: ThermalEnvironment1D, Gamma: float,
                       hbar: float = 1.0) -> RealArray:
    """
    F(x_i, y_j) on the grid of rho
    """
    xi = separation(rho.grid)
    return decoherence_factor(xi, np.zeros_like(xi), env, Gamma, hbar)


def apply_collision_decoherence(
    rho: DensityMatrix,
    env: ThermalEnvironment1D,
    Gamma: float,
    dt: float,
    hbar: float = 1.0,
    exact: bool = True,
    ) -> DensityMatrix:
    """
    One step of the collision generator d rho / dt = -F rho

    exact=True applies exp(-F dt), exact=False the first order map (1 - F dt)
    """
    F = decoherence_matrix(rho, env, Gamma, hbar)

    if exact:
        return rho.with_rho(rho.rho * np.exp(-F * dt))

    return rho.with_rho(rho.rho * (1 - F * dt))


@dataclass(frozen=True, slots=True)
class Ensemble:
    """
    Initial system momenta of independent Brownian particles, with the seed of their
    collision histories
    """
    momenta: RealArray = field(repr=False)
    seed: int
    params: PhysicalParams

    def __post_init__(self) -> None:
        momenta = np.array(self.momenta, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(momenta)):
            raise InvalidParams("ensemble momenta must be finite")
        momenta.flags.writeable = False
        object.__setattr__(self, "momenta", momenta)

    @classmethod
    def create(cls: Type["Ensemble"], params: PhysicalParams, n_particles: int, P0: float,
               seed: int) -> Result["Ensemble", InvalidParams]:
        """
        Ensemble of n_particles all starting at momentum P0
        """
        if n_particles < 0:
            return Err(InvalidParams(f"n_particles must be >= 0, got {n_particles}"))
        try:
            return Ok(cls(np.full(n_particles, P0, dtype=np.float64), seed, params))
        except InvalidParams as err:
            return Err(err)

    def __len__(self) -> int:
        return len(self.momenta)


@dataclass(frozen=True, slots=True)
class EnsembleSeries:
    """
    Ensemble moments of the system momentum at each output time
    """
    t: RealArray
    mean_P: RealArray
    var_P: RealArray
    stderr_P: RealArray

    def rows(self) -> List[Tuple[float, float, float, float]]:
        """
        (t, mean_P, var_P, stderr_P) rows
        """
        return [(float(a), float(b), float(c), float(d))
                for a, b, c, d in zip(self.t, self.mean_P, self.var_P, self.stderr_P)]

    def write_csv(self, path: PathLike) -> None:
        """
        Writes the series as t,mean_P,var_P,stderr_P
        """
        write_csv(path, ["t", "mean_P", "var_P", "stderr_P"], self.rows())


def _run_block(
    momenta: RealArray,
    seed: int,
    block: int,
    params: PhysicalParams,
    times: RealArray,
    shift: float,
    ) -> Tuple[RealArray, RealArray]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, )))
    co = CollisionCoefficients.from_params(params)
    sigma_p = math.sqrt(params.m * params.kT)

    P = momenta.copy()
    n = len(P)

    if params.Gamma > 0:
        clock = rng.exponential(1 / params.Gamma, n)
    else:
        clock = np.full(n, np.inf)

    s1 = np.empty(len(times))
    s2 = np.empty(len(times))

    for k, t in enumerate(times):
        while np.any(hit := clock <= t):
            count = int(hit.sum())
            p = rng.normal(0.0, sigma_p, count)
            P[hit] = co.a * P[hit] + co.b * p
            clock[hit] += rng.exponential(1 / params.Gamma, count)

        d = P - shift
        s1[k] = d.sum()
        s2[k] = (d * d).sum()

    return s1, s2


def run_collision_ensemble(
    ens: Ensemble, t_max: float, n_steps: int
    ) -> Result[EnsembleSeries, Union[EmptyEnsemble, InvalidParams]]:
    """
    Evolves every particle of the ensemble through Poisson collisions at rate Gamma with
    Maxwell-Boltzmann environment particles, using the exact elastic kinematics

    Particles are split in blocks of BLOCK_SIZE with their own rng stream, so the output
    only depends on the seed and not on how many workers ran the blocks
    """
    n = len(ens)
    if n == 0:
        return Err(EmptyEnsemble("ensemble has no particles"))
    if n_steps < 1 or not (math.isfinite(t_max) and t_max > 0):
        return Err(InvalidParams(f"need t_max > 0 and n_steps >= 1, got {t_max}, {n_steps}"))

    times = np.linspace(0.0, t_max, n_steps + 1)
    shift = float(ens.momenta.mean())
    n_blocks = math.ceil(n / BLOCK_SIZE)
    workers = min(worker_count(), n_blocks)

    logger.info(
        "collision ensemble: %d particles in %d blocks on %d workers, t_max=%g",
        n,
        n_blocks,
        workers,
        t_max,
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _run_block,
                ens.momenta[b * BLOCK_SIZE:(b + 1) * BLOCK_SIZE],
                ens.seed,
                b,
                ens.params,
                times,
                shift,
                ) for b in range(n_blocks)
            ]
        parts = [f.result() for f in futures]

    s1 = np.zeros(len(times))
    s2 = np.zeros(len(times))
    for b1, b2 in parts:
        s1 += b1
        s2 += b2

    mean_d = s1 / n
    var = np.maximum(s2 / n - mean_d**2, 0.0)

    return Ok(EnsembleSeries(times, shift + mean_d, var, np.sqrt(var / n)))


def mean_square_momentum(params: PhysicalParams, P2_0: float, t: RealArray) -> RealArray:
    """
    <P^2>(t) of the collision process started from <P^2> = P2_0

    A collision sends <P^2> to a^2 <P^2> + b^2 m kT, whose fixed point b^2 m kT / (1 - a^2) is
    exactly M kT, so the excess decays at Gamma (1 - a^2).
    """
    co = CollisionCoefficients.from_params(params)
    mkt = params.M * params.kT
    return np.asarray(mkt + (P2_0 - mkt) * np.exp(-params.Gamma * (1 - co.a**2) * np.asarray(t)),
                      dtype=np.float64)


def fit_decay_rate(t: RealArray, mean: RealArray,
                   stderr: RealArray) -> Result[float, InvalidParams]:
    """
    Exponential decay rate from a least squares line through log(mean), over the leading
    window where mean > 3 stderr
    """
    keep = np.asarray(mean) > 3 * np.asarray(stderr)
    stop = len(keep) if bool(np.all(keep)) else int(np.argmin(keep))

    if stop < 2:
        return Err(InvalidParams("fewer than two points above three standard errors"))

    slope = np.polyfit(np.asarray(t)[:stop], np.log(np.asarray(mean)[:stop]), 1)[0]
    return Ok(-float(slope))


_HEAVY = Ok.unwrap(PhysicalParams.create(M=100.0, m=1.0, T=1.0, Gamma=1.0))


@test
def test_elastic_collision_examples() -> None:
    """
    Tests equal mass exchange and the heavy system example
    """
    equal = Ok.unwrap(PhysicalParams.create(M=1.0, m=1.0, T=1.0, Gamma=1.0))
    assert elastic_collision(0.0, 1.0, equal) == (1.0, 0.0)

    heavy = Ok.unwrap(PhysicalParams.create(M=1000.0, m=1.0, T=1.0, Gamma=1.0))
    P, p = elastic_collision(1.0, 1.0, heavy)
    assert_close(P, 2999 / 1001, rel=1e-14)
    assert_close(p, -997 / 1001, rel=1e-14)

    limit = elastic_collision_limit(1.0, 1.0)
    assert abs(P - limit[0]) < 0.01 and abs(p - limit[1]) < 0.01


@test
def test_elastic_collision_conserves() -> None:
    """
    Tests momentum and energy conservation over a million random collisions spread across 50
    mass ratios
    """
    rng = np.random.default_rng(3)

    for _ in range(50):
        M, m = np.exp(rng.uniform(-5, 5, size=2))
        params = Ok.unwrap(PhysicalParams.create(M=M, m=m, T=1.0, Gamma=1.0))
        co = CollisionCoefficients.from_params(params)
        assert abs(co.a**2 + co.b * co.c - 1) <= 1e-14

        P = rng.normal(0, 3, 20_000)
        p = rng.normal(0, 3, 20_000)
        P2, p2 = elastic_collision(P, p, params)

        scale = np.abs(P) + np.abs(p)
        assert np.all(np.abs((P2 + p2) - (P + p)) <= 1e-12 * scale)

        energy = P**2 / (2 * M) + p**2 / (2 * m)
        energy2 = P2**2 / (2 * M) + p2**2 / (2 * m)
        assert np.all(np.abs(energy2 - energy) <= 1e-12 * energy)


@test
def test_mean_momentum_change() -> None:
    """
    Tests the collision averaged momentum change (a - 1) P over symmetric p
    """
    co = CollisionCoefficients.from_params(_HEAVY)
    P = 3.0
    up, _ = elastic_collision(P, 0.7, _HEAVY)
    down, _ = elastic_collision(P, -0.7, _HEAVY)
    assert_close((up + down) / 2 - P, (co.a - 1) * P, rel=1e-12)
    assert_close(co.a - 1, -2 * _HEAVY.m / (_HEAVY.M + _HEAVY.m), rel=1e-12)


@test
def test_collision_position_map() -> None:
    """
    Tests fixed point, the q -> 2x - q example and involution
    """
    assert collision_position_map(0.0, 0.0) == (0.0, 0.0)
    assert collision_position_map(1.0, 3.0) == (1.0, -1.0)
    assert collision_position_map(*collision_position_map(0.25, -1.5)) == (0.25, -1.5)


@test
def test_decoherence_factor() -> None:
    """
    Tests the closed form against the quadrature oracle, its small separation limit and
    saturation
    """
    env = ThermalEnvironment1D.from_params(_HEAVY)
    Gamma = _HEAVY.Gamma

    assert decoherence_factor(0.3, 0.3, env, Gamma) == 0.0

    d = 1e-4
    assert_close(decoherence_factor(d, 0.0, env, Gamma) / d**2, _HEAVY.D, rel=1e-6)

    for sep in (1e-3, 0.05, 0.3, 1.0, 4.0):
        oracle = Ok.unwrap(decoherence_factor_quadrature(sep, 0.0, env, Gamma))
        closed = decoherence_factor(sep, 0.0, env, Gamma)
        assert_close(oracle, closed, rel=1e-8, abs_=1e-12, what=f"separation {sep}")

    assert_close(decoherence_factor(50.0, 0.0, env, Gamma), Gamma, rel=1e-14)

    seps = np.linspace(0, 5, 200)
    values = decoherence_factor(seps, np.zeros_like(seps), env, Gamma)
    assert np.all(np.diff(values) >= 0)
    assert np.all(values <= Gamma)


@test
def test_collision_decoherence_step() -> None:
    """
    Tests the exact step leaves populations alone, damps coherences at exp(-F t), and agrees
    with the first order map to second order in dt
    """
    from ._types import Grid1D

    grid = Grid1D.centered(8.0, 64)
    env = ThermalEnvironment1D.from_params(_HEAVY)
    rho = superposition_state(grid, [-2.0, 2.0], 0.5)

    assert np.array_equal(apply_collision_decoherence(rho, env, 1.0, 0.0).rho, rho.rho)

    diagonal = rho.with_rho(np.diag(np.diag(rho.rho)))
    assert np.array_equal(
        apply_collision_decoherence(diagonal, env, 1.0, 3.0).rho, diagonal.rho
        )

    t = 0.7
    out = apply_collision_decoherence(rho, env, 1.0, t)
    assert np.allclose(np.diag(out.rho), np.diag(rho.rho), rtol=0, atol=0)
    assert np.max(np.abs(out.rho - out.rho.conj().T)) == 0.0

    i, j = np.argmin(np.abs(grid.points - 2.0)), np.argmin(np.abs(grid.points + 2.0))
    ratio = abs(out.rho[i, j]) / abs(rho.rho[i, j])
    F = decoherence_factor(grid.points[i], grid.points[j], env, 1.0)
    assert_close(ratio, math.exp(-F * t), rel=1e-12)

    single = gaussian_state(grid, width=0.4)
    errs = []
    for dt in (0.02, 0.01):
        exact = apply_collision_decoherence(single, env, 1.0, dt)
        first = apply_collision_decoherence(single, env, 1.0, dt, exact=False)
        errs.append(np.max(np.abs(exact.rho - first.rho)))
    assert 3.5 < errs[0] / errs[1] < 4.5


@test
def test_ensemble_decay_rate() -> None:
    """
    Tests the Monte Carlo mean momentum decays at 2 gamma and that Gamma = 0 freezes it
    """
    ens = Ok.unwrap(Ensemble.create(_HEAVY, 20000, 5.0, seed=11))
    series = Ok.unwrap(run_collision_ensemble(ens, 50.0, 25))
    rate = Ok.unwrap(fit_decay_rate(series.t, series.mean_P, series.stderr_P))
    assert_close(rate, 2 * _HEAVY.gamma, rel=0.1)

    frozen = Ok.unwrap(Ensemble.create(_HEAVY.replace(Gamma=0.0), 100, 5.0, seed=1))
    still = Ok.unwrap(run_collision_ensemble(frozen, 10.0, 5))
    assert np.all(still.mean_P == 5.0)

    empty = Ok.unwrap(Ensemble.create(_HEAVY, 0, 5.0, seed=1))
    assert isinstance(Err.get(run_collision_ensemble(empty, 1.0, 1)), EmptyEnsemble)


@test
def test_ensemble_second_moment_relaxes_to_MkT() -> None:
    """
    Tests the Monte Carlo <P^2> follows its relaxation law down to M kT
    """
    P0 = 20.0
    ens = Ok.unwrap(Ensemble.create(_HEAVY, 20000, P0, seed=7))
    series = Ok.unwrap(run_collision_ensemble(ens, 200.0, 20))

    p2 = series.var_P + series.mean_P**2
    expected = mean_square_momentum(_HEAVY, P0**2, series.t)
    assert np.max(np.abs(p2 / expected - 1)) < 0.05

    mkt = _HEAVY.M * _HEAVY.kT
    assert_close(float(p2[-1]), mkt, rel=0.05)
    assert_close(float(expected[-1]), mkt, rel=1e-3)

    # the fixed point of a single collision is exactly M kT
    co = CollisionCoefficients.from_params(_HEAVY)
    assert_close(co.b**2 * _HEAVY.m * _HEAVY.kT / (1 - co.a**2), mkt, rel=1e-12)


@test
def test_ensemble_deterministic() -> None:
    """
    Tests the ensemble is bit identical across reruns with a fixed seed
    """
    ens = Ok.unwrap(Ensemble.create(_HEAVY, 2 * BLOCK_SIZE + 10, 1.0, seed=5))
    first = Ok.unwrap(run_collision_ensemble(ens, 5.0, 4))
    second = Ok.unwrap(run_collision_ensemble(ens, 5.0, 4))
    assert np.array_equal(first.mean_P, second.mean_P)
    assert np.array_equal(first.var_P, second.var_P)
