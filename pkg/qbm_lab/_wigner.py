"""
Discrete Wigner transform pair and the phase space evolvers: the collision (Boltzmann)
integrator and its Fokker-Planck limit

The transform samples rho(X + xi/2, X - xi/2) with xi on the grid spacing dx. Even xi
multiples land on grid points; odd ones land on the lattice shifted by dx/2 and are moved
back with a unitary band limited shift, and the xi = -L/2 column is carried with a Hartley
kernel. The result is a real n x n array with exact marginals and an exact inverse.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Tuple, Type, Dict, List, Literal, Final, Optional

import numpy as np
from numpy.typing import NDArray
import scipy.fft

from ._result import Result, Ok, Err
from ._types import (
    Grid1D, DensityMatrix, WignerFunction, PhysicalParams, ThermalEnvironment1D, RealArray,
    ComplexArray, NonHermitian, InvalidParams, CFLViolation
    )
from ._core import (
    hermiticity_error, HERMITIAN_ATOL, derivative_multiplier, momentum_marginal,
    position_marginal, momentum_moments, gaussian_state, superposition_state,
    wavefunction_density, integrate, thermal_wigner, displaced_packet_wigner, rk4_step,
    RK4_STABILITY_RADIUS
    )
from ._output import write_csv, PathLike
from .testing import test, assert_close

logger = logging.getLogger(__name__)

Interpolation = Literal["spectral", "linear"]
Scheme = Literal["euler", "rk4"]
Derivatives = Literal["centered", "spectral"]

# explicit collision step bound on Gamma dt
BOLTZMANN_MAX_GAMMA_DT: Final = 0.1
# the Boltzmann operator is a leading order expansion in m / M
BOLTZMANN_MAX_MASS_RATIO: Final = 0.1


def momentum_grid(grid: Grid1D, hbar: float) -> Grid1D:
    """
    Momentum grid dual to a position grid, dP = 2 pi hbar / L on [-pi hbar/dx, pi hbar/dx)
    """
    dP = 2 * math.pi * hbar / grid.length
    return Grid1D(-grid.n // 2 * dP, grid.n // 2 * dP, grid.n)


def _layout(n: int) -> Tuple[NDArray[np.int64], NDArray[np.int64], NDArray[np.bool_]]:
    s = np.fft.fftfreq(n, 1 / n).astype(np.int64)
    j = np.arange(n, dtype=np.int64)[:, None]
    even = s % 2 == 0
    a = np.where(even, j + s // 2, j + (s + 1) // 2) % n
    b = np.where(even, j - s // 2, j - (s - 1) // 2) % n
    return a, b, ~even


def _half_cell_shift(grid: Grid1D) -> ComplexArray:
    # exp(-i k dx / 2) with the Nyquist mode left alone, so real data stays real
    mult = np.exp(-0.5j * grid.wavenumbers * grid.dx)
    mult[grid.n // 2] = 1.0
    return mult


def wigner_transform(rho: DensityMatrix, hbar: float = 1.0) -> Result[WignerFunction, NonHermitian]:
    """
    W(X, P) = (2 pi hbar)^-1 int dxi exp(-i P xi / hbar) rho(X + xi/2, X - xi/2)

    W lives on rho's grid in X and on momentum_grid(rho.grid, hbar) in P
    """
    if (err := hermiticity_error(rho)) > HERMITIAN_ATOL:
        return Err(NonHermitian(f"cannot transform a matrix off Hermitian by {err:.3e}"))

    grid = rho.grid
    n = grid.n
    a, b, odd = _layout(n)

    R = rho.rho[a, b]

    R[:, odd] = scipy.fft.ifft(
        _half_cell_shift(grid)[:, None] * scipy.fft.fft(R[:, odd], axis=0), axis=0
        )

    edge = R[:, n // 2]
    R[:, n // 2] = edge.real + edge.imag

    w = scipy.fft.fftshift(scipy.fft.fft(R, axis=1).real, axes=1) * grid.dx / (2 * math.pi * hbar)

    return Ok(WignerFunction(grid, momentum_grid(grid, hbar), w, hbar))


def inverse_wigner_transform(w: WignerFunction) -> DensityMatrix:
    """
    Density matrix whose wigner_transform is w
    """
    grid = w.q_grid
    n = grid.n
    a, b, odd = _layout(n)

    R = scipy.fft.ifft(scipy.fft.ifftshift(w.w, axes=1), axis=1) * (2 * math.pi * w.hbar / grid.dx)
    R = np.asarray(R, dtype=np.complex128)

    v = R[:, n // 2].real
    partner = np.roll(v, -(n // 2))
    R[:, n // 2] = 0.5 * (v + partner) + 0.5j * (v - partner)

    R[:, odd] = scipy.fft.ifft(
        np.conj(_half_cell_shift(grid))[:, None] * scipy.fft.fft(R[:, odd], axis=0), axis=0
        )

    rho = np.empty((n, n), dtype=np.complex128)
    rho[a, b] = R
    return DensityMatrix(grid, rho)


def momentum_distribution(rho: DensityMatrix, hbar: float = 1.0) -> RealArray:
    """
    Momentum density of rho on momentum_grid(rho.grid, hbar)
    """
    dP = 2 * math.pi * hbar / rho.grid.length
    diag = np.diagonal(scipy.fft.ifft(scipy.fft.fft(rho.rho, axis=0), axis=1)).real
    return np.asarray(scipy.fft.fftshift(diag) * rho.grid.dx / dP, dtype=np.float64)


@dataclass(frozen=True, slots=True)
class WignerMoments:
    """
    Norm and momentum moments of a Wigner function
    """
    norm: float
    mean_P: float
    var_P: float


def wigner_moments(w: WignerFunction) -> WignerMoments:
    """
    Norm, mean and variance of P under w
    """
    mean, var = momentum_moments(w)
    return WignerMoments(w.norm, mean, var)


@dataclass(frozen=True, slots=True)
class MomentSeries:
    """
    Momentum moments of an evolving Wigner function at each output time
    """
    t: RealArray
    mean_P: RealArray
    var_P: RealArray
    norm: RealArray

    @classmethod
    def from_moments(cls: Type["MomentSeries"], times: List[float],
                     moments: List[WignerMoments]) -> "MomentSeries":
        """
        Collects a list of moments
        """
        return cls(
            np.array(times),
            np.array([i.mean_P for i in moments]),
            np.array([i.var_P for i in moments]),
            np.array([i.norm for i in moments]),
            )

    def write_csv(self, path: PathLike) -> None:
        """
        Writes the series as t,mean_P,var_P,norm
        """
        write_csv(
            path, ["t", "mean_P", "var_P", "norm"], zip(self.t, self.mean_P, self.var_P, self.norm)
            )


def write_wigner_csv(path: PathLike, w: WignerFunction) -> None:
    """
    Writes a snapshot as X,P,W triples, X major
    """
    X = w.q_grid.points
    P = w.p_grid.points
    write_csv(
        path, ["X", "P", "W"],
        ((X[j], P[k], w.w[j, k]) for j in range(len(X)) for k in range(len(P)))
        )


def stream(w: WignerFunction, mass: float, dt: float) -> WignerFunction:
    """
    Exact free streaming W(X, P) -> W(X - P dt / M, P) as a spectral shift in X
    """
    k = derivative_multiplier(w.q_grid)
    velocity = w.p_grid.points / mass
    phase = np.exp(-1j * k[:, None] * velocity[None, :] * dt)
    shifted = scipy.fft.ifft(phase * scipy.fft.fft(w.w, axis=0), axis=0).real
    return w.with_w(shifted)


def _spectral_derivative_p(w: RealArray, p_grid: Grid1D, order: int) -> RealArray:
    if order == 1:
        mult = 1j * derivative_multiplier(p_grid)
    else:
        mult = -p_grid.wavenumbers**2
    return np.asarray(scipy.fft.ifft(mult * scipy.fft.fft(w, axis=1), axis=1).real)


@dataclass(frozen=True, slots=True, eq=False)
class BoltzmannOperator:
    """
    Collision operator of a heavy particle in a light thermal gas, acting on the momentum
    axis of a Wigner function

    Holds the Gauss-Hermite quadrature of the environment momentum density and caches one
    gain matrix per momentum grid.
    """
    params: PhysicalParams
    env: ThermalEnvironment1D
    nodes: RealArray = field(repr=False)
    weights: RealArray = field(repr=False)
    interpolation: Interpolation = "spectral"
    _gain: Dict[Grid1D, RealArray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if np.any(self.weights <= 0):
            raise InvalidParams("quadrature weights must be positive")
        if not np.allclose(np.sort(self.nodes), -np.sort(self.nodes)[::-1], rtol=0, atol=1e-12):
            raise InvalidParams("quadrature nodes must be symmetric about zero")
        if abs(float(self.weights.sum()) - 1) > 1e-10:
            raise InvalidParams(f"quadrature weights sum to {self.weights.sum()!r}, expected 1")
        if self.params.m >= BOLTZMANN_MAX_MASS_RATIO * self.params.M:
            raise InvalidParams(
                f"collision operator needs m < M/10, got m={self.params.m}, M={self.params.M}"
                )
        if self.interpolation not in ("spectral", "linear"):
            raise InvalidParams(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def create(cls: Type["BoltzmannOperator"],
               params: PhysicalParams,
               n_nodes: int = 32,
               interpolation: Interpolation = "spectral"
               ) -> Result["BoltzmannOperator", InvalidParams]:
        """
        Operator with an n_nodes point Gauss-Hermite rule for the Maxwell-Boltzmann density
        """
        if n_nodes < 2:
            return Err(InvalidParams(f"need at least 2 quadrature nodes, got {n_nodes}"))

        env = ThermalEnvironment1D.from_params(params)
        x, wts = np.polynomial.hermite.hermgauss(n_nodes)

        try:
            return Ok(
                cls(
                    params,
                    env,
                    math.sqrt(2 * env.p2_mean) * x,
                    wts / math.sqrt(math.pi),
                    interpolation,
                    )
                )
        except InvalidParams as err:
            return Err(err)

    @property
    def a(self) -> float:
        """
        (M - m) / (M + m)
        """
        return (self.params.M - self.params.m) / (self.params.M + self.params.m)

    @property
    def b(self) -> float:
        """
        2M / (M + m)
        """
        return 2 * self.params.M / (self.params.M + self.params.m)

    def _kernel(self, u: RealArray, p_grid: Grid1D) -> RealArray:
        h = p_grid.dx
        if self.interpolation == "linear":
            return np.maximum(0.0, 1 - np.abs(u) / h)

        # periodic band limited interpolant of an even number of samples
        n = p_grid.n
        t = u / h
        with np.errstate(divide="ignore", invalid="ignore"):
            value = np.sin(np.pi * t) / (n * np.tan(np.pi * t / n))
        return np.where(np.abs(np.sin(np.pi * t / n)) < 1e-12, 1.0, value)

    def gain_matrix(self, p_grid: Grid1D) -> RealArray:
        """
        G such that (W @ G)[:, i] = int dp g(p) (1/a) W(X, (P_i - b p) / a)
        """
        if (cached := self._gain.get(p_grid)) is not None:
            return cached

        P = p_grid.points
        source = (P[:, None] - self.b * self.nodes[None, :]) / self.a
        inside = (source >= p_grid.x_min) & (source <= P[-1])

        # K[i, l, k] = kernel(source[i, l] - P[k])
        K = self._kernel(source[:, :, None] - P[None, None, :], p_grid)
        K *= inside[:, :, None]
        gain = np.einsum("l,ilk->ki", self.weights / self.a, K)

        logger.debug("gain matrix for %s with %d nodes", p_grid, len(self.nodes))
        self._gain[p_grid] = gain
        return gain


def boltzmann_rate(op: BoltzmannOperator) -> float:
    """
    Decay rate of <P> under the collision operator, Gamma (1 - a) = 2 gamma M / (M + m)
    """
    return op.params.Gamma * (1 - op.a)


def boltzmann_step(w: WignerFunction, op: BoltzmannOperator,
                   dt: float) -> Result[WignerFunction, CFLViolation]:
    """
    One explicit step: exact streaming, then W += dt Gamma (gain - W)
    """
    if (gdt := op.params.Gamma * dt) >= BOLTZMANN_MAX_GAMMA_DT:
        return Err(CFLViolation(f"Gamma dt = {gdt:.3g} must stay below {BOLTZMANN_MAX_GAMMA_DT}"))

    streamed = stream(w, op.params.M, dt)
    gain = streamed.w @ op.gain_matrix(w.p_grid)
    return Ok(streamed.with_w(streamed.w + gdt * (gain - streamed.w)))


def fokker_planck_rhs(
    w: WignerFunction,
    params: PhysicalParams,
    derivatives: Derivatives = "centered",
    streaming: bool = True,
    ) -> RealArray:
    """
    -(P/M) dW/dX + 2 gamma d(P W)/dP + 2 M gamma kT d^2W/dP^2

    The P axis uses centered differences of the flux P W or spectral derivatives; the X
    derivative is always spectral.
    """
    P = w.p_grid.points
    dP = w.p_grid.dx
    flux = w.w * P[None, :]

    if derivatives == "centered":
        dflux = (np.roll(flux, -1, axis=1) - np.roll(flux, 1, axis=1)) / (2 * dP)
        lap = (np.roll(w.w, -1, axis=1) - 2 * w.w + np.roll(w.w, 1, axis=1)) / dP**2
    else:
        dflux = _spectral_derivative_p(flux, w.p_grid, 1)
        lap = _spectral_derivative_p(w.w, w.p_grid, 2)

    out = 2 * params.gamma * dflux + 2 * params.M * params.gamma * params.kT * lap

    if streaming:
        k = derivative_multiplier(w.q_grid)
        dx_w = scipy.fft.ifft(1j * k[:, None] * scipy.fft.fft(w.w, axis=0), axis=0).real
        out = out - P[None, :] / params.M * dx_w

    return np.asarray(out, dtype=np.float64)


def fokker_planck_stability(w: WignerFunction, params: PhysicalParams, dt: float,
                            scheme: Scheme, derivatives: Derivatives) -> Optional[CFLViolation]:
    """
    Returns the violated stability condition of a step, if any
    """
    dP = w.p_grid.dx
    pmax = float(np.max(np.abs(w.p_grid.points)))
    diffusion = 2 * params.M * params.gamma * params.kT

    if scheme == "euler" and derivatives == "centered":
        if (number := diffusion * dt / dP**2) > 0.5:
            return CFLViolation(f"diffusion number {number:.3g} exceeds 1/2")
        if (courant := 2 * params.gamma * pmax * dt / dP) > 1:
            return CFLViolation(f"drift Courant number {courant:.3g} exceeds 1")
        return None

    kp = math.pi / dP
    radius = 2 * params.gamma * (1 + pmax * kp) + diffusion * kp**2
    if scheme == "rk4":
        radius += pmax / params.M * math.pi / w.q_grid.dx
        limit = RK4_STABILITY_RADIUS
    else:
        limit = 2.0

    if radius * dt > limit:
        return CFLViolation(
            f"dt = {dt:.3g} exceeds the {scheme} stability bound {limit / radius:.3g}"
            )

    return None


def fokker_planck_step(
    w: WignerFunction,
    params: PhysicalParams,
    dt: float,
    scheme: Scheme = "euler",
    derivatives: Derivatives = "centered",
    ) -> Result[WignerFunction, CFLViolation]:
    """
    One step of the Fokker-Planck equation

    euler streams exactly and takes an explicit step of the drift and diffusion; rk4
    integrates the full generator, streaming included
    """
    if (err := fokker_planck_stability(w, params, dt, scheme, derivatives)) is not None:
        return Err(err)

    if scheme == "euler":
        streamed = stream(w, params.M, dt)
        rhs = fokker_planck_rhs(streamed, params, derivatives, streaming=False)
        return Ok(streamed.with_w(streamed.w + dt * rhs))

    def f(x: RealArray) -> RealArray:
        return fokker_planck_rhs(w.with_w(x), params, derivatives)

    return Ok(w.with_w(rk4_step(f, w.w, dt)))


_GRID = Grid1D.centered(16.0, 256)


@test
def test_gaussian_wigner_closed_form() -> None:
    """
    Tests the transform of a Gaussian against its closed form and its marginals
    """
    sigma = 1.0
    rho = gaussian_state(_GRID, width=sigma)
    w = Ok.unwrap(wigner_transform(rho))

    X = w.q_grid.points[:, None]
    P = w.p_grid.points[None, :]
    expected = np.exp(-X**2 / (2 * sigma**2) - 2 * sigma**2 * P**2) / math.pi

    assert np.max(np.abs(w.w - expected)) < 1e-8
    assert np.min(w.w) >= -1e-12
    assert np.max(np.abs(position_marginal(w) - np.diag(rho.rho).real)) < 1e-12
    assert np.max(np.abs(momentum_marginal(w) - momentum_distribution(rho))) < 1e-12
    assert_close(w.norm, 1.0, abs_=1e-10)


@test
def test_cat_state_negative_midpoint() -> None:
    """
    Tests interference fringes of a cat state against quadrature of the defining integral
    """
    d, sigma = 3.0, 0.5
    rho = superposition_state(_GRID, [-d, d], sigma)
    w = Ok.unwrap(wigner_transform(rho))
    mid = int(np.argmin(np.abs(w.q_grid.points)))

    assert w.q_grid.points[mid] == 0.0
    assert np.min(w.w[mid]) < -0.1

    norm2 = 1 / (2 * math.sqrt(2 * math.pi) * sigma * (1 + math.exp(-d**2 / (2 * sigma**2))))

    def psi2(half: float) -> float:
        return norm2 * (math.exp(-(half - d)**2 / (4 * sigma**2)) +
                        math.exp(-(half + d)**2 / (4 * sigma**2)))**2

    for k in range(w.p_grid.n // 2 - 12, w.p_grid.n // 2 + 12, 3):
        P = float(w.p_grid.points[k])
        oracle = Ok.unwrap(
            integrate(lambda xi, P=P: math.cos(P * xi) * psi2(xi / 2), 0.0, 20.0, limit=400)
            )[0] / math.pi
        assert_close(w.w[mid, k], oracle, abs_=1e-8, what=f"P={P}")


@test
def test_transform_round_trip() -> None:
    """
    Tests the inverse on random Hermitian matrices, closed form Gaussians and zero
    """
    rng = np.random.default_rng(1)
    grid = Grid1D.centered(4.0, 32)

    for hbar in (1.0, 0.37):
        a = rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32))
        rho = DensityMatrix(grid, a + a.conj().T)
        w = Ok.unwrap(wigner_transform(rho, hbar))
        assert not np.iscomplexobj(w.w)
        assert np.max(np.abs(inverse_wigner_transform(w).rho - rho.rho)) < 1e-10
        assert np.max(np.abs(position_marginal(w) - np.diag(rho.rho).real)) < 1e-8
        assert np.max(np.abs(momentum_marginal(w) - momentum_distribution(rho, hbar))) < 1e-8

    p_grid = momentum_grid(_GRID, 1.0)
    X = _GRID.points[:, None]
    P = p_grid.points[None, :]
    product = WignerFunction(_GRID, p_grid, np.exp(-X**2 / 2 - 2 * P**2) / math.pi)
    assert np.max(np.abs(inverse_wigner_transform(product).rho - gaussian_state(_GRID).rho)) < 1e-8

    zero = WignerFunction(grid, momentum_grid(grid, 1.0), np.zeros((32, 32)))
    assert not np.any(inverse_wigner_transform(zero).rho)

    skew = DensityMatrix(grid, np.triu(np.ones((32, 32))))
    assert isinstance(Err.get(wigner_transform(skew)), NonHermitian)


@test
def test_pure_state_with_momentum() -> None:
    """
    Tests a moving packet lands on its mean momentum
    """
    rho = wavefunction_density(_GRID, np.exp(-_GRID.points**2 / 4 + 2j * _GRID.points))
    w = Ok.unwrap(wigner_transform(rho))
    assert_close(momentum_moments(w)[0], 2.0, abs_=1e-10)


_LIGHT = Ok.unwrap(PhysicalParams.create(M=1.0, m=0.01, T=1.0, Gamma=1.0))
_Q = Grid1D.centered(4.0, 8)
_P = Grid1D.centered(12.0, 128)


@test
def test_boltzmann_operator_invariants() -> None:
    """
    Tests quadrature normalization and rejection of comparable masses
    """
    op = Ok.unwrap(BoltzmannOperator.create(_LIGHT))
    assert_close(float(op.weights.sum()), 1.0, abs_=1e-10)
    assert_close(float(np.sum(op.weights * op.nodes**2)), op.env.p2_mean, rel=1e-12)

    equal = Ok.unwrap(PhysicalParams.create(M=1.0, m=1.0, T=1.0, Gamma=1.0))
    assert Err.is_instance(BoltzmannOperator.create(equal))

    too_long = boltzmann_step(thermal_wigner(_Q, _P, _LIGHT), op, 0.2)
    assert isinstance(Err.get(too_long), CFLViolation)


@test
def test_boltzmann_step_homogeneous_and_conserving() -> None:
    """
    Tests Gamma = 0 leaves a homogeneous state alone and that collisions conserve norm
    """
    w = displaced_packet_wigner(_Q, _P, 5.0, 1.0)

    frozen = Ok.unwrap(BoltzmannOperator.create(_LIGHT.replace(Gamma=0.0)))
    assert np.allclose(Ok.unwrap(boltzmann_step(w, frozen, 0.05)).w, w.w, rtol=0, atol=1e-14)

    for mode, tol in (("spectral", 1e-8), ("linear", 1e-3)):
        op = Ok.unwrap(BoltzmannOperator.create(_LIGHT, interpolation=mode))
        out = Ok.unwrap(boltzmann_step(w, op, 0.05))
        assert_close(out.norm, w.norm, abs_=tol, what=mode)


@test
def test_boltzmann_mean_momentum_rate() -> None:
    """
    Tests the mean momentum decays at Gamma (1 - a), close to 2 gamma
    """
    op = Ok.unwrap(BoltzmannOperator.create(_LIGHT))
    w = displaced_packet_wigner(_Q, _P, 5.0, 1.0)
    dt, steps = 0.05, 200

    for _ in range(steps):
        w = Ok.unwrap(boltzmann_step(w, op, dt))

    rate = -math.log(wigner_moments(w).mean_P / 5.0) / (dt * steps)
    assert_close(rate, boltzmann_rate(op), rel=0.01)
    assert_close(rate, 2 * _LIGHT.gamma, rel=0.02)


@test
def test_fokker_planck_moments_exact_per_step() -> None:
    """
    Tests one Euler step against the discrete moment equations and norm conservation
    """
    params = _LIGHT.replace(Gamma=5.0)
    w = displaced_packet_wigner(_Q, _P, 3.0, 0.7)
    before = wigner_moments(w)
    dt = 0.05

    after = wigner_moments(Ok.unwrap(fokker_planck_step(w, params, dt)))
    g = params.gamma

    assert_close(after.norm, before.norm, abs_=1e-8)
    assert_close(after.mean_P, before.mean_P * (1 - 2 * g * dt), rel=1e-6)

    p2_before = before.var_P + before.mean_P**2
    p2_after = after.var_P + after.mean_P**2
    expected = p2_before + dt * (-4 * g * p2_before + 4 * params.M * g * params.kT)
    assert_close(p2_after, expected, rel=1e-6)


@test
def test_fokker_planck_stationary_residual() -> None:
    """
    Tests the Maxwell-Boltzmann residual falls as dP^2 and that the CFL bound is enforced
    """
    residuals = []
    for n in (128, 256):
        p_grid = Grid1D.centered(8.0, n)
        w = thermal_wigner(_Q, p_grid, _LIGHT)
        residuals.append(float(np.max(np.abs(fokker_planck_rhs(w, _LIGHT)))))

    assert 3.5 < residuals[0] / residuals[1] < 4.5

    w = thermal_wigner(_Q, _P, _LIGHT)
    assert Err.is_instance(fokker_planck_step(w, _LIGHT, 100.0))


@test
def test_fokker_planck_relaxes_monotonically() -> None:
    """
    Tests the L2 distance to Maxwell-Boltzmann shrinks step by step
    """
    params = _LIGHT.replace(Gamma=10.0)
    w = displaced_packet_wigner(_Q, _P, 4.0, 1.0)
    target = momentum_marginal(thermal_wigner(_Q, _P, params))

    last = math.inf
    for _ in range(300):
        w = Ok.unwrap(fokker_planck_step(w, params, 0.075))
        dist = float(np.linalg.norm(momentum_marginal(w) - target))
        assert dist < last
        last = dist


@test
def test_boltzmann_and_fokker_planck_second_moments() -> None:
    """
    Tests <P^2> under the collision operator tracks the Fokker-Planck one to O(m/M) over five
    relaxation times
    """
    params = _LIGHT.replace(Gamma=10.0)
    op = Ok.unwrap(BoltzmannOperator.create(params))
    collisions = diffusion = displaced_packet_wigner(_Q, _P, 3.0, 1.0)

    def second_moment(w: WignerFunction) -> float:
        moments = wigner_moments(w)
        return moments.var_P + moments.mean_P**2

    gaps: List[float] = []
    for _ in range(round(5 / params.gamma)):
        for _ in range(200):
            collisions = Ok.unwrap(boltzmann_step(collisions, op, 0.005))
        for _ in range(40):
            diffusion = Ok.unwrap(fokker_planck_step(diffusion, params, 0.025))
        gaps.append(abs(second_moment(collisions) / second_moment(diffusion) - 1))

    assert max(gaps) < 4 * params.m / params.M, max(gaps)
    assert max(gaps) > gaps[-1]
    assert_close(second_moment(collisions), params.M * params.kT, rel=0.01)
