"""
Grid plumbing, state builders and the diagnostics shared by every evolver
"""

import os
import math
import logging
from typing import Sequence, Final, Optional, Callable, Tuple, Any, TypeVar

import numpy as np
from numpy.typing import NDArray
import scipy.fft
import scipy.linalg
import scipy.integrate

from ._result import Result, Ok, Err
from ._types import (
    Grid1D, DensityMatrix, PhysicalParams, RealArray, ComplexArray, NonHermitian,
    NonHermitianTrace, LeakageError, QuadratureFailure, WignerFunction
    )
from .testing import test, assert_close

logger = logging.getLogger(__name__)

ArrayT = TypeVar("ArrayT", RealArray, ComplexArray)

HERMITIAN_ATOL: Final = 1e-10
TRACE_IMAG_ATOL: Final = 1e-10
LEAKAGE_THRESHOLD: Final = 1e-6
EDGE_FRACTION: Final = 0.1
# radius of the RK4 stability region along both axes, slightly conservative
RK4_STABILITY_RADIUS: Final = 2.8


def integrate(func: Callable[..., float], a: float, b: float,
              **kwargs: Any) -> Result[Tuple[float, float], QuadratureFailure]:
    """
    scipy.integrate.quad returning (value, error estimate), or the quadpack message as a
    QuadratureFailure when the requested tolerance was not met
    """
    out = scipy.integrate.quad(func, a, b, full_output=1, **kwargs)

    # quad only appends a message (and for QAWF an explanation) when ier != 0
    if len(out) > 3:
        return Err(QuadratureFailure(f"quad on [{a}, {b}]: {out[3]}"))

    value, error = float(out[0]), float(out[1])
    logger.debug("quad on [%s, %s] = %.12g +- %.2e", a, b, value, error)
    return Ok((value, error))


def worker_count() -> int:
    """
    Number of workers for internal parallelism, capped by the QBM_THREADS variable

    0, unset or unparsable values mean one worker per cpu
    """
    try:
        requested = int(os.environ.get("QBM_THREADS", "0"))
    except ValueError:
        requested = 0

    if requested <= 0:
        return os.cpu_count() or 1

    return requested


def rk4_step(f: Callable[[ArrayT], ArrayT], y: ArrayT, dt: float) -> ArrayT:
    """
    Classical fourth order Runge-Kutta step of dy/dt = f(y)
    """
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _index_separation(n: int) -> NDArray[np.int64]:
    i = np.arange(n, dtype=np.int64)
    return np.mod(i[:, None] - i[None, :] + n // 2, n) - n // 2


def separation(grid: Grid1D) -> RealArray:
    """
    Minimum image separations x_i - x_j, wrapped into [-L/2, L/2)
    """
    return _index_separation(grid.n) * grid.dx


def odd_separation(grid: Grid1D) -> RealArray:
    """
    separation() with the unpaired -L/2 entries zeroed, so x - y stays antisymmetric
    """
    idx = _index_separation(grid.n)
    return np.where(idx == -(grid.n // 2), 0, idx) * grid.dx


def derivative_multiplier(grid: Grid1D) -> RealArray:
    """
    Spectral first derivative multiplier k, with the unpaired Nyquist mode dropped
    """
    k = grid.wavenumbers.copy()
    k[grid.n // 2] = 0.0
    return k


def spectral_matrix(grid: Grid1D, multiplier: ComplexArray) -> ComplexArray:
    """
    Dense matrix of the operator diagonal in Fourier space with the given multiplier
    """
    eye = np.eye(grid.n, dtype=np.complex128)
    return np.asarray(
        scipy.fft.ifft(multiplier[:, None] * scipy.fft.fft(eye, axis=0), axis=0),
        dtype=np.complex128
        )


def momentum_operator(grid: Grid1D, hbar: float) -> ComplexArray:
    """
    Hermitian momentum operator -i hbar d/dx on the periodic grid
    """
    return spectral_matrix(grid, (hbar * derivative_multiplier(grid)).astype(np.complex128))


def position_operator(grid: Grid1D) -> ComplexArray:
    """
    Diagonal position operator
    """
    return np.diag(grid.points).astype(np.complex128)


def hermiticity_error(rho: DensityMatrix) -> float:
    """
    Largest entry of |rho - rho^dagger|
    """
    return float(np.max(np.abs(rho.rho - rho.rho.conj().T)))


def trace(rho: DensityMatrix) -> Result[float, NonHermitianTrace]:
    """
    dx * sum_i rho[i, i]
    """
    total = complex(np.trace(rho.rho)) * rho.grid.dx

    if abs(total.imag) >= TRACE_IMAG_ATOL:
        return Err(NonHermitianTrace(f"trace has imaginary part {total.imag:.3e}"))

    return Ok(total.real)


def min_eigenvalue(rho: DensityMatrix,
                   atol: float = HERMITIAN_ATOL) -> Result[float, NonHermitian]:
    """
    Smallest eigenvalue of the operator dx * rho
    """
    if (err := hermiticity_error(rho)) > atol:
        return Err(NonHermitian(f"density matrix off Hermitian by {err:.3e}"))

    herm = 0.5 * (rho.rho + rho.rho.conj().T) * rho.grid.dx
    values = scipy.linalg.eigvalsh(herm, subset_by_index=[0, 0])
    return Ok(float(values[0]))


def purity(rho: DensityMatrix) -> float:
    """
    Tr(rho^2) = dx^2 sum_ij |rho_ij|^2
    """
    return float(np.sum(np.abs(rho.rho)**2) * rho.grid.dx**2)


def edge_probability(rho: DensityMatrix) -> float:
    """
    Probability held by the outer 10% of grid points at each end
    """
    n = rho.grid.n
    band = math.ceil(EDGE_FRACTION * n)
    diag = np.real(np.diag(rho.rho))
    return float((diag[:band].sum() + diag[n - band:].sum()) * rho.grid.dx)


def check_leakage(rho: DensityMatrix,
                  threshold: float = LEAKAGE_THRESHOLD) -> Result[DensityMatrix, LeakageError]:
    """
    Returns rho unchanged, or a LeakageError once the edge bands hold more than threshold
    """
    if (edge := edge_probability(rho)) > threshold:
        return Err(LeakageError(f"{edge:.3e} of the probability sits at the grid edges"))
    return Ok(rho)


def wavefunction_density(grid: Grid1D, psi: ComplexArray) -> DensityMatrix:
    """
    Pure state |psi><psi|, normalized so that dx * sum |psi|^2 = 1
    """
    psi = np.asarray(psi, dtype=np.complex128)
    psi = psi / math.sqrt(float(np.sum(np.abs(psi)**2)) * grid.dx)
    return DensityMatrix(grid, np.outer(psi, psi.conj()))


def gaussian_wavefunction(
    grid: Grid1D,
    center: float = 0.0,
    width: float = 1.0,
    momentum: float = 0.0,
    hbar: float = 1.0,
    chirp: float = 0.0,
    ) -> ComplexArray:
    """
    Unnormalized Gaussian wave packet with position spread width

    chirp adds a phase exp(i chirp (x - center)^2 / 2 hbar), correlating x and p
    """
    dx = grid.points - center
    return np.exp(-dx**2 / (4 * width**2) + 1j * momentum * grid.points / hbar +
                  1j * chirp * dx**2 / (2 * hbar))


def gaussian_state(
    grid: Grid1D,
    center: float = 0.0,
    width: float = 1.0,
    momentum: float = 0.0,
    hbar: float = 1.0,
    chirp: float = 0.0,
    ) -> DensityMatrix:
    """
    Pure Gaussian state with position variance width^2
    """
    return wavefunction_density(
        grid, gaussian_wavefunction(grid, center, width, momentum, hbar, chirp)
        )


def superposition_state(grid: Grid1D,
                        centers: Sequence[float],
                        width: float = 1.0,
                        hbar: float = 1.0) -> DensityMatrix:
    """
    Equal weight coherent superposition of Gaussian packets (a cat state for two centers)
    """
    psi = sum((gaussian_wavefunction(grid, c, width, 0.0, hbar) for c in centers),
              np.zeros(grid.n, dtype=np.complex128))
    return wavefunction_density(grid, psi)


def squeezed_state(grid: Grid1D, params: PhysicalParams, squeeze: float,
                   center: float = 0.0) -> DensityMatrix:
    """
    Minimum uncertainty state whose momentum variance is M kT exp(2 squeeze)

    squeeze > 0 narrows the packet below the thermal minimum uncertainty width
    hbar / 2 sqrt(M kT)
    """
    thermal_width = params.hbar / (2 * math.sqrt(params.M * params.kT))
    return gaussian_state(grid, center, thermal_width * math.exp(-squeeze), hbar=params.hbar)


def mixture(states: Sequence[DensityMatrix],
            weights: Optional[Sequence[float]] = None) -> DensityMatrix:
    """
    Convex combination of density matrices on a common grid
    """
    if weights is None:
        weights = [1.0 / len(states)] * len(states)
    rho = sum((w * s.rho for w, s in zip(weights, states)),
              np.zeros_like(states[0].rho))
    return DensityMatrix(states[0].grid, rho)


def position_variance(rho: DensityMatrix) -> float:
    """
    Variance of the position distribution rho(x, x)
    """
    x = rho.grid.points
    prob = np.real(np.diag(rho.rho)) * rho.grid.dx
    norm = prob.sum()
    mean = float(np.sum(x * prob) / norm)
    return float(np.sum((x - mean)**2 * prob) / norm)


def _normalized(q_grid: Grid1D, p_grid: Grid1D, w: RealArray, hbar: float) -> WignerFunction:
    return WignerFunction(q_grid, p_grid, w / (w.sum() * q_grid.dx * p_grid.dx), hbar)


def displaced_packet_wigner(q_grid: Grid1D, p_grid: Grid1D, P0: float, width: float,
                            hbar: float = 1.0) -> WignerFunction:
    """
    Spatially uniform phase space density, Gaussian in P around P0 with spread width
    """
    profile = np.exp(-(p_grid.points - P0)**2 / (2 * width**2))
    return _normalized(q_grid, p_grid, np.tile(profile, (q_grid.n, 1)), hbar)


def thermal_wigner(q_grid: Grid1D, p_grid: Grid1D, params: PhysicalParams) -> WignerFunction:
    """
    Spatially uniform Maxwell-Boltzmann state with <P^2> = M kT
    """
    return displaced_packet_wigner(
        q_grid, p_grid, 0.0, math.sqrt(params.M * params.kT), params.hbar
        )


def momentum_marginal(w: WignerFunction) -> RealArray:
    """
    Momentum density dX sum_j W[j, :]
    """
    return np.asarray(w.w.sum(axis=0) * w.q_grid.dx, dtype=np.float64)


def position_marginal(w: WignerFunction) -> RealArray:
    """
    Position density dP sum_k W[:, k]
    """
    return np.asarray(w.w.sum(axis=1) * w.p_grid.dx, dtype=np.float64)


def _moments(points: RealArray, density: RealArray, step: float) -> Tuple[float, float]:
    prob = density * step
    norm = float(prob.sum())
    mean = float(np.sum(points * prob)) / norm
    return mean, float(np.sum((points - mean)**2 * prob)) / norm


def momentum_moments(w: WignerFunction) -> Tuple[float, float]:
    """
    Mean and variance of P under W, relative to its norm
    """
    return _moments(w.p_grid.points, momentum_marginal(w), w.p_grid.dx)


def position_moments(w: WignerFunction) -> Tuple[float, float]:
    """
    Mean and variance of X under W, relative to its norm
    """
    return _moments(w.q_grid.points, position_marginal(w), w.q_grid.dx)


_GRID = Grid1D.centered(16.0, 128)


@test
def test_trace_normalized_and_linear() -> None:
    """
    Tests trace of normalized, scaled and zero states
    """
    rho = gaussian_state(_GRID, width=1.5)
    assert_close(Ok.unwrap(trace(rho)), 1.0, abs_=1e-10)
    assert_close(Ok.unwrap(trace(rho.scaled(2.0))), 2.0, abs_=1e-10)
    assert Ok.unwrap(trace(rho.scaled(0.0))) == 0.0


@test
def test_trace_rejects_imaginary() -> None:
    """
    Tests that a complex diagonal is reported
    """
    rho = gaussian_state(_GRID).scaled(1j)
    assert isinstance(Err.get(trace(rho)), NonHermitianTrace)


@test
def test_min_eigenvalue_pure_and_mixed() -> None:
    """
    Tests min_eigenvalue of pure and maximally mixed states
    """
    assert Ok.unwrap(min_eigenvalue(gaussian_state(_GRID))) >= -1e-10

    mixed = DensityMatrix(_GRID, np.eye(_GRID.n) / (_GRID.n * _GRID.dx))
    assert_close(Ok.unwrap(min_eigenvalue(mixed)), 1.0 / _GRID.n, rel=1e-12)

    skew = DensityMatrix(_GRID, np.triu(np.ones((_GRID.n, _GRID.n))))
    assert isinstance(Err.get(min_eigenvalue(skew)), NonHermitian)


@test
def test_purity() -> None:
    """
    Tests purity of a pure state and of an equal mixture of orthogonal states
    """
    assert_close(purity(gaussian_state(_GRID)), 1.0, abs_=1e-8)

    left = gaussian_state(_GRID, center=-6.0, width=0.7)
    right = gaussian_state(_GRID, center=6.0, width=0.7)
    assert_close(purity(mixture([left, right])), 0.5, abs_=1e-8)


@test
def test_leakage_monitor() -> None:
    """
    Tests that probability near the edges is reported
    """
    assert Ok.is_instance(check_leakage(gaussian_state(_GRID, width=1.0)))
    assert Err.is_instance(check_leakage(gaussian_state(_GRID, center=14.0, width=1.0)))


@test
def test_momentum_operator_hermitian() -> None:
    """
    Tests the spectral momentum operator is Hermitian and differentiates plane waves
    """
    p = momentum_operator(_GRID, 1.0)
    assert np.max(np.abs(p - p.conj().T)) < 1e-12

    k = _GRID.wavenumbers[3]
    wave = np.exp(1j * k * _GRID.points)
    assert np.max(np.abs(p @ wave - k * wave)) < 1e-10


@test
def test_separation_antisymmetric() -> None:
    """
    Tests the minimum image separations
    """
    xi = odd_separation(_GRID)
    assert np.max(np.abs(xi + xi.T)) == 0.0
    assert np.max(np.abs(separation(_GRID))) <= _GRID.length / 2 * (1 + 1e-14)


@test
def test_constructors_reject_invalid() -> None:
    """
    Fuzzes constructor inputs around the documented invariants
    """
    rng = np.random.default_rng(7)

    for _ in range(200):
        M, m, T = rng.uniform(-1, 2, size=3)
        result = PhysicalParams.create(M=M, m=m, T=T, Gamma=abs(float(rng.normal())))
        assert Ok.is_instance(result) == (M > 0 and m > 0 and T > 0)

    assert Err.is_instance(PhysicalParams.create(M=1, m=0.1, T=1, Gamma=1.0, gamma=0.2))
    assert Ok.is_instance(PhysicalParams.create(M=1, m=0.1, T=1, Gamma=1.0, gamma=0.1))

    for n in (4, 12, 100, 0):
        assert Err.is_instance(Grid1D.create(0.0, 1.0, n))
    assert Err.is_instance(Grid1D.create(1.0, 1.0, 16))
    assert Ok.is_instance(Grid1D.create(-1.0, 1.0, 16))


@test
def test_wigner_builders_normalized() -> None:
    """
    Tests thermal and displaced packets are normalized with the requested moments
    """
    params = Ok.unwrap(PhysicalParams.create(M=1.0, m=0.01, T=1.0, Gamma=1.0))
    q_grid = Grid1D.centered(4.0, 8)
    p_grid = Grid1D.centered(10.0, 128)

    thermal = thermal_wigner(q_grid, p_grid, params)
    assert_close(thermal.norm, 1.0, abs_=1e-12)
    mean, var = momentum_moments(thermal)
    assert_close(mean, 0.0, abs_=1e-12)
    assert_close(var, params.M * params.kT, rel=1e-10)

    packet = displaced_packet_wigner(q_grid, p_grid, 5.0, 0.5)
    mean, var = momentum_moments(packet)
    assert_close(mean, 5.0, rel=1e-10)
    assert_close(var, 0.25, rel=1e-10)
    assert_close(position_moments(packet)[0], -0.5 * q_grid.dx, abs_=1e-12)
