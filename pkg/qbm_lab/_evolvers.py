"""
Density matrix master equation integrators: free decoherence, the Caldeira-Leggett
equation and the Lindblad equation, with the positivity and trace diagnostics that compare
them
"""

import math
import logging
from dataclasses import dataclass, field
from typing import (
    Callable, List, Optional, Sequence, Tuple, Type, Union, Literal, Final, Iterable
    )

import numpy as np
import scipy.fft

from ._result import Result, Ok, Err
from ._types import (
    Grid1D, DensityMatrix, PhysicalParams, ComplexArray, InvalidParams, LeakageError,
    StepTooLarge, QuadratureFailure
    )
from ._core import (
    derivative_multiplier, spectral_matrix, momentum_operator, position_operator,
    separation, odd_separation, check_leakage, trace, purity, min_eigenvalue,
    hermiticity_error, rk4_step, integrate, gaussian_state, superposition_state,
    squeezed_state, position_variance, RK4_STABILITY_RADIUS
    )
from ._output import write_csv, PathLike
from .testing import test, assert_close

logger = logging.getLogger(__name__)

Model = Literal["free-decoherence", "caldeira-leggett", "lindblad"]
EvolverScheme = Literal["split-step", "rk4"]
Normalization = Literal["published", "cl-matched"]
Observer = Callable[[float, DensityMatrix], None]

# Frobenius norm of dx * rho above which an RK4 run counts as diverged
DIVERGENCE_NORM: Final = 1e3


def _steps(t: float, dt: float) -> Result[Tuple[int, float], InvalidParams]:
    if not (math.isfinite(dt) and dt > 0):
        return Err(InvalidParams(f"dt must be finite and > 0, got {dt!r}"))
    if not (math.isfinite(t) and t >= 0):
        return Err(InvalidParams(f"t must be finite and >= 0, got {t!r}"))

    n = max(0, math.ceil(t / dt - 1e-9))
    return Ok((n, t / n if n else 0.0))


def _apply_spectral_both(rho: ComplexArray, mult: ComplexArray) -> ComplexArray:
    # U rho U^dagger with U diagonal in Fourier space
    left = scipy.fft.ifft(mult[:, None] * scipy.fft.fft(rho, axis=0), axis=0)
    return np.asarray(
        scipy.fft.fft(np.conj(mult)[None, :] * scipy.fft.ifft(left, axis=1), axis=1),
        dtype=np.complex128
        )


def evolve_free_decoherence(
    rho0: DensityMatrix,
    D: float,
    t: float,
    dt: float,
    *,
    M: float = 1.0,
    hbar: float = 1.0,
    scheme: EvolverScheme = "split-step",
    observer: Optional[Observer] = None,
    ) -> Result[DensityMatrix, Union[InvalidParams, LeakageError, StepTooLarge]]:
    """
    Free particle with localization rate D: d rho / dt = -i/hbar [p^2/2M, rho] - D (x-y)^2 rho

    split-step is a Strang splitting of the exact kinetic propagator (spectral, per index)
    around the exact decoherence factor exp(-D (x-y)^2 dt)
    """
    if not (math.isfinite(D) and D >= 0):
        return Err(InvalidParams(f"D must be finite and >= 0, got {D!r}"))
    if not M > 0:
        return Err(InvalidParams(f"M must be > 0, got {M!r}"))
    if Err.is_instance(steps := _steps(t, dt)):
        return steps
    n_steps, h = Ok.unwrap(steps)

    grid = rho0.grid
    xi2 = separation(grid)**2

    if scheme == "rk4":
        generator = _free_decoherence_generator(grid, D, M, hbar)
        return _integrate(generator, rho0, n_steps, h, _bound(grid, M, hbar, 0.0, D), observer)

    k = derivative_multiplier(grid)
    half_kinetic = np.exp(-1j * hbar * k**2 / (2 * M) * h / 2)
    decay = np.exp(-D * xi2 * h)

    rho = rho0.rho
    for i in range(n_steps):
        rho = _apply_spectral_both(rho, half_kinetic)
        rho = rho * decay
        rho = _apply_spectral_both(rho, half_kinetic)

        state = rho0.with_rho(rho)
        if Err.is_instance(leak := check_leakage(state)):
            return leak
        if observer is not None:
            observer((i + 1) * h, state)

    return Ok(rho0.with_rho(rho))


def free_decoherence_offdiagonal_exact(
    X: float,
    xi: float,
    t: float,
    *,
    separation_d: float,
    width: float,
    D: float,
    M: float = 1.0,
    hbar: float = 1.0,
    ) -> Result[complex, QuadratureFailure]:
    """
    rho(X + xi/2, X - xi/2, t) of the free decoherence equation for the equal superposition
    of two Gaussians of spread width centered at +-separation_d/2

    In the Fourier variable kappa of the center coordinate X the equation is first order in
    xi, so it is solved along its characteristics and kappa is integrated by quadrature.
    """
    half = separation_d / 2
    overlap = math.exp(-separation_d**2 / (8 * width**2))
    norm2 = 1 / (2 * math.sqrt(2 * math.pi) * width * (1 + overlap))
    v = hbar / M

    def rho_hat0(kappa: float, s: float) -> complex:
        total = 0j
        for c1 in (-half, half):
            for c2 in (-half, half):
                xc, sc = (c1 + c2) / 2, c1 - c2
                total += np.exp(-1j * kappa * xc - kappa**2 * width**2 / 2 -
                                (s - sc)**2 / (8 * width**2))
        return complex(norm2 * math.sqrt(2 * math.pi) * width * total)

    def integrand(kappa: float) -> complex:
        damping = D * (xi**2 * t - xi * v * kappa * t**2 + v**2 * kappa**2 * t**3 / 3)
        shifted = rho_hat0(kappa, xi - v * kappa * t)
        return np.exp(1j * kappa * X - damping) * shifted / (2 * math.pi)

    cutoff = 12 / width
    re = integrate(lambda k: integrand(k).real, -cutoff, cutoff, epsabs=1e-12, epsrel=1e-10,
                   limit=400)
    im = integrate(lambda k: integrand(k).imag, -cutoff, cutoff, epsabs=1e-12, epsrel=1e-10,
                   limit=400)

    if Err.is_instance(re):
        return re
    if Err.is_instance(im):
        return im

    return Ok(complex(Ok.unwrap(re)[0], Ok.unwrap(im)[0]))


def _bound(grid: Grid1D, M: float, hbar: float, gamma: float, D: float) -> float:
    kmax = float(np.max(np.abs(derivative_multiplier(grid))))
    half = grid.length / 2
    radius = hbar * kmax**2 / (2 * M) + 2 * gamma * half * kmax + D * half**2
    return RK4_STABILITY_RADIUS / radius if radius > 0 else math.inf


def rk4_stability_bound(grid: Grid1D, params: PhysicalParams) -> float:
    """
    Largest dt for which RK4 on the Caldeira-Leggett generator stays stable, from a bound on
    the spectral radius of each of its terms
    """
    return _bound(
        grid, params.M, params.hbar, params.gamma,
        2 * params.M * params.gamma * params.kT / params.hbar**2
        )


def _free_decoherence_generator(grid: Grid1D, D: float, M: float,
                                hbar: float) -> Callable[[ComplexArray], ComplexArray]:
    p = momentum_operator(grid, hbar)
    kinetic = p @ p / (2 * M)
    xi2 = separation(grid)**2

    def generator(rho: ComplexArray) -> ComplexArray:
        return -1j / hbar * (kinetic @ rho - rho @ kinetic) - D * xi2 * rho

    return generator


def caldeira_leggett_generator(grid: Grid1D,
                               params: PhysicalParams) -> Callable[[ComplexArray], ComplexArray]:
    """
    rho -> -i/hbar [p^2/2M, rho] - gamma (x-y)(d_x - d_y) rho - (2 M gamma kT / hbar^2)(x-y)^2 rho
    """
    hbar = params.hbar
    p = momentum_operator(grid, hbar)
    kinetic = p @ p / (2 * params.M)
    deriv = spectral_matrix(grid, (1j * derivative_multiplier(grid)).astype(np.complex128))
    xi = odd_separation(grid)
    xi2 = separation(grid)**2
    diffusion = 2 * params.M * params.gamma * params.kT / hbar**2

    def generator(rho: ComplexArray) -> ComplexArray:
        return (-1j / hbar * (kinetic @ rho - rho @ kinetic) - params.gamma * xi *
                (deriv @ rho + rho @ deriv) - diffusion * xi2 * rho)

    return generator


def caldeira_leggett_rhs(rho: DensityMatrix, params: PhysicalParams) -> ComplexArray:
    """
    Time derivative of rho under the Caldeira-Leggett equation
    """
    return caldeira_leggett_generator(rho.grid, params)(rho.rho)


def _integrate(
    generator: Callable[[ComplexArray], ComplexArray],
    rho0: DensityMatrix,
    n_steps: int,
    h: float,
    bound: float,
    observer: Optional[Observer],
    ) -> Result[DensityMatrix, StepTooLarge]:
    if h > bound:
        return Err(StepTooLarge(f"dt = {h:.4g} exceeds the RK4 stability bound {bound:.4g}"))

    dx = rho0.grid.dx
    rho = rho0.rho
    for i in range(n_steps):
        rho = rk4_step(generator, rho, h)

        size = float(np.linalg.norm(rho)) * dx
        if not math.isfinite(size) or size > DIVERGENCE_NORM:
            return Err(StepTooLarge(f"RK4 diverged at step {i + 1} (|rho| = {size:.3g})"))

        if observer is not None:
            observer((i + 1) * h, rho0.with_rho(rho))

        logger.debug("rk4 step %d: |rho| = %.6g", i + 1, size)

    return Ok(rho0.with_rho(rho))


def evolve_caldeira_leggett(
    rho0: DensityMatrix,
    params: PhysicalParams,
    t: float,
    dt: float,
    observer: Optional[Observer] = None,
    ) -> Result[DensityMatrix, Union[InvalidParams, StepTooLarge]]:
    """
    RK4 integration of the Caldeira-Leggett equation; positivity is not preserved
    """
    if Err.is_instance(steps := _steps(t, dt)):
        return steps
    n_steps, h = Ok.unwrap(steps)

    return _integrate(
        caldeira_leggett_generator(rho0.grid, params),
        rho0,
        n_steps,
        h,
        rk4_stability_bound(rho0.grid, params),
        observer,
        )


@dataclass(frozen=True, slots=True)
class LindbladOperator:
    """
    L = x_coeff x + p_coeff p
    """
    x_coeff: complex
    p_coeff: complex

    def matrix(self, grid: Grid1D, hbar: float = 1.0) -> ComplexArray:
        """
        Dense representation on a grid, x diagonal and p spectral
        """
        return np.asarray(
            self.x_coeff * position_operator(grid) + self.p_coeff * momentum_operator(grid, hbar),
            dtype=np.complex128,
            )


def build_qbm_lindblad(params: PhysicalParams,
                       normalization: Normalization = "published") -> LindbladOperator:
    """
    The single Lindblad operator of quantum Brownian motion

    published: x = (4 M gamma kT / hbar^2)^1/2, p = i (gamma / 2 M kT)^1/2
    cl-matched: p = i (gamma / 4 M kT)^1/2, so that with qbm_hamiltonian the generator is
    Caldeira-Leggett plus (gamma / 4 M kT)(p rho p - {p^2, rho}/2)
    """
    mkt = params.M * params.kT
    x_coeff = math.sqrt(4 * mkt * params.gamma) / params.hbar

    if normalization == "published":
        p_coeff = 1j * math.sqrt(params.gamma / (2 * mkt))
    else:
        p_coeff = 1j * math.sqrt(params.gamma / (4 * mkt))

    return LindbladOperator(complex(x_coeff), p_coeff)


def qbm_hamiltonian(grid: Grid1D, params: PhysicalParams) -> ComplexArray:
    """
    p^2 / 2M + (gamma / 2) {x, p}
    """
    p = momentum_operator(grid, params.hbar)
    x = position_operator(grid)
    return np.asarray(p @ p / (2 * params.M) + params.gamma / 2 * (x @ p + p @ x),
                      dtype=np.complex128)


def lindblad_generator(H: ComplexArray, Ls: Sequence[ComplexArray],
                       hbar: float = 1.0) -> Callable[[ComplexArray], ComplexArray]:
    """
    rho -> -i/hbar [H, rho] + sum_L (L rho L^dagger - {L^dagger L, rho} / 2)
    """
    pairs = [(L, L.conj().T, L.conj().T @ L) for L in Ls]

    def generator(rho: ComplexArray) -> ComplexArray:
        out = -1j / hbar * (H @ rho - rho @ H)
        for L, Ld, LdL in pairs:
            out = out + L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
        return np.asarray(out, dtype=np.complex128)

    return generator


def lindblad_rhs(rho: DensityMatrix, H: ComplexArray, Ls: Sequence[LindbladOperator],
                 hbar: float = 1.0) -> ComplexArray:
    """
    Time derivative of rho under the Lindblad equation
    """
    return lindblad_generator(H, [L.matrix(rho.grid, hbar) for L in Ls], hbar)(rho.rho)


def evolve_lindblad(
    rho0: DensityMatrix,
    H: ComplexArray,
    Ls: Sequence[LindbladOperator],
    t: float,
    dt: float,
    hbar: float = 1.0,
    observer: Optional[Observer] = None,
    ) -> Result[DensityMatrix, Union[InvalidParams, StepTooLarge]]:
    """
    RK4 integration of the Lindblad equation, matrix products only
    """
    if np.max(np.abs(H - H.conj().T)) > 1e-10 * max(1.0, float(np.max(np.abs(H)))):
        return Err(InvalidParams("Hamiltonian is not Hermitian"))
    if Err.is_instance(steps := _steps(t, dt)):
        return steps
    n_steps, h = Ok.unwrap(steps)

    mats = [L.matrix(rho0.grid, hbar) for L in Ls]
    radius = 2 * float(np.linalg.norm(H, 2)) / hbar + sum(
        2 * float(np.linalg.norm(L, 2))**2 for L in mats
        )
    bound = RK4_STABILITY_RADIUS / radius if radius > 0 else math.inf

    return _integrate(lindblad_generator(H, mats, hbar), rho0, n_steps, h, bound, observer)


@dataclass(frozen=True, slots=True)
class EvolverConfig:
    """
    Which master equation to integrate, and how
    """
    model: Model
    dt: float
    scheme: EvolverScheme = "rk4"

    def __post_init__(self) -> None:
        if self.model not in ("free-decoherence", "caldeira-leggett", "lindblad"):
            raise InvalidParams(f"unknown model {self.model!r}")
        if self.scheme not in ("split-step", "rk4"):
            raise InvalidParams(f"unknown scheme {self.scheme!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidParams(f"dt must be finite and > 0, got {self.dt!r}")
        if self.scheme == "split-step" and self.model != "free-decoherence":
            raise InvalidParams("split-step is only available for free-decoherence")

    @classmethod
    def create(cls: Type["EvolverConfig"], model: str, dt: float,
               scheme: str = "rk4") -> Result["EvolverConfig", InvalidParams]:
        """
        Validated configuration, or the violated invariant
        """
        try:
            return Ok(cls(model, dt, scheme))  # type: ignore[arg-type]
        except InvalidParams as err:
            return Err(err)


def evolve(
    config: EvolverConfig,
    rho0: DensityMatrix,
    params: PhysicalParams,
    t: float,
    Ls: Optional[Sequence[LindbladOperator]] = None,
    observer: Optional[Observer] = None,
    ) -> Result[DensityMatrix, Union[InvalidParams, LeakageError, StepTooLarge]]:
    """
    Runs the configured evolver; free decoherence uses D = 2 M gamma kT / hbar^2 and the
    Lindblad model defaults to qbm_hamiltonian with the published QBM operator
    """
    if config.model == "free-decoherence":
        return evolve_free_decoherence(
            rho0,
            params.D,
            t,
            config.dt,
            M=params.M,
            hbar=params.hbar,
            scheme=config.scheme,
            observer=observer,
            )

    if config.model == "caldeira-leggett":
        return evolve_caldeira_leggett(rho0, params, t, config.dt, observer)

    if Ls is None:
        Ls = [build_qbm_lindblad(params)]
    return evolve_lindblad(
        rho0, qbm_hamiltonian(rho0.grid, params), Ls, t, config.dt, params.hbar, observer
        )


def offdiag_peak(rho: DensityMatrix, min_separation: float) -> float:
    """
    Largest |rho(x, y)| over |x - y| >= min_separation
    """
    far = np.abs(separation(rho.grid)) >= min_separation
    return float(np.max(np.abs(rho.rho[far]))) if np.any(far) else 0.0


@dataclass(slots=True)
class DiagnosticsSeries:
    """
    Trace, purity, smallest eigenvalue and coherence peak of an evolving density matrix
    """
    min_separation: float
    t: List[float] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    purity: List[float] = field(default_factory=list)
    min_eig: List[float] = field(default_factory=list)
    offdiag_peak: List[float] = field(default_factory=list)
    max_hermiticity_error: float = 0.0

    def record(self, t: float, rho: DensityMatrix) -> None:
        """
        Appends the diagnostics of rho at time t

        Quantities that cannot be computed (complex trace, non Hermitian input) are recorded
        as nan, and the Hermiticity error is tracked separately.
        """
        self.t.append(t)
        tr = trace(rho)
        self.trace.append(Ok.unwrap(tr) if Ok.is_instance(tr) else math.nan)
        self.purity.append(purity(rho))
        eig = min_eigenvalue(rho)
        self.min_eig.append(Ok.unwrap(eig) if Ok.is_instance(eig) else math.nan)
        self.offdiag_peak.append(offdiag_peak(rho, self.min_separation))
        self.max_hermiticity_error = max(self.max_hermiticity_error, hermiticity_error(rho))

    def every(self, stride: float) -> Observer:
        """
        Observer that records whenever t crosses a multiple of stride
        """
        def observe(t: float, rho: DensityMatrix) -> None:
            if not self.t or t >= self.t[-1] + stride * (1 - 1e-9):
                self.record(t, rho)

        return observe

    def rows(self) -> Iterable[Tuple[float, float, float, float, float]]:
        """
        (t, trace, purity, min_eig, offdiag_peak) rows
        """
        return zip(self.t, self.trace, self.purity, self.min_eig, self.offdiag_peak)

    def write_csv(self, path: PathLike) -> None:
        """
        Writes the series as t,trace,purity,min_eig,offdiag_peak
        """
        write_csv(path, ["t", "trace", "purity", "min_eig", "offdiag_peak"], self.rows())


def write_density_csv(path: PathLike, rho: DensityMatrix, stride: int = 1) -> None:
    """
    Writes a snapshot as x,y,re_rho,im_rho rows, keeping every stride-th grid point
    """
    x = rho.grid.points
    idx = range(0, rho.grid.n, stride)
    write_csv(
        path, ["x", "y", "re_rho", "im_rho"],
        ((x[i], x[j], rho.rho[i, j].real, rho.rho[i, j].imag) for i in idx for j in idx)
        )


def _index_of(grid: Grid1D, x: float) -> int:
    return int(np.argmin(np.abs(grid.points - x)))


_GRID = Grid1D.centered(16.0, 128)


@test
def test_free_spreading_variance() -> None:
    """
    Tests D = 0 against the analytic spreading of a Gaussian
    """
    sigma, t, M = 1.0, 2.0, 1.0
    rho = Ok.unwrap(evolve_free_decoherence(gaussian_state(_GRID, width=sigma), 0.0, t, 0.1, M=M))
    assert_close(position_variance(rho), sigma**2 + (t / (2 * M * sigma))**2, abs_=1e-6)


@test
def test_frozen_kinetics_multiplicative() -> None:
    """
    Tests an infinitely heavy particle only decoheres
    """
    rho0 = superposition_state(_GRID, [-3.0, 3.0], 0.7)
    D, t = 0.3, 1.5
    rho = Ok.unwrap(evolve_free_decoherence(rho0, D, t, 0.05, M=math.inf))
    expected = rho0.rho * np.exp(-D * separation(_GRID)**2 * t)
    assert np.max(np.abs(rho.rho - expected)) < 1e-12


@test
def test_cat_coherence_decay_matches_oracle() -> None:
    """
    Tests the coherence peak of a cat state against the characteristics solution and the
    e^(-D d^2 t) estimate
    """
    d, sigma, D, M, t = 4.0, 0.5, 0.05, 20.0, 1.0
    rho0 = superposition_state(_GRID, [-d / 2, d / 2], sigma)
    rho = Ok.unwrap(evolve_free_decoherence(rho0, D, t, 0.01, M=M))

    i, j = _index_of(_GRID, d / 2), _index_of(_GRID, -d / 2)
    exact = Ok.unwrap(
        free_decoherence_offdiagonal_exact(0.0, d, t, separation_d=d, width=sigma, D=D, M=M)
        )
    assert abs(rho.rho[i, j] - exact) < 1e-4 * abs(exact)

    initial = Ok.unwrap(
        free_decoherence_offdiagonal_exact(0.0, d, 0.0, separation_d=d, width=sigma, D=D, M=M)
        )
    assert abs(initial - rho0.rho[i, j]) < 1e-8
    assert_close(abs(rho.rho[i, j]) / abs(rho0.rho[i, j]), math.exp(-D * d**2 * t), rel=0.05)


@test
def test_free_decoherence_purity_falls() -> None:
    """
    Tests purity drops at every step of a decohering cat state and stays above zero
    """
    rho0 = superposition_state(_GRID, [-2.0, 2.0], 0.5)
    history: List[float] = []

    def observe(_: float, rho: DensityMatrix) -> None:
        history.append(purity(rho))

    observe(0.0, rho0)
    Ok.unwrap(evolve_free_decoherence(rho0, 0.05, 1.0, 0.01, M=20.0, observer=observe))

    assert len(history) == 101
    assert_close(history[0], 1.0, abs_=1e-12)
    assert np.all(np.diff(history) < 0)
    assert 0 < history[-1] < 1


@test
def test_split_step_second_order() -> None:
    """
    Tests Richardson ratios of the Strang splitting and trace and Hermiticity preservation
    """
    rho0 = superposition_state(_GRID, [-2.0, 2.0], 1.0)
    finals = [
        Ok.unwrap(evolve_free_decoherence(rho0, 0.5, 1.0, dt)).rho for dt in (0.04, 0.02, 0.01)
        ]
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert 3.5 < ratio < 4.5

    last = DensityMatrix(_GRID, finals[2])
    assert_close(Ok.unwrap(trace(last)), 1.0, abs_=1e-10)
    assert hermiticity_error(last) < 1e-10


@test
def test_leakage_reported() -> None:
    """
    Tests a packet spreading into the edge bands is stopped
    """
    rho0 = gaussian_state(_GRID, width=0.3)
    assert isinstance(Err.get(evolve_free_decoherence(rho0, 0.0, 20.0, 0.1)), LeakageError)


_COLD = Ok.unwrap(PhysicalParams.create(M=1.0, m=0.01, T=0.1, gamma=0.1))


@test
def test_caldeira_leggett_reductions() -> None:
    """
    Tests gamma = 0 against free evolution and small gamma at high T against free
    decoherence with D = 2 M gamma kT / hbar^2
    """
    rho0 = gaussian_state(_GRID, width=1.0)

    free = _COLD.replace(Gamma=0.0)
    cl = Ok.unwrap(evolve_caldeira_leggett(rho0, free, 1.0, 0.005))
    ref = Ok.unwrap(evolve_free_decoherence(rho0, 0.0, 1.0, 0.1))
    assert np.max(np.abs(cl.rho - ref.rho)) < 1e-8

    hot = _COLD.replace(T=50.0, gamma=0.01)
    t = 0.2
    cl = Ok.unwrap(evolve_caldeira_leggett(rho0, hot, t, 0.005))
    ref = Ok.unwrap(evolve_free_decoherence(rho0, hot.D, t, 0.005))
    gap = np.max(np.abs(cl.rho - ref.rho)) / np.max(np.abs(ref.rho))
    assert gap < 10 * hot.gamma * t

    assert_close(Ok.unwrap(trace(cl)), 1.0, abs_=1e-8)
    assert hermiticity_error(cl) < 1e-10

    assert isinstance(Err.get(evolve_caldeira_leggett(rho0, hot, 1.0, 1.0)), StepTooLarge)


@test
def test_caldeira_leggett_violates_positivity() -> None:
    """
    Tests a state squeezed below the thermal width gets a negative eigenvalue, while the
    Lindblad equation keeps it positive
    """
    grid = Grid1D.centered(10.0, 64)
    rho0 = squeezed_state(grid, _COLD, 1.0)

    cl = DiagnosticsSeries(1.0)
    Ok.unwrap(evolve_caldeira_leggett(rho0, _COLD, 0.1, 0.005, cl.record))
    assert min(cl.min_eig) < -1e-6

    lb = DiagnosticsSeries(1.0)
    H = qbm_hamiltonian(grid, _COLD)
    L = build_qbm_lindblad(_COLD, "cl-matched")
    Ok.unwrap(evolve_lindblad(rho0, H, [L], 0.1, 0.005, observer=lb.record))
    assert min(lb.min_eig) >= -1e-7
    assert max(abs(i - 1) for i in lb.trace) < 1e-8


@test
def test_build_qbm_lindblad() -> None:
    """
    Tests the coefficient examples, temperature scaling and the gamma = 0 operator
    """
    params = Ok.unwrap(PhysicalParams.create(M=1.0, m=0.01, T=10.0, gamma=0.1))
    L = build_qbm_lindblad(params)
    assert_close(L.x_coeff.real, 2.0, rel=1e-14)
    assert_close(abs(L.p_coeff), math.sqrt(0.005), rel=1e-14)
    assert_close(L.x_coeff.real * abs(L.p_coeff), math.sqrt(2) * params.gamma, rel=1e-14)

    hot = build_qbm_lindblad(params.replace(T=20.0))
    assert_close(hot.x_coeff.real / L.x_coeff.real, math.sqrt(2), rel=1e-14)
    assert_close(abs(hot.p_coeff) / abs(L.p_coeff), 1 / math.sqrt(2), rel=1e-14)

    matched = build_qbm_lindblad(params, "cl-matched")
    assert_close(matched.x_coeff.real * abs(matched.p_coeff), params.gamma, rel=1e-14)

    zero = build_qbm_lindblad(params.replace(Gamma=0.0))
    assert zero.x_coeff == 0 and zero.p_coeff == 0


@test
def test_lindblad_closed_forms() -> None:
    """
    Tests unitary evolution keeps purity and position dephasing matches its closed form
    """
    rho0 = superposition_state(_GRID, [-2.0, 2.0], 0.8)
    p = momentum_operator(_GRID, 1.0)

    unitary = Ok.unwrap(evolve_lindblad(rho0, p @ p / 2, [], 1.0, 0.01))
    assert_close(purity(unitary), purity(rho0), abs_=1e-8)

    kappa, t = 0.1, 1.0
    L = LindbladOperator(complex(math.sqrt(kappa)), 0j)
    zero_h = np.zeros((_GRID.n, _GRID.n), dtype=np.complex128)
    out = Ok.unwrap(evolve_lindblad(rho0, zero_h, [L], t, 0.01))
    x = _GRID.points
    expected = rho0.rho * np.exp(-0.5 * kappa * t * (x[:, None] - x[None, :])**2)
    assert np.max(np.abs(out.rho - expected)) < 1e-8


@test
def test_lindblad_minus_caldeira_leggett_scales_as_inverse_t() -> None:
    """
    Tests the generator difference falls as 1/T with the matched operator
    """
    rho = gaussian_state(_GRID, width=1.0)
    base = Ok.unwrap(PhysicalParams.create(M=1.0, m=0.01, T=10.0, gamma=0.1))

    norms: List[float] = []
    temps = [10.0, 100.0]
    for T in temps:
        params = base.replace(T=T)
        H = qbm_hamiltonian(_GRID, params)
        L = build_qbm_lindblad(params, "cl-matched")
        diff = lindblad_rhs(rho, H, [L]) - caldeira_leggett_rhs(rho, params)
        norms.append(float(np.linalg.norm(diff)))

    slope = math.log(norms[1] / norms[0]) / math.log(temps[1] / temps[0])
    assert_close(slope, -1.0, abs_=0.05)


@test
def test_evolver_config() -> None:
    """
    Tests config invariants and dispatch
    """
    assert Err.is_instance(EvolverConfig.create("caldeira-leggett", 0.01, "split-step"))
    assert Err.is_instance(EvolverConfig.create("free-decoherence", 0.0))
    assert Err.is_instance(EvolverConfig.create("schroedinger", 0.01))

    config = Ok.unwrap(EvolverConfig.create("free-decoherence", 0.05, "split-step"))
    rho0 = gaussian_state(_GRID)
    direct = Ok.unwrap(evolve_free_decoherence(rho0, _COLD.D, 0.5, 0.05, M=_COLD.M))
    assert np.array_equal(Ok.unwrap(evolve(config, rho0, _COLD, 0.5)).rho, direct.rho)

    fine = Ok.unwrap(evolve_free_decoherence(rho0, _COLD.D, 0.5, 0.005, M=_COLD.M))
    rk4 = Ok.unwrap(EvolverConfig.create("free-decoherence", 0.005, "rk4"))
    assert np.max(np.abs(Ok.unwrap(evolve(rk4, rho0, _COLD, 0.5)).rho - fine.rho)) < 1e-6
