"""
Base types for the qbm_lab library: errors, physical parameters, grids and states
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Type, Final, Any

import numpy as np
from numpy.typing import NDArray

from ._result import Result, Ok, Err

RealArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

# relative tolerance for the gamma = (m/M) Gamma identity
RATE_IDENTITY_RTOL: Final = 1e-12


class QbmError(Exception):
    """
    Base class of every error qbm_lab reports
    """
    __slots__ = ()


class InvalidParams(QbmError):
    """
    A parameter set violates the invariants of the type it was meant to build
    """
    __slots__ = ()


class ConfigInvalid(QbmError):
    """
    An experiment configuration could not be parsed or validated
    """
    __slots__ = ()


class NonHermitian(QbmError):
    """
    A matrix that must be Hermitian is not, within tolerance
    """
    __slots__ = ()


class NonHermitianTrace(NonHermitian):
    """
    The trace of a density matrix has a non negligible imaginary part
    """
    __slots__ = ()


class LeakageError(QbmError):
    """
    Probability reached the edges of the periodic grid
    """
    __slots__ = ()


class CFLViolation(QbmError):
    """
    An explicit step exceeds its stability bound
    """
    __slots__ = ()


class StepTooLarge(QbmError):
    """
    A Runge-Kutta integration diverged or was asked for a step above its stability bound
    """
    __slots__ = ()


class EmptyEnsemble(QbmError):
    """
    A Monte Carlo ensemble holds no particles
    """
    __slots__ = ()


class DivergentOccupation(QbmError):
    """
    A Bose occupation was requested at or below the chemical potential
    """
    __slots__ = ()


class OffShell(QbmError):
    """
    Scattering momenta do not conserve energy
    """
    __slots__ = ()


class QuadratureFailure(QbmError):
    """
    An adaptive quadrature did not reach its tolerance
    """
    __slots__ = ()


class CutoffRequired(QbmError):
    """
    A divergent moment of a contact potential was requested without a cutoff
    """
    __slots__ = ()


class DensityTooHigh(QbmError):
    """
    The low density kernel was requested for a gas that is not dilute
    """
    __slots__ = ()


def _finite_positive(name: str, value: float) -> Optional[InvalidParams]:
    if not math.isfinite(value) or value <= 0:
        return InvalidParams(f"{name} must be finite and > 0, got {value!r}")
    return None


@dataclass(frozen=True, slots=True)
class PhysicalParams:
    """
    Masses, temperature and rates of the system plus its unit constants

    Gamma is the collision rate of the environment particles and gamma the dissipation
    rate; they are tied together by gamma = (m/M) Gamma. All quantities are dimensionless
    in user chosen units, hbar and kB default to 1.
    """
    M: float
    m: float
    T: float
    Gamma: float
    gamma: float
    hbar: float = 1.0
    kB: float = 1.0
    mu: float = 0.0

    def __post_init__(self) -> None:
        if (err := self._check()) is not None:
            raise err

    def _check(self) -> Optional[InvalidParams]:
        for name in ("M", "m", "T", "hbar", "kB"):
            if (err := _finite_positive(name, getattr(self, name))) is not None:
                return err

        if not math.isfinite(self.Gamma) or self.Gamma < 0:
            return InvalidParams(f"Gamma must be finite and >= 0, got {self.Gamma!r}")

        expected = self.m / self.M * self.Gamma
        if abs(self.gamma - expected) > RATE_IDENTITY_RTOL * max(abs(expected), abs(self.gamma)):
            return InvalidParams(
                f"gamma={self.gamma!r} is inconsistent with (m/M)*Gamma={expected!r}"
                )

        return None

    @classmethod
    def create(
        cls: Type["PhysicalParams"],
        *,
        M: float,
        m: float,
        T: float,
        Gamma: Optional[float] = None,
        gamma: Optional[float] = None,
        hbar: float = 1.0,
        kB: float = 1.0,
        mu: float = 0.0,
        ) -> Result["PhysicalParams", InvalidParams]:
        """
        Builds a parameter set, deriving whichever of Gamma and gamma is missing
        """
        if M <= 0:
            return Err(InvalidParams(f"M must be > 0, got {M!r}"))

        if Gamma is None and gamma is None:
            return Err(InvalidParams("one of Gamma or gamma must be given"))

        if Gamma is None:
            assert gamma is not None
            Gamma = gamma * M / m if m > 0 else math.nan
        elif gamma is None:
            gamma = m / M * Gamma

        try:
            return Ok(cls(M=M, m=m, T=T, Gamma=Gamma, gamma=gamma, hbar=hbar, kB=kB, mu=mu))
        except InvalidParams as err:
            return Err(err)

    @property
    def kT(self) -> float:
        """
        Thermal energy kB * T
        """
        return self.kB * self.T

    @property
    def D(self) -> float:
        """
        Localization rate 2 m Gamma kT / hbar^2 (= 2 M gamma kT / hbar^2)
        """
        return 2 * self.m * self.Gamma * self.kT / self.hbar**2

    def replace(self, **changes: Any) -> "PhysicalParams":
        """
        Returns a copy with the given fields changed, re deriving gamma from Gamma
        """
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        if "gamma" in changes and "Gamma" not in changes:
            values["Gamma"] = values["gamma"] * values["M"] / values["m"]
        else:
            values["gamma"] = values["m"] / values["M"] * values["Gamma"]
        return PhysicalParams(**values)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True, slots=True)
class Grid1D:
    """
    A uniform periodic grid of n points on [x_min, x_max)
    """
    x_min: float
    x_max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 8 or not _is_pow2(self.n):
            raise InvalidParams(f"grid size must be a power of two >= 8, got {self.n!r}")
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)
                ) or self.x_max <= self.x_min:
            raise InvalidParams(f"grid needs x_max > x_min, got [{self.x_min}, {self.x_max})")

    @classmethod
    def create(cls: Type["Grid1D"], x_min: float, x_max: float,
               n: int) -> Result["Grid1D", InvalidParams]:
        """
        Builds a grid, returning the invariant violation instead of raising it
        """
        try:
            return Ok(cls(x_min, x_max, n))
        except InvalidParams as err:
            return Err(err)

    @classmethod
    def centered(cls: Type["Grid1D"], half_width: float, n: int) -> "Grid1D":
        """
        Grid on [-half_width, half_width)
        """
        return cls(-half_width, half_width, n)

    @property
    def dx(self) -> float:
        """
        Grid spacing
        """
        return (self.x_max - self.x_min) / self.n

    @property
    def length(self) -> float:
        """
        Period of the grid
        """
        return self.x_max - self.x_min

    @property
    def points(self) -> RealArray:
        """
        Grid point coordinates
        """
        return self.x_min + self.dx * np.arange(self.n, dtype=np.float64)

    @property
    def wavenumbers(self) -> RealArray:
        """
        Angular wavenumbers of the discrete Fourier modes, in fft order
        """
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)


def _readonly(a: NDArray[Any]) -> NDArray[Any]:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, slots=True)
class DensityMatrix:
    """
    A density matrix in position representation, rho[i, j] ~ rho(x_i, y_j)

    rho is a kernel density, so the trace carries a dx weight. Positivity is a diagnostic
    (see core.min_eigenvalue), not a constructor invariant.
    """
    grid: Grid1D
    rho: ComplexArray = field(repr=False)

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=np.complex128)
        if rho.shape != (self.grid.n, self.grid.n):
            raise InvalidParams(
                f"density matrix shape {rho.shape} does not match grid size {self.grid.n}"
                )
        if not np.all(np.isfinite(rho)):
            raise InvalidParams("density matrix has non finite entries")
        object.__setattr__(self, "rho", _readonly(rho))

    def with_rho(self, rho: ComplexArray) -> "DensityMatrix":
        """
        Returns a density matrix on the same grid with new entries
        """
        return DensityMatrix(self.grid, rho)

    def scaled(self, factor: complex) -> "DensityMatrix":
        """
        Returns factor * rho
        """
        return DensityMatrix(self.grid, factor * self.rho)


@dataclass(frozen=True, slots=True)
class WignerFunction:
    """
    A real Wigner function w[i, k] ~ W(X_i, P_k) on a position by momentum grid
    """
    q_grid: Grid1D
    p_grid: Grid1D
    w: RealArray = field(repr=False)
    hbar: float = 1.0

    def __post_init__(self) -> None:
        w = np.asarray(self.w)
        if np.iscomplexobj(w):
            raise InvalidParams("Wigner function values must be real")
        if w.shape != (self.q_grid.n, self.p_grid.n):
            raise InvalidParams(
                f"Wigner array shape {w.shape} does not match grids "
                f"({self.q_grid.n}, {self.p_grid.n})"
                )
        if not np.all(np.isfinite(w)):
            raise InvalidParams("Wigner function has non finite entries")
        object.__setattr__(self, "w", _readonly(w.astype(np.float64)))

    def with_w(self, w: RealArray) -> "WignerFunction":
        """
        Returns a Wigner function on the same grids with new values
        """
        return WignerFunction(self.q_grid, self.p_grid, w, self.hbar)

    @property
    def norm(self) -> float:
        """
        dX dP sum of W
        """
        return float(self.w.sum() * self.q_grid.dx * self.p_grid.dx)


@dataclass(frozen=True, slots=True)
class ThermalEnvironment1D:
    """
    One dimensional Maxwell-Boltzmann gas of environment particles, <p> = 0
    """
    m: float
    T: float
    kB: float = 1.0

    def __post_init__(self) -> None:
        for name in ("m", "T", "kB"):
            if (err := _finite_positive(name, getattr(self, name))) is not None:
                raise err

    @classmethod
    def from_params(cls: Type["ThermalEnvironment1D"],
                    params: PhysicalParams) -> "ThermalEnvironment1D":
        """
        Environment matching the mass and temperature of a parameter set
        """
        return cls(params.m, params.T, params.kB)

    @property
    def p2_mean(self) -> float:
        """
        Second moment of the environment momentum, m kB T
        """
        return self.m * self.kB * self.T

    @property
    def p_mean(self) -> float:
        """
        First moment of the environment momentum
        """
        return 0.0
