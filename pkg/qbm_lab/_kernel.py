"""
Decoherence kernel of a particle immersed in a thermal gas, from the scattering coefficient
C(k) of the many body Lindblad equation

Units have hbar = 1 so gas momenta and wavenumbers coincide, and every sum over gas modes
is taken in the continuum, with C(k) normalized such that

    F(r) = (2 pi)^-3 int d^3k C(k) (1 - exp(i k.r))

The energy conserving delta fixes the component of the gas momentum q along k to k/2, which
leaves a radial integral over the transverse part of q:

    C(k) = (2 pi)^-2 |nu(k)|^2 (m / k) int 2 pi q dq n(s) (n(s) + 1),  s^2 = q^2 + k^2 / 4

A classical (Boltzmann) gas has no stimulated factor, so its weight is n(s) alone and
C(k) falls as (m / k) exp(-beta k^2 / 8m) for a contact potential.
"""

import os
import math
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Literal, Optional, Sequence, Type, Union, Final

import numpy as np
from numpy.typing import NDArray

from ._result import Result, Ok, Err
from ._types import (
    RealArray, InvalidParams, DivergentOccupation, OffShell, QuadratureFailure,
    CutoffRequired, DensityTooHigh
    )
from ._core import integrate, worker_count
from ._output import write_csv, write_json, PathLike
from .testing import test, assert_close

logger = logging.getLogger(__name__)

PotentialKind = Literal["gaussian", "yukawa", "contact"]
Statistics = Literal["bose", "boltzmann"]
Route = Literal["via-ck", "brute-force"]

# largest occupation for which n (n + 1) may be replaced by n
LOW_DENSITY_MAX_OCCUPATION: Final = 0.01
# the small r fit window keeps the quartic term of F below this fraction of the quadratic
FIT_QUARTIC_FRACTION: Final = 1e-3
# F(r) switches to the Fourier integral form once k_support * r exceeds this
SINC_SWITCH: Final = 50.0

COEFFICIENT_RTOL: Final = 1e-10
KERNEL_RTOL: Final = 1e-9

BRUTE_FORCE_CHUNK: Final = 4096


@dataclass(frozen=True, slots=True)
class Potential:
    """
    Isotropic two body potential, described by its Fourier transform nu(k)

    gaussian: strength exp(-k^2 range^2 / 2)
    yukawa: strength / (k^2 + 1 / range^2)
    contact: strength, range unused
    """
    kind: PotentialKind
    strength: float
    range: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "yukawa", "contact"):
            raise InvalidParams(f"unknown potential kind {self.kind!r}")
        if not math.isfinite(self.strength):
            raise InvalidParams(f"potential strength must be finite, got {self.strength!r}")
        if self.kind != "contact" and not (math.isfinite(self.range) and self.range > 0):
            raise InvalidParams(f"potential range must be finite and > 0, got {self.range!r}")

    @classmethod
    def create(cls: Type["Potential"], kind: str, strength: float,
               range_: float = 1.0) -> Result["Potential", InvalidParams]:
        """
        Validated potential, or the violated invariant
        """
        try:
            return Ok(cls(kind, strength, range_))  # type: ignore[arg-type]
        except InvalidParams as err:
            return Err(err)

    def nu(self, k: Any) -> Any:
        """
        Fourier transform at wavenumber magnitude k (scalar or array)
        """
        k = np.asarray(k, dtype=np.float64)
        if self.kind == "gaussian":
            out = self.strength * np.exp(-k**2 * self.range**2 / 2)
        elif self.kind == "yukawa":
            out = self.strength / (k**2 + 1 / self.range**2)
        else:
            out = np.full_like(k, self.strength)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "Potential":
        """
        Same potential with strength multiplied by factor
        """
        return Potential(self.kind, self.strength * factor, self.range)


def _bose(x: float) -> float:
    # 1 / (e^x - 1) written in e^-x, finite for every x > 0
    return math.exp(-x) / -math.expm1(-x)


@dataclass(frozen=True, slots=True)
class GasParams:
    """
    Ideal thermal gas of particles of mass m with dispersion q^2 / 2m
    """
    m: float
    beta: float
    mu: float
    statistics: Statistics = "bose"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.m) and self.m > 0):
            raise InvalidParams(f"gas mass must be finite and > 0, got {self.m!r}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidParams(f"beta must be finite and > 0, got {self.beta!r}")
        if self.statistics not in ("bose", "boltzmann"):
            raise InvalidParams(f"unknown statistics {self.statistics!r}")
        if not math.isfinite(self.mu) or (self.statistics == "bose" and self.mu >= 0):
            raise InvalidParams(f"Bose gas needs a finite mu < 0, got {self.mu!r}")
        if self.beta * self.mu > 700:
            raise InvalidParams(f"exp(beta mu) overflows at beta mu = {self.beta * self.mu!r}")

    @classmethod
    def create(cls: Type["GasParams"], m: float, beta: float, mu: float,
               statistics: str = "bose") -> Result["GasParams", InvalidParams]:
        """
        Validated gas, or the violated invariant
        """
        try:
            return Ok(cls(m, beta, mu, statistics))  # type: ignore[arg-type]
        except InvalidParams as err:
            return Err(err)

    @property
    def fugacity(self) -> float:
        """
        exp(beta mu)
        """
        return math.exp(self.beta * self.mu)

    @property
    def max_occupation(self) -> float:
        """
        Occupation of the q = 0 mode, the largest of all
        """
        if self.statistics == "bose":
            return _bose(-self.beta * self.mu)
        return self.fugacity


def thermal_occupation(x: float, statistics: Statistics) -> Result[float, DivergentOccupation]:
    """
    Occupation of a mode with x = beta (omega - mu)
    """
    if statistics == "boltzmann":
        return Ok(math.exp(-x))

    if x <= 0:
        return Err(DivergentOccupation(f"Bose occupation diverges at beta (omega - mu) = {x!r}"))

    return Ok(_bose(x))


def occupation(q: float, gas: GasParams) -> Result[float, DivergentOccupation]:
    """
    Thermal occupation n_q of the gas mode with momentum magnitude q
    """
    return thermal_occupation(gas.beta * (q * q / (2 * gas.m) - gas.mu), gas.statistics)


def _occupation_array(s: RealArray, gas: GasParams) -> RealArray:
    x = gas.beta * (s * s / (2 * gas.m) - gas.mu)
    if gas.statistics == "bose":
        return np.asarray(np.exp(-x) / -np.expm1(-x), dtype=np.float64)
    return np.asarray(np.exp(-x), dtype=np.float64)


def _scattering_weight(s: RealArray, gas: GasParams, low_density: bool) -> RealArray:
    # n (n + 1) for stimulated Bose scattering; n alone for a classical gas or the dilute limit
    n = _occupation_array(s, gas)
    if low_density or gas.statistics == "boltzmann":
        return n
    return n * (n + 1)


def born_amplitude(k: Sequence[float], k_prime: Sequence[float], pot: Potential,
                   m: float) -> float:
    """
    First Born approximation f(k, k') = (m / 2 pi) nu(|k - k'|)
    """
    transfer = float(np.linalg.norm(np.asarray(k, dtype=np.float64) - np.asarray(k_prime)))
    return m / (2 * math.pi) * pot.nu(transfer)


def classical_scattering_amplitude(
    k0: Sequence[float],
    kf: Sequence[float],
    x0: Sequence[float],
    pot: Potential,
    V: float,
    ) -> Result[complex, OffShell]:
    """
    Amplitude density (i / 2V) nu(kf - k0) exp(-i (kf - k0).x0) for scattering a gas
    particle off a static system localized at x0

    The phase is the Fourier transform of the system number density, so the environment
    records where the system is.
    """
    a, b = np.asarray(k0, dtype=np.float64), np.asarray(kf, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))

    if abs(na - nb) > 1e-12 * max(na, nb, 1.0):
        return Err(OffShell(f"|k0| = {na!r} and |kf| = {nb!r} differ"))

    transfer = b - a
    phase = np.exp(-1j * float(np.dot(transfer, np.asarray(x0, dtype=np.float64))))
    return Ok(complex(0.5j / V * pot.nu(float(np.linalg.norm(transfer))) * phase))


def _transverse_integral(k: Any, gas: GasParams, low_density: bool) -> Any:
    # int 2 pi q dq w(s) with u = s^2 / 2m, so 2 pi q dq = 2 pi m du and u starts at k^2 / 8m
    x0 = gas.beta * (np.asarray(k, dtype=np.float64)**2 / (8 * gas.m) - gas.mu)
    scale = 2 * math.pi * gas.m / gas.beta

    if gas.statistics == "bose":
        if low_density:
            return scale * -np.log1p(-np.exp(-x0))
        # n (n + 1) = -d n / d(beta u)
        return scale * np.exp(-x0) / -np.expm1(-x0)

    return scale * np.exp(-x0)


def coefficient_closed_form(k: Any, pot: Potential, gas: GasParams,
                            low_density: bool = False) -> Any:
    """
    C(k) in closed form, for scalar or array k > 0
    """
    k = np.asarray(k, dtype=np.float64)
    out = pot.nu(k)**2 * gas.m / k * _transverse_integral(k, gas, low_density) / (2 * math.pi)**2
    return out if np.ndim(out) else float(out)


def lindblad_coefficient(k: float, pot: Potential, gas: GasParams,
                         low_density: bool = False) -> Result[float, Union[InvalidParams,
                                                                           QuadratureFailure]]:
    """
    C(k) by adaptive quadrature over the transverse gas momentum
    """
    if not (math.isfinite(k) and k > 0):
        return Err(InvalidParams(f"C(k) needs k > 0, got {k!r}"))

    quarter = k * k / 4

    def integrand(q: float) -> float:
        s = math.sqrt(q * q + quarter)
        w = _scattering_weight(np.array(s), gas, low_density)
        return 2 * math.pi * q * float(w)

    prefactor = pot.nu(k)**2 * gas.m / k / (2 * math.pi)**2

    return Ok.map(
        integrate(integrand, 0.0, math.inf, epsabs=0.0, epsrel=COEFFICIENT_RTOL, limit=200),
        lambda v: prefactor * v[0],
        )


def _k_support(pot: Potential, gas: GasParams, exponent: float = 60.0) -> float:
    # wavenumber beyond which every C(k) moment is below exp(-exponent) of its scale
    thermal = math.sqrt(8 * gas.m * exponent / gas.beta)
    if pot.kind == "gaussian":
        return min(thermal, math.sqrt(exponent) / pot.range)
    return thermal


def _moment(power: int, pot: Potential, gas: GasParams, upper: float,
            low_density: bool = False) -> Result[float, QuadratureFailure]:
    return Ok.map(
        integrate(
            lambda k: k**power * coefficient_closed_form(k, pot, gas, low_density)
            if k > 0 else 0.0,
            0.0,
            upper,
            epsabs=0.0,
            epsrel=KERNEL_RTOL,
            limit=400,
            ),
        lambda v: v[0],
        )


def _one_minus_sinc(x: float) -> float:
    if abs(x) < 1e-3:
        x2 = x * x
        return x2 / 6 - x2 * x2 / 120
    return 1 - math.sin(x) / x


def kernel_saturation(pot: Potential, gas: GasParams,
                      low_density: bool = False) -> Result[float, QuadratureFailure]:
    """
    F(infinity) = (2 pi^2)^-1 int k^2 C(k) dk, the total scattering rate
    """
    return Ok.map(
        _moment(2, pot, gas, _k_support(pot, gas), low_density),
        lambda v: v / (2 * math.pi**2),
        )


def kernel_direct(r: float, pot: Potential, gas: GasParams,
                  low_density: bool = False) -> Result[float, QuadratureFailure]:
    """
    F(r) = (2 pi^2)^-1 int k^2 C(k) (1 - sin(kr) / kr) dk

    F is even, so r is taken by magnitude. Large r uses F(infinity) minus a Fourier sine
    integral, which quad evaluates with its oscillatory weight.
    """
    r = abs(r)
    if r == 0:
        return Ok(0.0)

    support = _k_support(pot, gas)

    if support * r <= SINC_SWITCH:
        return Ok.map(
            integrate(
                lambda k: k * k * coefficient_closed_form(k, pot, gas, low_density) *
                _one_minus_sinc(k * r)
                if k > 0 else 0.0,
                0.0,
                support,
                epsabs=0.0,
                epsrel=KERNEL_RTOL,
                limit=400,
                ),
            lambda v: v[0] / (2 * math.pi**2),
            )

    if Err.is_instance(total := _moment(2, pot, gas, support, low_density)):
        return total
    saturation = Ok.unwrap(total)
    if saturation == 0:
        return Ok(0.0)

    tail = integrate(
        lambda k: k * coefficient_closed_form(k, pot, gas, low_density) if k > 0 else 0.0,
        0.0,
        math.inf,
        weight="sin",
        wvar=r,
        epsabs=1e-9 * saturation,
        )
    return Ok.map(tail, lambda v: (saturation - v[0] / r) / (2 * math.pi**2))


def localization_rate(pot: Potential, gas: GasParams, k_cutoff: Optional[float] = None,
                      low_density: bool = False) -> Result[float, Union[
                          InvalidParams, CutoffRequired, QuadratureFailure]]:
    """
    D = (12 pi^2)^-1 int k^4 C(k) dk, the small separation curvature of F(r) = D r^2 + ...

    Contact potentials have no intrinsic wavenumber scale, so they need k_cutoff.
    """
    if k_cutoff is None and pot.kind == "contact":
        return Err(CutoffRequired("localization rate of a contact potential needs k_cutoff"))
    if k_cutoff is not None and not (math.isfinite(k_cutoff) and k_cutoff > 0):
        return Err(InvalidParams(f"k_cutoff must be finite and > 0, got {k_cutoff!r}"))

    upper = _k_support(pot, gas)
    if k_cutoff is not None:
        upper = min(upper, k_cutoff)

    return Ok.map(_moment(4, pot, gas, upper, low_density), lambda v: v / (12 * math.pi**2))


def localization_rate_fit(pot: Potential, gas: GasParams,
                          n_points: int = 8) -> Result[float, QuadratureFailure]:
    """
    D from a least squares fit of D r^2 + E r^4 to kernel_direct on a window small enough that
    the quartic term stays below FIT_QUARTIC_FRACTION of the quadratic one
    """
    support = _k_support(pot, gas)
    if Err.is_instance(m4 := _moment(4, pot, gas, support)):
        return m4
    if Err.is_instance(m6 := _moment(6, pot, gas, support)):
        return m6

    D0 = Ok.unwrap(m4) / (12 * math.pi**2)
    E0 = Ok.unwrap(m6) / (240 * math.pi**2)
    if D0 == 0 or E0 == 0:
        return Ok(0.0)

    r_star = math.sqrt(FIT_QUARTIC_FRACTION * D0 / E0)
    u = np.linspace(0.25, 1.0, n_points)

    values: List[float] = []
    for r in r_star * u:
        if Err.is_instance(f := kernel_direct(float(r), pot, gas)):
            return f
        values.append(Ok.unwrap(f))

    design = np.stack([u**2, u**4], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(values), rcond=None)
    D = float(coef[0]) / r_star**2

    logger.info("small r fit on r <= %.4g: D = %.10g (moment route %.10g)", r_star, D, D0)
    return Ok(D)


def kernel_low_density(r: float, pot: Potential,
                       gas: GasParams) -> Result[float, Union[DensityTooHigh, QuadratureFailure]]:
    """
    F(r) with n (n + 1) replaced by n, valid when every occupation is below 0.01
    """
    if (n_max := gas.max_occupation) >= LOW_DENSITY_MAX_OCCUPATION:
        return Err(DensityTooHigh(f"largest occupation {n_max:.4g} is not << 1"))
    return kernel_direct(r, pot, gas, low_density=True)


def number_density(gas: GasParams) -> float:
    """
    Particles per volume, e^(beta mu) (m / 2 pi beta)^(3/2) for Boltzmann statistics and
    g_3/2(e^(beta mu)) (m / 2 pi beta)^(3/2) for Bose statistics
    """
    scale = (gas.m / (2 * math.pi * gas.beta))**1.5
    z = gas.fugacity

    if gas.statistics == "boltzmann":
        return z * scale

    # terms fall below 1e-17 of the first once z^j does
    n_terms = min(10_000_000, max(1, math.ceil(40 / -math.log(z))))
    j = np.arange(1, n_terms + 1, dtype=np.float64)
    return float(np.sum(np.exp(j * math.log(z)) / j**1.5)) * scale


def number_density_quadrature(gas: GasParams) -> Result[float, QuadratureFailure]:
    """
    (2 pi^2)^-1 int q^2 n(q) dq, the density the continuum mode sum normalizes to
    """
    value = integrate(
        lambda q: q * q * float(_occupation_array(np.array(q), gas)),
        0.0,
        math.inf,
        epsabs=0.0,
        epsrel=1e-10,
        limit=200,
        )
    return Ok.map(value, lambda v: v[0] / (2 * math.pi**2))


def _brute_force_chunk(
    kvec: NDArray[np.float64],
    q_perp2: NDArray[np.float64],
    r_vecs: NDArray[np.float64],
    pot: Potential,
    gas: GasParams,
    low_density: bool,
    ) -> NDArray[np.float64]:
    kmag = np.linalg.norm(kvec, axis=1)
    s = np.sqrt(q_perp2[None, :] + kmag[:, None]**2 / 4)
    transverse = _scattering_weight(s, gas, low_density).sum(axis=1)
    c = pot.nu(kmag)**2 * gas.m / kmag * transverse
    return np.asarray((1 - np.cos(kvec @ r_vecs.T)).T @ c, dtype=np.float64)


def kernel_brute_force(
    r_values: Sequence[float],
    pot: Potential,
    gas: GasParams,
    *,
    n_k: int = 48,
    n_q: int = 24,
    low_density: bool = False,
    ) -> RealArray:
    """
    F(r) from the full integral over the 3-D momentum transfer k and the 2-D transverse
    gas momentum, on midpoint tensor grids

    Every angle is sampled explicitly, with r along (1, 2, 3) / sqrt(14), so this shares
    nothing with the radial reductions of kernel_direct apart from the integrand. Grid
    points sit at half steps, so k = 0 is never hit. k points are processed in chunks whose
    partial sums are added in chunk order.
    """
    K = _k_support(pot, gas, 30.0)
    Q = math.sqrt(60 * gas.m / gas.beta)
    hk, hq = 2 * K / n_k, 2 * Q / n_q

    k_axis = -K + hk * (np.arange(n_k) + 0.5)
    q_axis = -Q + hq * (np.arange(n_q) + 0.5)

    kvec = np.stack([i.ravel() for i in np.meshgrid(k_axis, k_axis, k_axis, indexing="ij")],
                    axis=1)
    q_perp2 = np.add.outer(q_axis**2, q_axis**2).ravel()

    direction = np.array([1.0, 2.0, 3.0]) / math.sqrt(14)
    r_vecs = np.outer(np.asarray(r_values, dtype=np.float64), direction)

    chunks = [kvec[i:i + BRUTE_FORCE_CHUNK] for i in range(0, len(kvec), BRUTE_FORCE_CHUNK)]
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(chunks))) as pool:
        futures = [
            pool.submit(_brute_force_chunk, c, q_perp2, r_vecs, pot, gas, low_density)
            for c in chunks
            ]
        total = np.zeros(len(r_vecs))
        for f in futures:
            total += f.result()

    logger.debug("brute force kernel on %d x %d points", len(kvec), len(q_perp2))
    # (2 pi)^-3 for the k integral and (2 pi)^-2 from C(k)
    return np.asarray(total * hk**3 * hq**2 / (2 * math.pi)**5, dtype=np.float64)


@dataclass(frozen=True, slots=True)
class KernelResult:
    """
    Tabulated F(r) and C(k), with the localization rate of the same gas and potential
    """
    r_values: RealArray
    F_values: RealArray
    k_values: RealArray
    C_values: RealArray
    D: float
    route: Route = "via-ck"

    def write_kernel_csv(self, path: PathLike) -> None:
        """
        Writes r,F rows
        """
        write_csv(path, ["r", "F"], zip(self.r_values, self.F_values))

    def write_coefficient_csv(self, path: PathLike) -> None:
        """
        Writes k,C rows
        """
        write_csv(path, ["k", "C"], zip(self.k_values, self.C_values))


def kernel_table(
    pot: Potential,
    gas: GasParams,
    r_values: Sequence[float],
    k_values: Sequence[float],
    k_cutoff: Optional[float] = None,
    low_density: bool = False,
    ) -> Result[KernelResult, Union[InvalidParams, CutoffRequired, DensityTooHigh,
                                    QuadratureFailure]]:
    """
    F on r_values (in order), C on k_values by quadrature, and D from the k^4 moment
    """
    if low_density and gas.max_occupation >= LOW_DENSITY_MAX_OCCUPATION:
        return Err(DensityTooHigh(f"largest occupation {gas.max_occupation:.4g} is not << 1"))

    F: List[float] = []
    for r in r_values:
        if Err.is_instance(f := kernel_direct(r, pot, gas, low_density)):
            return f
        F.append(Ok.unwrap(f))

    C: List[float] = []
    for k in k_values:
        if Err.is_instance(c := lindblad_coefficient(k, pot, gas, low_density)):
            return c
        C.append(Ok.unwrap(c))

    if Err.is_instance(D := localization_rate(pot, gas, k_cutoff, low_density)):
        return D

    return Ok(
        KernelResult(
            np.asarray(r_values, dtype=np.float64),
            np.asarray(F),
            np.asarray(k_values, dtype=np.float64),
            np.asarray(C),
            Ok.unwrap(D),
            )
        )


def kernel_summary(D_moment: float, D_fit: float, pot: Potential,
                   gas: GasParams) -> Dict[str, Any]:
    """
    Summary record of both localization rate routes
    """
    return {
        "D_moment_route": D_moment,
        "D_fit_route": D_fit,
        "relative_gap": abs(D_fit - D_moment) / abs(D_moment) if D_moment else 0.0,
        "potential": asdict(pot),
        "gas": asdict(gas),
        }


def write_kernel_summary(path: PathLike, D_moment: float, D_fit: float, pot: Potential,
                         gas: GasParams) -> None:
    """
    Writes kernel_summary as json
    """
    write_json(path, kernel_summary(D_moment, D_fit, pot, gas))


_BOSE = GasParams(m=1.0, beta=1.0, mu=-0.5)
_BOLTZMANN = GasParams(m=1.0, beta=1.0, mu=-0.5, statistics="boltzmann")
_GAUSSIAN = Potential("gaussian", 1.0, 1.0)


@test
def test_occupation() -> None:
    """
    Tests the Bose pole, the Boltzmann tail and the ln 2 point
    """
    assert_close(Ok.unwrap(thermal_occupation(math.log(2), "bose")), 1.0, rel=1e-15)
    assert isinstance(Err.get(thermal_occupation(0.0, "bose")), DivergentOccupation)

    x = 20.0
    bose = Ok.unwrap(thermal_occupation(x, "bose"))
    boltzmann = Ok.unwrap(thermal_occupation(x, "boltzmann"))
    assert_close(bose, boltzmann, rel=2 * math.exp(-x))

    assert_close(Ok.unwrap(occupation(0.0, _BOSE)), _BOSE.max_occupation, rel=1e-15)
    assert Err.is_instance(GasParams.create(1.0, 1.0, 0.0))


@test
def test_born_amplitude() -> None:
    """
    Tests forward scattering, the contact potential and the Gaussian e^-1 point
    """
    m = 2.0
    k = [0.3, -1.0, 0.5]
    assert_close(born_amplitude(k, k, _GAUSSIAN, m), m / (2 * math.pi), rel=1e-15)

    contact = Potential("contact", 0.7)
    assert_close(born_amplitude(k, [1.0, 0.0, 0.0], contact, m), m / (2 * math.pi) * 0.7, rel=1e-15)

    R = 0.5
    gaussian = Potential("gaussian", 1.3, R)
    amp = born_amplitude([math.sqrt(2) / R, 0.0, 0.0], [0.0, 0.0, 0.0], gaussian, m)
    assert_close(amp, m / (2 * math.pi) * 1.3 * math.exp(-1), rel=1e-14)


@test
def test_classical_scattering_amplitude() -> None:
    """
    Tests the amplitude records the system position only in its phase
    """
    k0, kf, V = [1.0, 0.0, 0.0], [0.0, 0.6, 0.8], 10.0
    at_origin = Ok.unwrap(classical_scattering_amplitude(k0, kf, [0, 0, 0], _GAUSSIAN, V))
    assert_close(abs(at_origin - 0.5j / V * _GAUSSIAN.nu(math.sqrt(2))), 0.0, abs_=1e-15)

    a = np.array([0.4, -1.1, 2.0])
    moved = Ok.unwrap(classical_scattering_amplitude(k0, kf, a, _GAUSSIAN, V))
    phase = np.exp(-1j * np.dot(np.array(kf) - np.array(k0), a))
    assert abs(moved - at_origin * phase) < 1e-15
    assert_close(abs(moved), abs(at_origin), rel=1e-14)

    forward = Ok.unwrap(classical_scattering_amplitude(k0, k0, a, _GAUSSIAN, V))
    assert_close(abs(forward - 0.5j / V * _GAUSSIAN.nu(0.0)), 0.0, abs_=1e-15)

    assert isinstance(Err.get(classical_scattering_amplitude(k0, [2.0, 0, 0], a, _GAUSSIAN, V)),
                      OffShell)


@test
def test_on_shell_plane() -> None:
    """
    Tests |q| = |q - k| on the plane q . k = k^2 / 2
    """
    rng = np.random.default_rng(5)
    for _ in range(100):
        k = rng.normal(size=3)
        khat = k / np.linalg.norm(k)
        perp = rng.normal(size=3)
        perp -= np.dot(perp, khat) * khat
        q = perp + khat * np.linalg.norm(k) / 2
        assert abs(np.linalg.norm(q) - np.linalg.norm(q - k)) < 1e-12 * max(1.0, np.linalg.norm(q))


@test
def test_coefficient_closed_forms() -> None:
    """
    Tests C(k) quadrature against the closed forms for both statistics and both density modes
    """
    for gas in (_BOSE, _BOLTZMANN):
        for pot in (_GAUSSIAN, Potential("contact", 1.0)):
            for low in (False, True):
                for k in (0.05, 0.7, 3.0):
                    quad = Ok.unwrap(lindblad_coefficient(k, pot, gas, low))
                    assert quad >= 0
                    assert_close(quad, coefficient_closed_form(k, pot, gas, low), rel=1e-8)

    k = 1.3
    base = Ok.unwrap(lindblad_coefficient(k, _GAUSSIAN, _BOSE))
    assert_close(Ok.unwrap(lindblad_coefficient(k, _GAUSSIAN.scaled(2.0), _BOSE)), 4 * base,
                 rel=1e-12)
    assert Err.is_instance(lindblad_coefficient(0.0, _GAUSSIAN, _BOSE))


@test
def test_kernel_shape() -> None:
    """
    Tests F(0) = 0, evenness, positivity, monotone growth and saturation
    """
    assert Ok.unwrap(kernel_direct(0.0, _GAUSSIAN, _BOSE)) == 0.0

    r = np.array([0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
    F = np.array([Ok.unwrap(kernel_direct(float(i), _GAUSSIAN, _BOSE)) for i in r])
    assert np.all(F > 0)
    assert np.all(np.diff(F[:5]) > 0)
    assert Ok.unwrap(kernel_direct(-1.0, _GAUSSIAN, _BOSE)) == F[3]

    saturation = Ok.unwrap(kernel_saturation(_GAUSSIAN, _BOSE))
    far = Ok.unwrap(kernel_direct(200.0, _GAUSSIAN, _BOSE))
    assert far > 0
    assert_close(far, saturation, rel=1e-3)
    assert F[-1] < saturation * (1 + 1e-3)


@test
def test_kernel_brute_force_agrees() -> None:
    """
    Tests the radial reduction against the full angular integral
    """
    r = [0.5, 1.0, 2.0]
    brute = kernel_brute_force(r, _GAUSSIAN, _BOSE)
    for i, value in zip(r, brute):
        assert_close(value, Ok.unwrap(kernel_direct(i, _GAUSSIAN, _BOSE)), rel=0.01)


@test
def test_localization_rate_routes() -> None:
    """
    Tests the k^4 moment and the small r fit agree, and the strength and cutoff rules
    """
    for gas in (_BOLTZMANN, _BOSE):
        moment = Ok.unwrap(localization_rate(_GAUSSIAN, gas))
        fit = Ok.unwrap(localization_rate_fit(_GAUSSIAN, gas))
        assert moment > 0
        assert_close(fit, moment, rel=0.005)

    doubled = Ok.unwrap(localization_rate(_GAUSSIAN.scaled(2.0), _BOSE))
    assert_close(doubled, 4 * Ok.unwrap(localization_rate(_GAUSSIAN, _BOSE)), rel=1e-10)

    contact = Potential("contact", 1.0)
    assert isinstance(Err.get(localization_rate(contact, _BOSE)), CutoffRequired)
    assert Ok.unwrap(localization_rate(contact, _BOSE, k_cutoff=2.0)) > 0


@test
def test_low_density_limit() -> None:
    """
    Tests the dilute kernel stays within max n of the full one and is refused for dense gases
    """
    dilute = GasParams(m=1.0, beta=1.0, mu=-math.log(201.0))
    assert_close(dilute.max_occupation, 0.005, rel=1e-12)

    for r in (0.3, 1.0, 4.0):
        full = Ok.unwrap(kernel_direct(r, _GAUSSIAN, dilute))
        low = Ok.unwrap(kernel_low_density(r, _GAUSSIAN, dilute))
        assert abs(low - full) / full < dilute.max_occupation

    assert isinstance(Err.get(kernel_low_density(1.0, _GAUSSIAN, _BOSE)), DensityTooHigh)


@test
def test_boltzmann_coefficient_shape() -> None:
    """
    Tests a classical gas scatters without a stimulated factor, so a contact potential gives
    C(k) k exp(beta k^2 / 8m) independent of k
    """
    contact = Potential("contact", 1.0)
    gas = GasParams(m=1.0, beta=1.0, mu=-0.5, statistics="boltzmann")

    reduced = [
        Ok.unwrap(lindblad_coefficient(k, contact, gas)) * k * math.exp(gas.beta * k * k / 8)
        for k in (0.1, 1.0, 2.0, 4.0)
        ]
    for value in reduced[1:]:
        assert_close(value, reduced[0], rel=1e-8)

    expected = gas.m**2 * gas.fugacity / (2 * math.pi * gas.beta)
    assert_close(reduced[0], expected, rel=1e-8)

    for k in (0.3, 2.5):
        assert coefficient_closed_form(k, contact, gas) == \
            coefficient_closed_form(k, contact, gas, low_density=True)


@test
def test_empty_gas() -> None:
    """
    Tests a gas with every occupation below the float range gives F = 0 without overflow
    """
    empty = GasParams(m=1.0, beta=1.0, mu=-800.0)
    assert empty.max_occupation == 0.0
    assert Ok.unwrap(thermal_occupation(800.0, "bose")) == 0.0

    assert Ok.unwrap(kernel_low_density(1.0, _GAUSSIAN, empty)) == 0.0
    table = Ok.unwrap(kernel_table(_GAUSSIAN, empty, [0.5, 2.0], [1.0], low_density=True))
    assert np.all(table.F_values == 0.0)
    assert np.all(table.C_values == 0.0)

    assert Err.is_instance(GasParams.create(1.0, 1.0, 1000.0, "boltzmann"))

@test
def test_number_density_normalization() -> None:
    """
    Tests (2 pi^2)^-1 int q^2 n_q dq against the closed forms
    """
    for gas in (_BOSE, _BOLTZMANN, GasParams(m=2.0, beta=0.5, mu=-0.01)):
        assert_close(Ok.unwrap(number_density_quadrature(gas)), number_density(gas), rel=1e-8)


@test
def test_kernel_table_outputs() -> None:
    """
    Tests the table keeps the requested order and writes both csv schemas
    """
    result = Ok.unwrap(kernel_table(_GAUSSIAN, _BOSE, [2.0, 0.0, 1.0], [0.5, 1.5]))
    assert result.F_values[1] == 0.0
    assert result.F_values[0] > result.F_values[2]
    assert result.D == Ok.unwrap(localization_rate(_GAUSSIAN, _BOSE))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "kernel.csv")
        result.write_kernel_csv(path)
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        assert lines[0] == "r,F" and len(lines) == 5
