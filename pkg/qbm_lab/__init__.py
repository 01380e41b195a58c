# main file
"""
A numerical laboratory for quantum Brownian motion: density matrix and phase space evolvers,
a collision Monte Carlo, and the decoherence kernel of a particle in a thermal gas
"""

__all__ = [
    "Result",
    "Ok",
    "Err",
    "QbmError",
    "InvalidParams",
    "ConfigInvalid",
    "NonHermitian",
    "NonHermitianTrace",
    "LeakageError",
    "CFLViolation",
    "StepTooLarge",
    "EmptyEnsemble",
    "DivergentOccupation",
    "OffShell",
    "QuadratureFailure",
    "CutoffRequired",
    "DensityTooHigh",
    "PhysicalParams",
    "Grid1D",
    "DensityMatrix",
    "WignerFunction",
    "ThermalEnvironment1D",
    "trace",
    "purity",
    "min_eigenvalue",
    "hermiticity_error",
    "check_leakage",
    "gaussian_state",
    "superposition_state",
    "squeezed_state",
    "displaced_packet_wigner",
    "thermal_wigner",
    "CollisionCoefficients",
    "elastic_collision",
    "decoherence_factor",
    "apply_collision_decoherence",
    "Ensemble",
    "run_collision_ensemble",
    "fit_decay_rate",
    "mean_square_momentum",
    "wigner_transform",
    "inverse_wigner_transform",
    "wigner_moments",
    "BoltzmannOperator",
    "boltzmann_step",
    "fokker_planck_step",
    "evolve_free_decoherence",
    "evolve_caldeira_leggett",
    "evolve_lindblad",
    "build_qbm_lindblad",
    "qbm_hamiltonian",
    "LindbladOperator",
    "EvolverConfig",
    "evolve",
    "DiagnosticsSeries",
    "Potential",
    "GasParams",
    "lindblad_coefficient",
    "kernel_direct",
    "kernel_low_density",
    "localization_rate",
    "localization_rate_fit",
    "kernel_brute_force",
    "ExperimentConfig",
    "RunManifest",
    "RunContext",
    "register",
    "experiments",
    "configure",
    "run",
    ]

import typing as _typing

from ._result import Result, Ok, Err
from ._types import (
    QbmError, InvalidParams, ConfigInvalid, NonHermitian, NonHermitianTrace, LeakageError,
    CFLViolation, StepTooLarge, EmptyEnsemble, DivergentOccupation, OffShell, QuadratureFailure,
    CutoffRequired, DensityTooHigh, PhysicalParams, Grid1D, DensityMatrix, WignerFunction,
    ThermalEnvironment1D
    )
from ._core import (
    trace, purity, min_eigenvalue, hermiticity_error, check_leakage, gaussian_state,
    superposition_state, squeezed_state, displaced_packet_wigner, thermal_wigner
    )
from ._kinematics import (
    CollisionCoefficients, elastic_collision, decoherence_factor, apply_collision_decoherence,
    Ensemble, run_collision_ensemble, fit_decay_rate, mean_square_momentum
    )
from ._wigner import (
    wigner_transform, inverse_wigner_transform, wigner_moments, BoltzmannOperator,
    boltzmann_step, fokker_planck_step
    )
from ._evolvers import (
    evolve_free_decoherence, evolve_caldeira_leggett, evolve_lindblad, build_qbm_lindblad,
    qbm_hamiltonian, LindbladOperator, EvolverConfig, evolve, DiagnosticsSeries
    )
from ._kernel import (
    Potential, GasParams, lindblad_coefficient, kernel_direct, kernel_low_density,
    localization_rate, localization_rate_fit, kernel_brute_force
    )
from ._config import ExperimentConfig
from ._experiments import RunManifest, RunContext, register, experiments, configure, run


class _VersionInfo(_typing.NamedTuple):
    major: int
    minor: int
    micro: int
    releaselevel: _typing.Literal["alpha", "beta", "candidate", "final"]
    serial: int

    def as_pep440_str(self) -> str:
        """
        Formats a _VersionInfo into a pep440 compliant a-b-rc string
        """
        _table = {"alpha": "a", "beta": "b", "candidate": "rc", "final": ""}
        serial = str(self.serial) if self.serial else ""
        return f"{self.major}.{self.minor}.{self.micro}{_table[self.releaselevel]}{serial}"


version_info = _VersionInfo(0, 1, 0, "alpha", 0)
__version__ = version_info.as_pep440_str()
