"""Constant step-size linear stochastic approximation with iterate averaging."""

from ._kernels import BACKEND
from .errors import (
    ContractNotCertified,
    Defective,
    Diverged,
    ExcludedAlpha,
    LsaError,
    MissingDiagnostics,
    NonErgodic,
    NonFinite,
    NotConvexConcave,
    NotHurwitz,
    NumericError,
    SchemaError,
    SingularOperator,
)
from .lsa import Record, RunConfig, Schedule, Trajectory, run, run_replicates, telescope_residual
from .oracles import NoiseModel, ProblemSpec
from .spectral import Regime, SpectralInfo, analyze

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractNotCertified",
    "Defective",
    "Diverged",
    "ExcludedAlpha",
    "LsaError",
    "MissingDiagnostics",
    "NonErgodic",
    "NonFinite",
    "NotConvexConcave",
    "NotHurwitz",
    "NumericError",
    "SchemaError",
    "SingularOperator",
    "Record",
    "RunConfig",
    "Schedule",
    "Trajectory",
    "run",
    "run_replicates",
    "telescope_residual",
    "NoiseModel",
    "ProblemSpec",
    "Regime",
    "SpectralInfo",
    "analyze",
]
