"""Galerkin simulation of the stochastic KdV equation driven by Levy noise."""

__version__ = "0.1.0"

from . import backend
from .coefficients import (
    AdditiveJumps,
    BoundedMultiplicativeJumps,
    DiagonalDampedDiffusion,
    DiffusionModel,
    LevyNoiseModel,
    LinearJumps,
    ValidationReport,
    ZeroDiffusion,
    ZeroJumps,
    k_lambda,
    state_sampler,
    validate_hypotheses,
)
from .config import ConfigError, ExperimentConfig
from .estimators import (
    AldousReport,
    EnsembleBlowUp,
    EnsembleStatistics,
    aldous_check,
    estimate_moments,
    ito_decomposition,
    minimal_taylor_constants,
    taylor_remainder_check,
)
from .noise import (
    IntensityMeasure,
    JumpEvent,
    WienerPath,
    compensated_integral,
    sample_prm,
    sample_wiener,
)
from .solver import BlowUpError, GalerkinSolver, SolverConfig, Trajectory, simulate
from .spectral import CutoffSpec, GalerkinState, NormKind, SpectralGrid, project
