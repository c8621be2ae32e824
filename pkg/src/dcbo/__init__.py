"""Time-discrete consensus-based optimization with common multiplicative noise."""

from .certificates import (
    CertificateResult,
    InitialLaw,
    check_theorem_3_2,
    check_theorem_A1,
    empirical_error,
    laplace_estimate,
    laplace_quadrature,
    well_preparedness,
)
from .dynamics import RunConfig, RunResult, RunTrace, replay_check, run, run_batch, step
from .ensemble import Ensemble, ensemble_stats, gibbs_consensus
from .exceptions import (
    CBOError,
    ConfigError,
    MetadataError,
    ObjectiveEvaluationError,
    ParameterError,
    PreconditionError,
    UsageError,
)
from .noise import NoiseScheme, NoiseStream, generic_scheme, make_scheme, sample_eta
from .objectives import Objective, builtin, polynomial, validate_metadata
from .stability import check_stability, contraction_factor, moment_table, slln_statistic

__version__ = "0.1.0"
