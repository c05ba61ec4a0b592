"""Fast Markov switching, averaging and singular-perturbation checks."""

__version__ = "0.1.0"

from .chain import (
    ChainAnalysis,
    GeneratorMatrix,
    JumpPath,
    NumericalError,
    analyze_chain,
    build_generator,
    make_stream,
    potential_matrix,
    simulate_chain,
    stationary_distribution,
    transition_semigroup,
)
from .estimators import AveragedSystem, ChainAnalyzer
from .montecarlo import (
    CertificationError,
    EstimateTable,
    ExperimentSpec,
    run_ccc_study,
    run_deviation_study,
    run_moment_bound_study,
)
from .perturbation import (
    apply_B,
    apply_Bhat,
    apply_coupled_generator,
    build_corrector,
    residual_check,
    theta,
)
from .system import (
    AveragedPath,
    CatalogField,
    SwitchedPath,
    VelocityField,
    averaged_drift,
    check_conditions,
    integrate_averaged,
    integrate_switched,
)
from ._validation import ValidationError
