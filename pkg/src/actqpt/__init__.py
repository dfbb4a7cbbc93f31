"""Assumption-free compressive quantum process tomography.

Simulates adaptive process characterisation: random probe states, adaptive
output-basis measurements, maximum-likelihood + minimum-entropy state
estimation, and convex certification of when the accumulated data pin down
a unique process.
"""

from .core import (
    ChoiOperator,
    DensityOperator,
    SubsystemShape,
    VonNeumannBasis,
    apply_process,
    computational_basis,
    haar_random_pure,
    identity_choi,
    kraus_to_choi,
    partial_trace,
    psd_unit_trace_project,
    random_full_rank_state,
    random_product_pure,
    von_neumann_entropy,
)
from .measurement import (
    MeasurementRecord,
    NoiseModel,
    ProcessOracle,
    born_probabilities,
    estimate_relative_traces,
    measure,
)
from .estimation import (
    ApgConfig,
    MinEntConfig,
    MlEstimate,
    log_likelihood,
    likelihood_gradient,
    ml_probabilities,
    minent_estimator,
)
from .conic import (
    ConicProblem,
    ConicSolution,
    SplittingConeSolver,
    build_process_icc_problem,
    build_state_icc_problem,
)
from .icc import (
    CertificationError,
    IccResult,
    IccWitness,
    LsFitResult,
    draw_witness,
    ls_fit,
    process_icc,
    state_icc,
)

__version__ = "0.1.0"
