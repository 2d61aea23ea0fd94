"""Maximum-likelihood quantum state reconstruction from incompatible homodyne data."""

__version__ = "0.1.0"

from .fock import (
    SqueezeParams,
    StateVector,
    coherent_state,
    hermite_function,
    hermite_functions,
    number_state,
    quadrature_amplitude,
    squeezed_vacuum,
)
from .maxlik import (
    DensityMatrix,
    ReconstructionResult,
    SolverConfig,
    extremal_residuals,
    log_likelihood,
    r_operator,
    relative_entropy,
    solve_diagonal,
    solve_mixed,
    solve_pure,
)
from .measurement import (
    BinGrid,
    FrequencyData,
    ProjectorKind,
    ProjectorSet,
    born_probability,
    build_random_phase_povm,
    build_tomography_projectors,
    correlation_matrix,
    drop_empty_bins,
    simulate_homodyne,
    simulate_random_phase,
)
from .subspace import overlap_operator, r_diagonal, recoverable_subspace, renormalize
