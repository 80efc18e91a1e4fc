"""Pseudo-spectral simulator and scattering diagnostics for long-range
nonlinear Schroedinger equations on periodic boxes in one and two dimensions."""

from .errors import (
    ConfigError,
    DomainError,
    GridMismatchError,
    NlsdiagError,
    NonFiniteFieldError,
    ScopeError,
    SolverAbortError,
    StepSizeError,
    TruncationLevelError,
    WindowCoverageError,
)
from .fields import (
    InitialDataSpec,
    InitialDataTerm,
    LocalizedComponent,
    LocalizedPathSpec,
    NonlinearitySpec,
    PotentialComponent,
    PotentialSpec,
    RadiationSpec,
    make_field,
    sample_localized,
    sample_potential,
    synth_state,
)
from .grids import (
    GridField,
    SpatialGrid,
    forward_transform,
    free_propagate,
    inner_product,
    inverse_transform,
    l2_norm,
    modulate,
    norm,
    tilde_transform,
    verify_factorization,
)
from .solver import (
    SolverConfig,
    Trajectory,
    evolve,
    hartree_potential,
    strichartz_window_norm,
)
from .glassey import (
    GrowthFit,
    PairingSeries,
    alpha,
    choose_test_function,
    compute_series,
    derivative_check,
    glassey_integral,
    growth_fit,
    main_term,
    main_term_limit,
    pairing,
    potential_term,
    residual_decomposition,
)
from .theorem3 import (
    AtomicMeasure,
    CutoffFamily,
    build_cutoff,
    hypothesis_check,
    l_term_bound_check,
    nu_from_paths,
    standard_bump,
    standard_step,
    test_sequence,
)

__version__ = "0.1.0"
