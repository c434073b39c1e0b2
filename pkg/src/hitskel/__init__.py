"""hitskel: hitting-time skeletons of Brownian motion and the discrete
calculus of path functionals built on them."""

from .backend import backend_name
from .errors import (
    ConfigError,
    FunctionalEvaluationError,
    GridTooCoarseError,
    HitskelError,
    HorizonExceededError,
    MCBudgetError,
    ModeMismatchError,
    NonContractionError,
    NumericalUnderflowError,
    OracleGapError,
    QuadratureError,
    RejectionStarvationError,
    TerminalMismatchError,
)
from .exit_law import ASYMPTOTIC_HAZARD, TAIL_TIME, ExitLaw

__version__ = "0.1.0"

from .bsde import (  # noqa: E402  (kept after __version__ for reporting)
    BsdeSolution,
    EnergyReport,
    default_perturbations,
    energy_check,
    make_driver,
    solve_bsde,
)
from .limits import (
    ConvergenceReport,
    covariation,
    derivative_error,
    drift_reconstruction,
    energy,
    get_derivative_reference,
    local_derivative,
    local_generator,
    p_variation,
    pathwise_derivative_error,
    reference_ones,
    reference_twice_path,
    stability_diagnostic,
)
from .operators import (
    ExtendedFields,
    OperatorField,
    conditional_generator,
    decompose,
    derivative_at_events,
    extend_fields,
    generator_field,
    nabla,
    weak_generator_at_event,
)
from .renewal import History, next_event_batch, next_event_sample, residual_sample
from .skeleton import (
    INTRINSIC,
    PATH_DRIVEN,
    Mark,
    Skeleton,
    SkeletonConfig,
    coupling_gap,
    extract_from_path,
    generate_intrinsic,
    mesh_schedule,
)
from .stopping import (
    StoppingSolution,
    lattice_reference,
    solve_optimal_stopping,
    waiting_time_quadrature,
)
from .streams import parallel_map, resolve_workers, substream
from .structures import (
    PathFunctional,
    StepPath,
    StepProcess,
    build_canonical_structure,
    build_functional_structure,
    get_functional,
    list_functionals,
    register,
)

__all__ = [
    "ASYMPTOTIC_HAZARD",
    "TAIL_TIME",
    "ExitLaw",
    "backend_name",
    "__version__",
    # errors
    "HitskelError",
    "ConfigError",
    "FunctionalEvaluationError",
    "GridTooCoarseError",
    "HorizonExceededError",
    "MCBudgetError",
    "ModeMismatchError",
    "NonContractionError",
    "NumericalUnderflowError",
    "OracleGapError",
    "QuadratureError",
    "RejectionStarvationError",
    "TerminalMismatchError",
    # skeletons
    "INTRINSIC",
    "PATH_DRIVEN",
    "Mark",
    "Skeleton",
    "SkeletonConfig",
    "generate_intrinsic",
    "extract_from_path",
    "coupling_gap",
    "mesh_schedule",
    # renewal disintegration
    "History",
    "residual_sample",
    "next_event_sample",
    "next_event_batch",
    # structures
    "PathFunctional",
    "StepPath",
    "StepProcess",
    "build_functional_structure",
    "build_canonical_structure",
    "get_functional",
    "register",
    "list_functionals",
    # operators
    "OperatorField",
    "ExtendedFields",
    "derivative_at_events",
    "nabla",
    "weak_generator_at_event",
    "conditional_generator",
    "generator_field",
    "decompose",
    "extend_fields",
    # limits
    "ConvergenceReport",
    "energy",
    "covariation",
    "p_variation",
    "pathwise_derivative_error",
    "derivative_error",
    "get_derivative_reference",
    "reference_ones",
    "reference_twice_path",
    "drift_reconstruction",
    "stability_diagnostic",
    "local_derivative",
    "local_generator",
    # solvers
    "StoppingSolution",
    "solve_optimal_stopping",
    "lattice_reference",
    "waiting_time_quadrature",
    "BsdeSolution",
    "solve_bsde",
    "make_driver",
    "energy_check",
    "default_perturbations",
    "EnergyReport",
    # streams
    "substream",
    "resolve_workers",
    "parallel_map",
]
