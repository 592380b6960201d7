"""Gradient flows, critical points and landing checks on polynomial zero sets."""

from .critical import (
    ConditionReport,
    CriticalLevelSet,
    CriticalPoint,
    check_condition1,
    classify,
    critical_level_sets,
    find_critical_points,
)
from .cli import (
    BUILTIN,
    ExperimentReport,
    ProblemSpec,
    ValidationError,
    builtin_problem,
    emit_report,
    load_problem,
    load_report,
    main,
    problem_objects,
    run_experiment,
    spec_from_mapping,
)
from .flow import (
    ArcBudget,
    Converged,
    FlowTrajectory,
    ReachLevel,
    StepControl,
    TimeBudget,
    ascend_to_level,
    descend_to_level,
    flow_limit,
    integrate,
    trajectory_csv_text,
    write_trajectory_csv,
)
from .levelmap import (
    LevelPair,
    LevelSetMap,
    UnstableSlice,
    check_condition2,
    check_condition4,
    level_map,
    roundtrip_error,
    unstable_slice,
)
from .lojasiewicz import (
    FitError,
    LojasiewiczFit,
    choose_epsilon,
    default_delta,
    estimate_fit,
    length_bound,
    verify_flow_estimates,
)
from .polynomial import (
    ParseError,
    Polynomial,
    PolynomialSystem,
    gradient,
    parse_polynomial,
)
from .sampling import band_samples, ball_probes, ring_probes, substream, unit_directions
from .space import (
    RetractionError,
    SingularSpace,
    project_to_level_set,
    riemannian_grad,
)

__version__ = "0.1.0"

__all__ = [
    "ArcBudget",
    "BUILTIN",
    "ConditionReport",
    "Converged",
    "CriticalLevelSet",
    "CriticalPoint",
    "ExperimentReport",
    "FitError",
    "FlowTrajectory",
    "LevelPair",
    "LevelSetMap",
    "LojasiewiczFit",
    "ParseError",
    "Polynomial",
    "PolynomialSystem",
    "ProblemSpec",
    "ReachLevel",
    "RetractionError",
    "SingularSpace",
    "StepControl",
    "TimeBudget",
    "UnstableSlice",
    "ValidationError",
    "ascend_to_level",
    "ball_probes",
    "band_samples",
    "builtin_problem",
    "check_condition1",
    "check_condition2",
    "check_condition4",
    "choose_epsilon",
    "classify",
    "critical_level_sets",
    "default_delta",
    "descend_to_level",
    "emit_report",
    "estimate_fit",
    "find_critical_points",
    "flow_limit",
    "gradient",
    "integrate",
    "length_bound",
    "level_map",
    "load_problem",
    "load_report",
    "main",
    "parse_polynomial",
    "problem_objects",
    "project_to_level_set",
    "ring_probes",
    "riemannian_grad",
    "roundtrip_error",
    "run_experiment",
    "spec_from_mapping",
    "substream",
    "unit_directions",
    "trajectory_csv_text",
    "unstable_slice",
    "verify_flow_estimates",
    "write_trajectory_csv",
    "__version__",
]
