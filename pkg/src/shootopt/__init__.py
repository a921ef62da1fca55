"""Direct-shooting trajectory optimization for second-order systems.

The package couples velocity-aware Euler/RK4 transcription schemes with a
self-contained augmented-Lagrangian NLP solver and an accuracy-analysis
toolkit (spline reconstruction, transcription-error metrics, convergence
studies), plus a JSON-config experiment harness.
"""

from .analysis import (
    ConvergenceResult,
    ErrorReport,
    SplineTrajectory,
    config_error,
    convergence_study,
    euler_bound,
    interval_error,
    reconstruct,
    rk4_bound,
    romberg,
    total_error,
)
from .dynamics import (
    BENCHMARK_NAMES,
    FirstOrderSystem,
    HighOrderSystem,
    SecondOrderSystem,
    augment,
    eval_accel,
    make_benchmark,
)
from .errors import ConfigError, DimensionMismatch, EvaluationError
from .ocp import (
    NlpProgram,
    OptimalControlProblem,
    QuadraticStageCost,
    QuadraticTerminalCost,
    build_nlp,
)
from .solver import (
    SolveReport,
    SolveStatus,
    SolverOptions,
    check_derivatives,
    gradient,
    solve,
)
from .transcription import (
    KnotTrajectory,
    Scheme,
    SchemeKind,
    defect,
    rollout,
    step_euler_order_n,
    step_first_euler,
    step_first_rk4,
    step_second_euler,
    step_second_rk4,
)

__version__ = "0.1.0"
