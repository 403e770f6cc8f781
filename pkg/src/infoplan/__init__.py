"""Information-driven low-thrust trajectory planning in the Earth-Moon CRTBP.

The package plans observer trajectories that trade control effort against
the mutual information gathered about an augmented observer/target state
from satellite-to-satellite measurements, using successive convexification
with an embedded second-order-cone solver, and evaluates the results with
a linear-covariance harness.
"""

from .dynamics import (
    EARTH_MOON_DU_KM,
    EARTH_MOON_MU,
    EARTH_MOON_TU_S,
    FohControl,
    PropagationError,
    SingularPositionError,
    Stm,
    SystemParameters,
    TimeGrid,
    crtbp_accel,
    crtbp_hessian,
    crtbp_jacobian,
    jacobi_constant,
    process_noise_segment,
    propagate,
    propagate_with_stm,
    reference_period,
    stm_history,
    sundman_nodes,
)
from .measurements import (
    MeasurementKind,
    MeasurementModel,
    ZeroRangeError,
    measure,
    measure_hessian,
    measure_jacobians,
)
from .information import (
    AugmentedPrior,
    InformationBlocks,
    NotPositiveDefiniteError,
    ObservationWindow,
    WindowSystem,
    assemble_blocks,
    assemble_window_system,
    mi_gradient,
    mi_linearize,
    mutual_information,
)
from .discretization import (
    ControlAffineSystem,
    DiscreteSegment,
    TrajectoryIterate,
    defects,
    discretize_segment,
    foh_discretize,
    thrust_bounds,
)
from .socp import ConeDims, SocpResult, solve_socp
from .subproblem import (
    ConicProgram,
    CvxoptConeSolver,
    EmbeddedConeSolver,
    SubproblemSolution,
    SubproblemStatus,
    build_subproblem,
    solve_subproblem,
)
from .scvx import (
    ScvxReport,
    ScvxSettings,
    accuracy_ratio,
    linearized_cost,
    nonlinear_cost,
    solve,
    trust_region_step,
)
from .evaluation import (
    CovarianceHistory,
    ParetoPoint,
    crlb_run,
    pareto_sweep,
    sequential_mutual_information,
    total_impulse,
)
from .scenario import Scenario, ScenarioError, ScenarioWindow, load_scenario

__version__ = "0.1.0"
