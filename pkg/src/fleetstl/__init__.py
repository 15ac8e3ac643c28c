"""Fleet inspection mission planning via smooth STL robustness maximization."""

from .formula import (
    And,
    Always,
    AxisBand,
    Eventually,
    Formula,
    HorizonError,
    Implies,
    Next,
    Not,
    Or,
    PairDistance,
    Pred,
    SegmentDistanceBand,
    Signal,
    SpeedBand,
    eval_bool,
    horizon,
    to_text,
)
from .parser import BindContext, StlSyntaxError, UnknownIdentifierError, parse
from .robustness import (
    GradientVector,
    RobustnessReport,
    evaluate,
    grad_rho_smooth,
    rho,
    rho_smooth,
    smooth_max,
    smooth_min,
)
from .dynamics import Trajectory, VehicleSpec, check_feasible, rollout, time_grid
from .mission import (
    BladeSegment,
    Box,
    MissionConfig,
    bind_context,
    build_formula,
    dist_to_segment,
    load_config,
    validate,
)
from .router import (
    EdgeSelection,
    HorizonTooShort,
    RoutePlan,
    RoutingGraph,
    build_graph,
    plan_routes,
    repair_subtours,
    seed_trajectories,
    solve_milp,
)
from .optimizer import SolveOutcome, objective_and_gradient, optimize, signal_from_trajectories
from .pipeline import InvalidMission, MissionPlan, plan_mission
from .replanner import (
    Event,
    ExecutionState,
    ResidualInfeasible,
    execute_with_replanning,
    load_events,
    replan,
    should_replan,
    simulate,
)

__version__ = "0.1.0"
