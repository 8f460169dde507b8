"""Safe navigation for unknown nonlinear systems.

The stack identifies a lifted linear surrogate of the plant from trajectory
data, calibrates its one-step prediction error with split conformal
prediction, and closes the loop with a convex QP-based MPC whose obstacle
constraints are tightened by the calibrated margin.  A lightweight waypoint
generator supplies tracking references over the tightened geometry.
"""

from koopnav.simulation import (
    Control,
    ControlBounds,
    ObstacleSpec,
    State,
    Transition,
    collect_dataset,
    min_obstacle_distance,
    obstacle_center,
    unicycle_step,
    wrap_angle,
)
from koopnav.koopman import KoopmanEdmdc, get_dictionary
from koopnav.conformal import (
    CalibrationResult,
    Quantile,
    ScoreSet,
    calibrate,
    conformal_quantile,
    empirical_coverage,
    nonconformity_scores,
    tightening_margin,
    weighted_quantile,
)
from koopnav.halfspaces import ConstraintSet, HalfSpace, build_constraint_set, halfspace_from_circle, tighten
from koopnav.qp import QpProblem, QpSettings, QpSolution, AdmmQpSolver, kkt_residuals
from koopnav.mpc import MpcConfig, MpcController, MpcStepResult, build_mpc_qp
from koopnav.waypoints import RefGenConfig, goal_reached, next_waypoint
from koopnav.pipeline import Scenario, offline_phase, run_closed_loop

__version__ = "0.1.0"
