"""Distributed traffic-light and CAV coordination for a mixed intersection."""

from .model import (
    CAV,
    HDV,
    HorizonParams,
    Intersection,
    LaneGeometry,
    LightState,
    ModelParams,
    VehicleState,
    WorldState,
    brake_rollout,
    has_lateral_conflict,
    kappa_bounds,
    light_schedule,
    step_dynamics,
)
from .qp import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    AdmmCache,
    QpProblem,
    QpSolution,
    SolverConfig,
    solve_penalized_qp,
    solve_qp,
)
from .mip import (
    IntVar,
    MipBudgetError,
    MipProblem,
    MipSolution,
    binary_var,
    kappa_var,
    solve_mip,
    solve_penalized_tlc,
)

__version__ = "0.1.0"
