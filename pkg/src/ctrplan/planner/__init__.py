"""Path planning: transcription, obstacle relaxation and the homotopy driver."""
from ctrplan.planner.homotopy import (
    PlannerConfig,
    homotopy_solve,
    plan,
    plan_hemispheres,
    planner_solver_options,
    solve_ppp,
)
from ctrplan.planner.problem import (
    SHIFT_DISTANCE,
    Decision,
    PlanBounds,
    PlanProblem,
    PlanResult,
    closest_on_segment,
    default_fixed_idx,
    relax,
    shift_targets,
)
from ctrplan.planner.scenarios import (
    TOY_ENTRY,
    random_straight_decision,
    skull_entry,
    straight_decision,
    toy_problem,
)
from ctrplan.planner.transcription import Layout, Nlp, transcribe

__all__ = [
    "Decision",
    "Layout",
    "Nlp",
    "PlanBounds",
    "PlanProblem",
    "PlanResult",
    "PlannerConfig",
    "SHIFT_DISTANCE",
    "TOY_ENTRY",
    "closest_on_segment",
    "default_fixed_idx",
    "homotopy_solve",
    "plan",
    "plan_hemispheres",
    "planner_solver_options",
    "random_straight_decision",
    "relax",
    "shift_targets",
    "skull_entry",
    "solve_ppp",
    "straight_decision",
    "toy_problem",
    "transcribe",
]
