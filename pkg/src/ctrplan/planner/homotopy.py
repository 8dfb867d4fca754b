"""Obstacle homotopy: solve with exiled obstacles, then walk them back home."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ctrplan.optim import SolveResult, SolverOptions, WarmStart, solve_nlp
from ctrplan.planner.problem import (
    Decision,
    PlanProblem,
    PlanResult,
    default_fixed_idx,
    relax,
    shift_targets,
)
from ctrplan.planner.scenarios import straight_decision
from ctrplan.planner.transcription import Nlp

log = logging.getLogger(__name__)


# the path constraints are O(1) after scaling; a stiffer first penalty saves
# several outer iterations on cold starts
PLANNER_SOLVER_DEFAULTS = {"mu_init": 100.0}


def planner_solver_options(**overrides) -> SolverOptions:
    return SolverOptions(**{**PLANNER_SOLVER_DEFAULTS, **overrides})


@dataclass
class PlannerConfig:
    """Knobs of one planning run.

    ``step_max_iter`` caps the inner iterations of each homotopy step
    (lambda > 0 solves only), leaving the seed and lambda = 0 solves on the
    general ``solver.max_iter`` budget.
    """

    nodes_per_segment: int = 11
    substeps: int = 1
    delta: float = 0.1
    derivatives: str = "ad"
    solver: SolverOptions = field(default_factory=planner_solver_options)
    # warm-start primal push, in the spirit of warm_start_bound_push
    bound_push: float = 1e-8
    fixed_idx: frozenset | None = None
    step_max_iter: int | None = None

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.nodes_per_segment < 2:
            raise ValueError("nodes_per_segment must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        solver = planner_solver_options(**d.pop("solver", {}))
        fixed = d.pop("fixed_idx", None)
        keys = ("nodes_per_segment", "substeps", "delta", "derivatives", "bound_push", "step_max_iter")
        known = {k: d[k] for k in keys if k in d}
        return cls(solver=solver, fixed_idx=None if fixed is None else frozenset(fixed), **known)

    def to_dict(self) -> dict:
        return {
            "nodes_per_segment": self.nodes_per_segment,
            "substeps": self.substeps,
            "delta": self.delta,
            "derivatives": self.derivatives,
            "bound_push": self.bound_push,
            "fixed_idx": None if self.fixed_idx is None else sorted(self.fixed_idx),
            "step_max_iter": self.step_max_iter,
            "solver": asdict(self.solver),
        }

    def for_step(self) -> "PlannerConfig":
        if self.step_max_iter is None:
            return self
        return replace(self, solver=replace(self.solver, max_iter=self.step_max_iter))


def _nlp(problem, cfg: PlannerConfig) -> Nlp:
    return Nlp(problem, cfg.nodes_per_segment, cfg.substeps, cfg.derivatives)


def solve_ppp(problem: PlanProblem, x0, cfg: PlannerConfig, warm: WarmStart | None = None):
    """One NLP solve; ``x0`` is an internal vector or a Decision to roll out."""
    nlp = _nlp(problem, cfg)
    if isinstance(x0, Decision):
        x0 = nlp.rollout(x0)
    if warm is not None:
        warm = replace(warm, bound_push=cfg.bound_push)
    return nlp, solve_nlp(nlp, x0, warm=warm, options=cfg.solver)


def _result(nlp: Nlp, sol: SolveResult, lam: float, status: str, stats, stage=""):
    d, _, ell = nlp.unpack(sol.x)
    path = nlp.path(sol.x)
    path.info = {"feasibility": sol.feas, "stationarity": sol.stat}
    return PlanResult(d, path, float(ell[-1]), lam, status, stats, stage)


def _record(lam, sol: SolveResult, nlp: Nlp):
    return {
        "lambda": lam,
        "status": sol.status,
        "iterations": sol.inner_iterations,
        "outer_iterations": sol.outer_iterations,
        "objective": float(sol.f * nlp.length_scale),
        "feasibility": sol.feas,
    }


def homotopy_solve(
    problem: PlanProblem,
    d0,
    delta: float,
    c_init,
    cfg: PlannerConfig | None = None,
    solve=solve_ppp,
) -> PlanResult:
    """Continuation in lambda from exiled obstacle centres ``c_init`` (lambda = 0)
    to the true ones (lambda = 1), warm-starting each solve from the last.

    Stops at the first failed solve and returns the last successful one.
    ``d0`` is a Decision or an internal vector; ``solve`` can be replaced to
    inject failures.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    cfg = cfg or PlannerConfig()
    step_cfg = cfg.for_step()
    lam = 0.0
    x, warm = d0, None
    last = None
    stats = []
    while True:
        nlp, sol = solve(relax(problem, lam, c_init), x, cfg if lam == 0.0 else step_cfg, warm)
        stats.append(_record(lam, sol, nlp))
        log.info("lambda=%.3f %s iterations=%d", lam, sol.status, sol.inner_iterations)
        if not sol.success:
            break
        last = (nlp, sol, lam)
        if lam >= 1.0:
            break
        x, warm = sol.x, sol.warm
        lam = min(1.0, lam + delta)
        if 1.0 - lam < 1e-9:  # absorb rounding in repeated addition
            lam = 1.0
    if last is None:
        return PlanResult(None, None, float("nan"), 0.0, "infeasible", stats, "homotopy")
    nlp, sol, lam_ok = last
    status = "optimal" if lam_ok >= 1.0 else "homotopy_stalled"
    return _result(nlp, sol, lam_ok, status, stats, "homotopy")


def _plan_one(problem: PlanProblem, d_init, cfg: PlannerConfig) -> PlanResult:
    fixed = sorted(problem.fixed_idx)
    seed_pb = problem.with_obstacles([problem.obstacles[j] for j in fixed], range(len(fixed)))
    nlp, sol = solve_ppp(seed_pb, d_init, cfg)
    if not sol.success:
        return PlanResult(None, None, float("nan"), 0.0, "infeasible",
                          [_record(0.0, sol, nlp)], "seed")
    if not problem.free_idx:
        # nothing to move: the seed problem is the original one
        return _result(nlp, sol, 1.0, "optimal", [_record(1.0, sol, nlp)], "seed")
    path = nlp.path(sol.x)
    c_init = shift_targets(problem, path.p[0], path.p[-1])
    return homotopy_solve(problem, sol.x, cfg.delta, c_init, cfg)


def plan(problem: PlanProblem, d_init: Decision | None = None, cfg: PlannerConfig | None = None) -> PlanResult:
    """Seed solve with the fixed obstacles, exile the rest, run the homotopy.

    ``problem.fixed_idx`` is used as given unless ``cfg.fixed_idx`` overrides
    it (see :func:`default_fixed_idx` for the usual choice).  For targets
    straddling the hemisphere plane see :func:`plan_hemispheres`.
    """
    cfg = cfg or PlannerConfig()
    fixed = cfg.fixed_idx if cfg.fixed_idx is not None else problem.fixed_idx
    problem = replace(problem, fixed_idx=frozenset(fixed))
    if d_init is None:
        d_init = straight_decision(problem)
    return _plan_one(problem, d_init, cfg)


def plan_hemispheres(problems, d_inits=None, cfg: PlannerConfig | None = None) -> PlanResult:
    """Run :func:`plan` once per admissible hemisphere and keep the shortest optimal path."""
    results = [plan(pb, None if d_inits is None else d_inits[i], cfg) for i, pb in enumerate(problems)]
    ok = [r for r in results if r.status == "optimal"]
    if ok:
        return min(ok, key=lambda r: r.objective)
    order = {"homotopy_stalled": 0, "infeasible": 1}
    return min(results, key=lambda r: (order[r.status], -r.lambda_reached))


__all__ = [
    "PLANNER_SOLVER_DEFAULTS",
    "PlannerConfig",
    "default_fixed_idx",
    "homotopy_solve",
    "plan",
    "plan_hemispheres",
    "planner_solver_options",
    "solve_ppp",
]
