"""
Planning around a plate with the obstacle homotopy
==================================================

A ball skull of radius 0.1 m, a small target below the top and a plate
across the straight chord.  The plate is first moved away, the obstacle
free problem is solved, and the plate is then walked back in steps of 0.1.

Takes about half a minute, most of it compiling the transcription once.
Set CTRPLAN_JAX_CACHE to a directory to reuse the compiled code next time.
"""
import logging
import sys
from pathlib import Path

import numpy as np

from ctrplan.cli import geometry_to_dict, obj_text
from ctrplan.geometry import q_dist_sq
from ctrplan.kinematics import shoot_forward
from ctrplan.planner import TOY_ENTRY, PlannerConfig, plan, straight_decision, toy_problem

logging.basicConfig(format="%(message)s", stream=sys.stdout)
logging.getLogger("ctrplan").setLevel(logging.INFO)

pb = toy_problem()
plate = pb.obstacles[0]
print("plate semi-axes", plate.semi_axes, "centre", plate.c)

# %%
result = plan(pb, straight_decision(pb, TOY_ENTRY), PlannerConfig(delta=0.1, fixed_idx=frozenset()))
print(result.status, "lambda", result.lambda_reached, "length", round(result.objective, 5))
for s in result.solver_stats:
    print(f"  lambda {s['lambda']:.1f}  {s['status']:10s} iterations {s['iterations']:4d}  length {s['objective']:.5f}")

# %%
d = result.decision
print("entry point", np.round(d.p0, 4), " pre-curvature", np.round(d.u_star[0], 3))
print("min Q-distance to the plate", np.min(q_dist_sq(result.path.p, plate)))
tip = shoot_forward(d.to_tubes(), d.p0, d.R0).tip
print("re-simulated tip vs planned", np.linalg.norm(tip - result.path.tip))

out = Path("toy_scene.obj")
out.write_text(obj_text(geometry_to_dict(pb.skull, [pb.hemi], pb.target, pb.obstacles), result.path.p))
print("wrote", out)
