"""
Forward kinematics of concentric tubes
======================================

A single pre-curved tube bends into a circular arc.  Two identical tubes
cancel each other when turned half a revolution apart, and three tubes with
random actuation need the torsion boundary-value problem solved by shooting.
"""
import numpy as np

from ctrplan.kinematics import Tube, TubeSet, shoot_forward

# one tube, curvature 10 1/m, 10 cm long: the tip lands on a circle of radius 0.1 m
arc = shoot_forward(TubeSet((Tube(L=0.1, u_star=(10.0, 0.0, 0.0)),)))
print("arc tip        ", np.round(arc.tip, 6))
print("closed form    ", np.round([0.0, -(1 - np.cos(1)) / 10, np.sin(1) / 10], 6))

# %%
# Two tubes with equal stiffness.  The inner annulus is thinner, so its
# moduli are scaled up until E I and G J match the outer tube.
outer = Tube(L=0.1, u_star=(10.0, 0.0, 0.0), rho_i=1.0e-3, rho_o=1.5e-3)
k = outer.I / Tube(L=0.1, rho_i=0.5e-3, rho_o=1.0e-3).I


def inner(alpha):
    return Tube(L=0.1, u_star=(10.0, 0.0, 0.0), rho_i=0.5e-3, rho_o=1.0e-3, alpha=alpha,
                E=outer.E * k, G=outer.G * k)


for alpha in (0.0, np.pi / 2, np.pi):
    path = shoot_forward(TubeSet((outer, inner(alpha))))
    print(f"alpha_2 = {alpha:4.2f}  tip = {np.round(path.tip, 5)}  Newton iterations = {path.info['iterations']}")

# %%
# Three tubes, staggered extensions.  Each tube twists along its exposed
# length; the terminal torsion rate of every tube is driven to zero.
tubes = TubeSet((
    Tube(L=0.30, beta=-0.25, alpha=0.3, u_star=(20.0, 0.0, 0.0), rho_i=2.6e-3, rho_o=3.0e-3),
    Tube(L=0.35, beta=-0.25, alpha=2.0, u_star=(15.0, 5.0, 0.0), rho_i=2.0e-3, rho_o=2.4e-3),
    Tube(L=0.40, beta=-0.25, alpha=4.0, u_star=(30.0, 0.0, 0.0), rho_i=1.4e-3, rho_o=1.8e-3),
))
path = shoot_forward(tubes)
print("segment ends   ", tubes.ell)
print("u_z(0)         ", np.round(path.info["uz0"], 4))
ends = [np.flatnonzero(np.isclose(path.s, l))[-1] for l in tubes.ell]
print("u_iz(ell_i)    ", [f"{path.u_z[k, i]:.1e}" for i, k in enumerate(ends)])
print("tip            ", np.round(path.tip, 5))

# chord lengths never exceed the arc-length step
print("max chord - ds ", np.max(np.linalg.norm(np.diff(path.p, axis=0), axis=1) - np.diff(path.s)))
