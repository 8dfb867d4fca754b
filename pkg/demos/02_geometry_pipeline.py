"""
From a labelled point cloud to constraint ellipsoids
====================================================

A synthetic head: skull samples on a sphere, a voxelized target ball, an
obstacle made of two voxel blocks, and a plane of hemisphere-marker voxels.
"""
import numpy as np

from ctrplan.clustering import build_obstacles
from ctrplan.fitting import fit_hyperplane, fit_skull, fit_target, select_hemisphere
from ctrplan.geometry import q_dist_sq
from ctrplan.ingestion import LabeledPointCloud, compute_delta_mri


def voxels(lo, hi, h):
    axes = [np.arange(a, b + h / 2, h) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


h = 0.002
k = np.arange(600) + 0.5
z = 1 - 2 * k / 600
phi = np.pi * (1 + 5**0.5) * k
skull = 0.1 * np.c_[np.sqrt(1 - z**2) * np.cos(phi), np.sqrt(1 - z**2) * np.sin(phi), z]
g = voxels([-0.01, -0.01, 0.01], [0.01, 0.01, 0.03], h)
target = g[np.linalg.norm(g - [0.0, 0.0, 0.02], axis=1) <= 0.01 + 1e-12]
obstacle = np.vstack([voxels([-0.02, -0.004, 0.05], [-0.008, 0.004, 0.058], h),
                      voxels([0.008, -0.004, 0.05], [0.02, 0.004, 0.058], h)])
marker = voxels([0.05, -0.02, -0.02], [0.05, 0.02, 0.02], 4 * h)
cloud = LabeledPointCloud(skull, target, obstacle, marker, compute_delta_mri(np.vstack([target, obstacle])))
print("counts", cloud.counts(), " delta_mri", cloud.delta_mri)

# %%
# The marker plane splits the head; the target lies on one side only.
hvec, halves = fit_hyperplane(cloud.hemisphere)
hemis = select_hemisphere(halves, cloud.target)
print("plane h", np.round(hvec, 4), " admissible sides:", [s.sign for s in hemis])

skull_fit = fit_skull(cloud.skull, hemis[0])
print("skull semi-axes", np.round(skull_fit.ellipsoid.semi_axes, 5), " objective", skull_fit.objective)

# %%
# The target ellipsoid is inscribed: no boundary voxel may lie strictly
# inside.  With the literal eigenvalue bound every semi-axis stays below
# delta/2; the semi-axis reading lets it grow to fill the ball.
for mode in ("literal", "semi_axis"):
    e = fit_target(cloud.target, cloud.delta_mri, eigen_bound=mode).ellipsoid
    print(f"target ({mode:9s}) semi-axes", np.round(e.semi_axes, 5))

# %%
# Obstacles: density clusters refined by k-means until the enclosing
# ellipsoids do not cover much more lattice than the obstacle itself.
obs = build_obstacles(cloud.obstacle, c_th=2.0, delta_mri=h)
for d in obs.diagnostics:
    print(f"cluster {d.cluster_id}: {d.n_points} voxels, k = {d.k_final}, coverage ratio {d.ratio:.2f}")
inside = np.zeros(len(obstacle), bool)
for e in obs.ellipsoids:
    inside |= q_dist_sq(obstacle, e) <= 1 + 1e-9
print("all obstacle voxels enclosed:", inside.all())
