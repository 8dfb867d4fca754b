"""Shared synthetic inputs and independent oracles for the test suite."""
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from ctrplan.geometry import q_dist_sq


def radius_graph_components(P, radius):
    """Connected components of the radius graph by dense pairwise distances."""
    A = csr_matrix(cdist(P, P) <= radius * (1 + 1e-9))
    return connected_components(A, directed=False)[1]


def same_partition(a, b) -> bool:
    """True when two label vectors describe the same partition."""
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def box_voxels(lo, hi, spacing=1.0):
    axes = [np.arange(lo[i], hi[i] + spacing / 2, spacing) for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def dumbbell(spacing=1.0):
    """Two 5x5x5 voxel blocks joined by a one-voxel-thick bar."""
    a = box_voxels([0, 0, 0], [4, 4, 4], spacing)
    b = box_voxels([12, 0, 0], [16, 4, 4], spacing)
    bar = np.c_[np.arange(5.0, 12.0), np.full(7, 2.0), np.full(7, 2.0)] * spacing
    return np.vstack([a, bar, b])


def lattice_count_inside(ellipsoids, spacing, origin, pad=2.0):
    """Count lattice points inside the union by enumerating a padded bounding box."""
    lo = np.min([e.c - 1 / np.sqrt(np.linalg.eigvalsh(e.Q)[0]) for e in ellipsoids], axis=0) - pad
    hi = np.max([e.c + 1 / np.sqrt(np.linalg.eigvalsh(e.Q)[0]) for e in ellipsoids], axis=0) + pad
    k_lo = np.floor((lo - origin) / spacing)
    k_hi = np.ceil((hi - origin) / spacing)
    G = origin + spacing * box_voxels(k_lo, k_hi, 1.0)
    inside = np.zeros(len(G), dtype=bool)
    for e in ellipsoids:
        inside |= q_dist_sq(G, e) <= 1.0 + 1e-9
    return int(inside.sum())


def random_tubeset(rng, n, u_max=50.0, ell_range=(0.02, 0.2)):
    """Nested n-tube set inside the default planner boxes with ell_1 <= ... <= ell_n."""
    from ctrplan.kinematics import Tube, TubeSet

    ell = np.sort(rng.uniform(*ell_range, size=n))
    L = ell + rng.uniform(0.0, 0.2, size=n)
    L = np.maximum.accumulate(L)  # L_1 <= ... <= L_n as well
    beta = ell - L
    rho_o = 3e-3 - 0.6e-3 * np.arange(n)
    rho_i = rho_o - 0.4e-3
    tubes = []
    for i in range(n):
        u = rng.uniform(-u_max, u_max, size=2)
        tubes.append(Tube(L=float(L[i]), beta=float(beta[i]), alpha=float(rng.uniform(0, 2 * np.pi)),
                          u_star=(u[0], u[1], 0.0), rho_i=float(rho_i[i]), rho_o=float(rho_o[i])))
    return TubeSet(tuple(tubes))
