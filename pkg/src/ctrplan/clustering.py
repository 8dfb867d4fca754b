"""Obstacle point splitting: DBSCAN, k-means and the coverage-driven refinement loop."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ctrplan.fitting import FitError, fit_enclosing, inflate_degenerate
from ctrplan.geometry import q_dist_sq
from ctrplan.ingestion import compute_delta_mri

log = logging.getLogger(__name__)


@dataclass
class ClusterSet:
    clusters: list
    noise: np.ndarray
    labels: np.ndarray  # -1 for noise

    def __len__(self):
        return len(self.clusters)


@dataclass
class CoverageReport:
    grid_points_inside: int
    obstacle_points_inside: int

    @property
    def ratio(self) -> float:
        return self.grid_points_inside / self.obstacle_points_inside


@dataclass
class ClusterDiagnostics:
    cluster_id: int
    k_final: int
    ratio: float
    n_points: int
    capped: bool = False


@dataclass
class ObstacleSet:
    ellipsoids: list
    diagnostics: list = field(default_factory=list)

    @property
    def capped(self) -> bool:
        return any(d.capped for d in self.diagnostics)

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cluster_id", "k_final", "ratio", "n_points"])
        for d in self.diagnostics:
            w.writerow([d.cluster_id, d.k_final, repr(float(d.ratio)), d.n_points])
        return buf.getvalue()


def _as_points(points):
    return np.asarray(points, dtype=float).reshape(-1, 3)


def dbscan(points, radius: float, min_pts: int = 1) -> ClusterSet:
    """Density-based clustering; a point counts itself among its neighbours.

    Clusters are numbered by their lowest-index core point, and a border point
    reachable from several clusters joins the one whose core point has the
    lowest index.
    """
    if not radius > 0 or min_pts < 1:
        raise ValueError("need radius > 0 and min_pts >= 1")
    P = _as_points(points)
    n = len(P)
    if n == 0:
        return ClusterSet([], P, np.zeros(0, dtype=int))
    tree = cKDTree(P)
    neigh = tree.query_ball_point(P, radius * (1.0 + 1e-9))
    core = np.array([len(nb) >= min_pts for nb in neigh])
    labels = np.full(n, -1)
    border_owner = np.full(n, n)  # lowest core index reaching a border point
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cid
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neigh[j]:
                if core[k]:
                    if labels[k] == -1:
                        labels[k] = cid
                        stack.append(k)
                elif j < border_owner[k]:
                    border_owner[k] = j
        cid += 1
    for k in np.flatnonzero(~core & (border_owner < n)):
        labels[k] = labels[border_owner[k]]
    clusters = [P[labels == c] for c in range(cid)]
    return ClusterSet(clusters, P[labels == -1], labels)


def _farthest_point_seeds(P, k, first):
    centers = [first]
    d = np.sum((P - P[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        centers.append(nxt)
        d = np.minimum(d, np.sum((P - P[nxt]) ** 2, axis=1))
    return P[centers].copy()


def kmeans(points, k: int, seed: int | None = None, max_iter: int = 300):
    """Lloyd iteration from farthest-point seeds.

    The first seed is the input point nearest the centroid; a non-zero
    ``seed`` instead draws it at random.  Returns ``(ClusterSet, centroids,
    objective_history)``.
    """
    P = _as_points(points)
    n = len(P)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if seed:
        first = int(np.random.default_rng(seed).integers(n))
    else:
        first = int(np.argmin(np.sum((P - P.mean(axis=0)) ** 2, axis=1)))
    C = _farthest_point_seeds(P, k, first)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = np.sum((P[:, None, :] - C[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        # refill empty clusters with the point farthest from its centre
        for j in range(k):
            if not np.any(new == j):
                far = int(np.argmax(d2[np.arange(n), new]))
                new[far] = j
                d2[far] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = np.array([P[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(np.sum((P - C[labels]) ** 2)))
    clusters = [P[labels == j] for j in range(k)]
    return ClusterSet(clusters, np.zeros((0, 3)), labels), C, history


def lattice_in_boxes(ellipsoids, spacing: float, origin) -> np.ndarray:
    """Lattice points (origin + spacing * Z^3) inside the union of the ellipsoids."""
    origin = np.asarray(origin, float)
    found = []
    for e in ellipsoids:
        half = np.sqrt(np.diag(np.linalg.inv(e.Q)))
        lo = np.floor((e.c - half - origin) / spacing).astype(int)
        hi = np.ceil((e.c + half - origin) / spacing).astype(int)
        axes = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = origin + spacing * idx
        found.append(idx[q_dist_sq(pts, e) <= 1.0 + 1e-9])
    if not found:
        return np.zeros((0, 3))
    idx = np.unique(np.vstack(found), axis=0)
    return origin + spacing * idx


def coverage(ellipsoids, cluster_points, grid) -> CoverageReport:
    """Grid points inside any ellipsoid versus obstacle points inside any ellipsoid."""
    P = _as_points(cluster_points)
    G = _as_points(grid)
    if len(P) == 0:
        raise ValueError("empty cluster")

    def inside(X):
        if len(X) == 0 or not ellipsoids:
            return 0
        mask = np.zeros(len(X), dtype=bool)
        for e in ellipsoids:
            mask |= q_dist_sq(X, e) <= 1.0 + 1e-9
        return int(mask.sum())

    n_obs = inside(P)
    if n_obs == 0:
        raise ValueError("no obstacle point lies inside the ellipsoids")
    return CoverageReport(inside(G), n_obs)


def _fit_subclusters(clusters, min_semi_axis):
    out = []
    for sub in clusters:
        try:
            out.append(fit_enclosing(sub, min_semi_axis=min_semi_axis).ellipsoid)
        except FitError:
            log.warning("enclosing fit failed on %d points; inflating", len(sub))
            out.append(inflate_degenerate(sub, min_semi_axis))
    return out


def build_obstacles(
    points,
    c_th: float,
    delta_mri: float | None = None,
    grid=None,
    k0: int = 1,
    min_pts: int = 1,
    max_rounds: int = 200,
    seed: int | None = None,
) -> ObstacleSet:
    """Split obstacle voxels into clusters covered by enclosing ellipsoids.

    Each density cluster is refined with k-means (k <- k + 1) until the
    ratio of lattice points to obstacle points inside its ellipsoids is at
    most ``c_th``.  ``grid`` may be an explicit lattice point array; by
    default the lattice of spacing ``delta_mri`` aligned with the obstacle
    voxels is enumerated inside the ellipsoids' bounding boxes.  When k
    reaches the cluster size or ``max_rounds`` the best ellipsoids so far are
    kept and the cluster is flagged ``capped``.  ``seed`` is handed to
    :func:`kmeans` (the default seeding is deterministic).
    """
    if not c_th >= 1:
        raise ValueError("c_th must be >= 1")
    P = _as_points(points)
    if len(P) == 0:
        return ObstacleSet([], [])
    if delta_mri is None:
        delta_mri = compute_delta_mri(P)
    origin = P.min(axis=0)
    split = dbscan(P, delta_mri, min_pts)
    clusters = [c.copy() for c in split.clusters]
    if len(split.noise):
        if clusters:
            centroids = np.array([c.mean(axis=0) for c in clusters])
            for p in split.noise:
                j = int(np.argmin(np.sum((centroids - p) ** 2, axis=1)))
                clusters[j] = np.vstack([clusters[j], p])
        else:
            clusters = [split.noise]
    ellipsoids = []
    diags = []
    for cid, cl in enumerate(clusters):
        k = min(k0, len(cl))
        best = None
        capped = False
        for _ in range(max_rounds):
            parts, _, _ = kmeans(cl, k, seed)
            ells = _fit_subclusters(parts.clusters, delta_mri / 2.0)
            if grid is None:
                G = lattice_in_boxes(ells, delta_mri, origin)
            else:
                G = grid
            rep = coverage(ells, cl, G)
            if best is None or rep.ratio < best[1].ratio:
                best = (ells, rep, k)
            if rep.ratio <= c_th:
                best = (ells, rep, k)
                break
            if k >= len(cl):
                capped = True
                break
            k += 1
        else:
            capped = True
        ells, rep, k_final = best
        if capped:
            log.warning("cluster %d: coverage %.3f above threshold at k=%d", cid, rep.ratio, k_final)
        ellipsoids.extend(ells)
        diags.append(ClusterDiagnostics(cid, k_final, rep.ratio, len(cl), capped))
    return ObstacleSet(ellipsoids, diags)


def enclosure_slack(ellipsoids, points) -> float:
    """max over points of the min Q-distance to any ellipsoid, minus one."""
    P = _as_points(points)
    if not ellipsoids:
        return math.inf
    D = np.min(np.stack([q_dist_sq(P, e) for e in ellipsoids]), axis=0)
    return float(np.max(D) - 1.0)

