import numpy as np
import pytest
from helpers import dumbbell, lattice_count_inside, radius_graph_components, same_partition
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrplan.clustering import (
    ObstacleSet,
    build_obstacles,
    coverage,
    dbscan,
    enclosure_slack,
    kmeans,
    lattice_in_boxes,
)
from ctrplan.fitting import fit_enclosing
from ctrplan.geometry import Ellipsoid


def blobs(rng, centres, n=40, scale=0.3):
    return np.vstack([c + scale * rng.normal(size=(n, 3)) for c in centres])


# dbscan


def test_dbscan_two_blobs_match_radius_graph():
    rng = np.random.default_rng(0)
    P = blobs(rng, [[0, 0, 0], [20, 0, 0]])
    cs = dbscan(P, 2.0)
    assert len(cs) == 2
    assert same_partition(cs.labels, radius_graph_components(P, 2.0))


def test_dbscan_chain_is_one_cluster():
    P = np.c_[np.arange(10.0) * 0.9, np.zeros(10), np.zeros(10)]
    cs = dbscan(P, 1.0, min_pts=2)
    assert len(cs) == 1 and len(cs.noise) == 0


def test_dbscan_isolated_point_is_noise():
    cs = dbscan([[0.0, 0.0, 0.0]], 1.0, min_pts=2)
    assert len(cs) == 0 and len(cs.noise) == 1


def test_dbscan_border_point_goes_to_lowest_core():
    # cores 0 and 2 (min_pts = 3 counting self); point 1 is a border point of both
    P = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [-0.5, 0, 0], [-0.8, 0, 0], [2.5, 0, 0], [2.8, 0, 0]])
    cs = dbscan(P, 1.0, min_pts=3)
    assert cs.labels[1] == cs.labels[0]


def test_dbscan_partition_property():
    rng = np.random.default_rng(1)
    P = rng.uniform(0, 10, size=(200, 3))
    cs = dbscan(P, 1.0, min_pts=3)
    total = sum(len(c) for c in cs.clusters) + len(cs.noise)
    assert total == len(P)
    assert np.all((cs.labels >= -1) & (cs.labels < len(cs)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dbscan_order_independent(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 5, size=(150, 3))
    perm = rng.permutation(len(P))
    a = dbscan(P, 0.8).labels
    b = dbscan(P[perm], 0.8).labels
    assert same_partition(a[perm], b)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dbscan_min_pts_one_equals_components(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 10, size=(300, 3))
    cs = dbscan(P, 1.0, min_pts=1)
    assert len(cs.noise) == 0
    assert same_partition(cs.labels, radius_graph_components(P, 1.0))


def test_dbscan_rejects_bad_arguments():
    with pytest.raises(ValueError):
        dbscan(np.zeros((2, 3)), 0.0)
    with pytest.raises(ValueError):
        dbscan(np.zeros((2, 3)), 1.0, min_pts=0)


# kmeans


def test_kmeans_single_cluster_is_mean():
    P = np.random.default_rng(2).normal(size=(30, 3))
    cs, C, _ = kmeans(P, 1)
    np.testing.assert_allclose(C[0], P.mean(axis=0))
    assert len(cs.clusters[0]) == 30


@pytest.mark.parametrize("seed", [None, 1, 7, 123])
def test_kmeans_recovers_separated_blobs(seed):
    rng = np.random.default_rng(3)
    P = blobs(rng, [[0, 0, 0], [30, 0, 0]], n=25)
    cs, _, _ = kmeans(P, 2, seed=seed)
    truth = np.repeat([0, 1], 25)
    assert same_partition(cs.labels, truth)


def test_kmeans_k_equals_n():
    P = np.random.default_rng(4).normal(size=(8, 3))
    cs, _, _ = kmeans(P, 8)
    assert sorted(len(c) for c in cs.clusters) == [1] * 8


def test_kmeans_local_optimum_and_monotone():
    P = np.random.default_rng(5).normal(size=(200, 3))
    cs, C, hist = kmeans(P, 5)
    d = np.sum((P[:, None] - C[None]) ** 2, axis=2)
    np.testing.assert_array_equal(np.argmin(d, axis=1), cs.labels)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    assert all(len(c) > 0 for c in cs.clusters)


def test_kmeans_rejects_bad_k():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 3)), 4)


# coverage


def test_coverage_counting():
    e = Ellipsoid.ball([0, 0, 0], 1.0)
    G = np.vstack([np.zeros((1, 3)), np.eye(3), -np.eye(3)])  # 7 lattice points inside
    full = coverage([e], G, G)
    assert full.ratio == 1.0
    half = coverage([e], G[:2], np.vstack([G, 10 + np.arange(3)[:, None] * np.ones(3)]))
    assert half.grid_points_inside == 7 and half.obstacle_points_inside == 2


def test_coverage_forty_over_twenty():
    e = Ellipsoid([1.5, 1.5, 0.0], np.diag([1 / 4, 1 / 16, 1.0]))
    G = np.stack(np.meshgrid(np.arange(-5.0, 9), np.arange(-5.0, 9), [0.0], indexing="ij"), -1).reshape(-1, 3)
    inside = G[[e.contains(g) for g in G]]
    rep = coverage([e], inside[: len(inside) // 2], G)
    assert rep.ratio == len(inside) / (len(inside) // 2)


def test_coverage_rejects_empty_inside():
    with pytest.raises(ValueError):
        coverage([Ellipsoid.ball([0, 0, 0], 1.0)], [[5.0, 5, 5]], [[0.0, 0, 0]])


def test_lattice_in_boxes_matches_enumeration():
    e = Ellipsoid([0.3, -0.2, 0.1], np.diag([1 / 9, 1 / 4, 1.0]))
    G = lattice_in_boxes([e], 0.5, np.zeros(3))
    assert len(G) == lattice_count_inside([e], 0.5, np.zeros(3))


def test_dumbbell_two_ellipsoids_cover_better():
    P = dumbbell()
    one = [fit_enclosing(P).ellipsoid]
    two = [fit_enclosing(P[P[:, 0] <= 8]).ellipsoid, fit_enclosing(P[P[:, 0] > 8]).ellipsoid]
    r1 = lattice_count_inside(one, 1.0, np.zeros(3)) / len(P)
    r2 = lattice_count_inside(two, 1.0, np.zeros(3)) / len(P)
    assert r2 < r1


# Algorithm 1


def test_build_single_blob_first_pass():
    P = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    obs = build_obstacles(P, c_th=10.0, delta_mri=1.0)
    assert len(obs.ellipsoids) == 1
    assert obs.diagnostics[0].k_final == 1 and not obs.capped


def test_build_infinite_threshold_one_per_cluster():
    rng = np.random.default_rng(6)
    P = np.vstack([np.round(blobs(rng, [c], n=30, scale=1.0)) for c in ([0, 0, 0], [30, 0, 0], [0, 30, 0])])
    P = np.unique(P, axis=0)
    obs = build_obstacles(P, c_th=np.inf, delta_mri=1.0, min_pts=1)
    n_clusters = len(dbscan(P, 1.0))
    assert len(obs.ellipsoids) == n_clusters
    assert all(d.k_final == 1 for d in obs.diagnostics)


def test_build_dumbbell_grows_k_and_meets_threshold():
    P = dumbbell()
    obs = build_obstacles(P, c_th=2.0, delta_mri=1.0)
    assert obs.diagnostics[0].k_final > 1
    ratio = lattice_count_inside(obs.ellipsoids, 1.0, P.min(axis=0)) / len(P)
    assert ratio <= 2.0
    assert obs.diagnostics[0].ratio == pytest.approx(ratio)
    assert enclosure_slack(obs.ellipsoids, P) <= 1e-9


def test_build_monotone_in_threshold():
    P = dumbbell()
    counts = [len(build_obstacles(P, c_th=c, delta_mri=1.0).ellipsoids) for c in (1.5, 2.0, 4.0, 50.0)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_build_cap_flags_cluster():
    P = dumbbell()
    obs = build_obstacles(P, c_th=1.0, delta_mri=1.0, max_rounds=2)
    assert obs.capped
    assert "cluster_id,k_final,ratio,n_points" in obs.diagnostics_csv()


def test_build_rejects_low_threshold_and_handles_empty():
    with pytest.raises(ValueError):
        build_obstacles(np.zeros((3, 3)), c_th=0.5)
    assert build_obstacles(np.zeros((0, 3)), c_th=2.0).ellipsoids == []
    assert isinstance(build_obstacles(np.zeros((0, 3)), c_th=2.0), ObstacleSet)


def test_build_noise_merged_not_dropped():
    rng = np.random.default_rng(8)
    P = np.vstack([np.unique(np.round(blobs(rng, [[0, 0, 0]], n=60, scale=1.0)), axis=0), [[6.0, 0, 0]]])
    obs = build_obstacles(P, c_th=np.inf, delta_mri=1.0, min_pts=3)
    assert enclosure_slack(obs.ellipsoids, P) <= 1e-9
