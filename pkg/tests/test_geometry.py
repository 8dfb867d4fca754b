import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from ctrplan.geometry import (
    Ellipsoid,
    Frame,
    GeometryError,
    HalfSpace,
    UnitQuaternion,
    pd_from_cholesky_params,
    pd_from_rotation_params,
    project_to_rotation,
    q_dist_sq,
    quaternion_from_rotation,
    rotation_from_quaternion,
    vee3,
    vee6,
    wedge3,
    wedge6,
)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)
quat = arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3)


# q_dist_sq


def test_qdist_zero_at_centre():
    e = Ellipsoid([1.0, 2.0, 3.0], np.diag([2.0, 3.0, 5.0]))
    assert q_dist_sq(e.c, e) == 0.0


def test_qdist_identity_is_squared_norm():
    e = Ellipsoid.ball([0.0, 0.0, 0.0], 1.0)
    assert q_dist_sq([1.0, 2.0, 2.0], e) == 9.0


def test_qdist_boundary_point_on_long_axis():
    e = Ellipsoid([0.0, 0.0, 0.0], np.diag([0.25, 1.0, 1.0]))
    assert q_dist_sq([2.0, 0.0, 0.0], e) == pytest.approx(1.0, abs=1e-15)
    assert e.contains([2.0, 0.0, 0.0])


def test_qdist_vectorized_over_points():
    e = Ellipsoid([1.0, 0.0, 0.0], np.diag([1.0, 4.0, 9.0]))
    X = np.array([[1.0, 0, 0], [2.0, 0, 0], [1.0, 0.5, 0], [1.0, 0, 1 / 3]])
    np.testing.assert_allclose(q_dist_sq(X, e), [0.0, 1.0, 1.0, 1.0], atol=1e-15)


grid3 = arrays(float, 3, elements=st.integers(-1000, 1000).map(lambda k: k / 100))


@given(grid3, grid3)
def test_qdist_nonnegative_and_zero_only_at_centre(c, x):
    e = Ellipsoid(c, np.diag([1.0, 2.0, 3.0]))
    d = q_dist_sq(x, e)
    assert d >= 0.0
    assert (d == 0.0) == bool(np.all(x == c))


def test_ellipsoid_rejects_bad_matrices():
    with pytest.raises(GeometryError):
        Ellipsoid([0, 0, 0], [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(GeometryError):
        Ellipsoid([0, 0, 0], np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(GeometryError):
        Ellipsoid([0, 0, np.nan], np.eye(3))


def test_ellipsoid_symmetrized_exactly():
    Q = np.array([[2.0, 0.3, 0.0], [0.3 + 1e-14, 2.0, 0.0], [0.0, 0.0, 1.0]])
    e = Ellipsoid([0, 0, 0], Q)
    assert np.max(np.abs(e.Q - e.Q.T)) == 0.0


def test_ellipsoid_semi_axes_and_dict_roundtrip():
    e = Ellipsoid([0.1, -0.2, 0.3], np.diag([1 / 4, 1.0, 1 / 9]))
    np.testing.assert_allclose(sorted(e.semi_axes), [1.0, 2.0, 3.0])
    back = Ellipsoid.from_dict(e.to_dict())
    np.testing.assert_array_equal(back.Q, e.Q)
    np.testing.assert_array_equal(back.c, e.c)


# half-spaces


def test_halfspace_signs_and_complement():
    hs = HalfSpace([0.0, 0.0, 1.0], 1.0, "<=")
    assert hs.contains([0.0, 0.0, 0.5])
    assert hs.contains([0.0, 0.0, 1.0])
    assert not hs.contains([0.0, 0.0, 1.5])
    co = hs.complement()
    assert co.sign == ">=" and co.contains([0.0, 0.0, 1.5])
    with pytest.raises(GeometryError):
        HalfSpace([0.0, 0.0, 0.0])
    back = HalfSpace.from_dict(hs.to_dict())
    assert np.array_equal(back.h, hs.h) and (back.offset, back.sign) == (hs.offset, hs.sign)


# rotations


def test_identity_quaternion():
    np.testing.assert_array_equal(rotation_from_quaternion([1, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_x():
    c = np.cos(np.pi / 4)
    R = rotation_from_quaternion([c, c, 0, 0])
    np.testing.assert_allclose(R, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


def test_rounded_fixture_quaternion_is_nearly_orthonormal():
    R = rotation_from_quaternion([0.6983, 0.1727, -0.3151, -0.6190])
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12  # normalized on entry
    # without normalization the formula is off only by the rounding of the entries
    q = np.array([0.6983, 0.1727, -0.3151, -0.6190])
    assert abs(np.linalg.norm(q) - 1.0) < 1e-4


def test_zero_quaternion_rejected():
    with pytest.raises(GeometryError):
        rotation_from_quaternion([0, 0, 0, 0])


@given(quat)
def test_rotation_matches_scipy(q):
    R = rotation_from_quaternion(q)
    ref = Rotation.from_quat(np.r_[q[1:], q[0]]).as_matrix()  # scalar-last
    np.testing.assert_allclose(R, ref, atol=1e-12)


@given(quat)
def test_double_cover(q):
    np.testing.assert_allclose(rotation_from_quaternion(q), rotation_from_quaternion(-q), atol=1e-15)


@given(quat)
def test_quaternion_roundtrip(q):
    R = rotation_from_quaternion(q)
    q2 = quaternion_from_rotation(R)
    assert q2[0] >= 0
    np.testing.assert_allclose(rotation_from_quaternion(q2), R, atol=1e-12)
    assert UnitQuaternion.from_matrix(R).q == pytest.approx(q2)


def test_unit_quaternion_normalizes():
    q = UnitQuaternion([2.0, 0.0, 0.0, 0.0])
    assert abs(np.linalg.norm(q.q) - 1.0) < 1e-12
    np.testing.assert_array_equal(q.as_matrix(), np.eye(3))


def test_frame_invariants():
    R = Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix()
    g = Frame(R, [1.0, 2.0, 3.0]).as_matrix()
    np.testing.assert_array_equal(g[3], [0, 0, 0, 1])
    with pytest.raises(GeometryError):
        Frame(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        Frame(2 * np.eye(3), np.zeros(3))


def test_project_to_rotation():
    R = Rotation.from_rotvec([0.3, -0.1, 0.2]).as_matrix()
    P = project_to_rotation(R + 1e-3 * np.arange(9.0).reshape(3, 3))
    np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-12)
    assert np.linalg.det(P) == pytest.approx(1.0)


# hat maps


def test_wedge3_examples():
    np.testing.assert_array_equal(wedge3([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(wedge3([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])
    np.testing.assert_array_equal(vee3(wedge3([3, -2, 7])), [3, -2, 7])


@given(vec3, vec3)
def test_wedge3_is_cross_product(x, y):
    np.testing.assert_allclose(wedge3(x) @ y, np.cross(x, y), atol=1e-12)
    np.testing.assert_array_equal(wedge3(x).T, -wedge3(x))


def test_vee3_rejects_non_skew():
    with pytest.raises(GeometryError):
        vee3(np.eye(3))


def test_twist_roundtrip():
    xi = np.array([1.0, 2.0, 3.0, 0.1, -0.2, 0.3])
    X = wedge6(xi)
    np.testing.assert_array_equal(X[3], 0.0)
    np.testing.assert_array_equal(vee6(X), xi)
    with pytest.raises(GeometryError):
        vee6(np.eye(4))


# positive-definite parameterizations


def test_rotation_param_examples():
    np.testing.assert_allclose(pd_from_rotation_params([1, 0, 0, 0], [1, 1, 1]), np.eye(3))
    np.testing.assert_allclose(pd_from_rotation_params([1, 0, 0, 0], [4, 1, 1]), np.diag([4.0, 1, 1]))
    with pytest.raises(GeometryError):
        pd_from_rotation_params([1, 0, 0, 0], [1, 0, 1])


@given(quat)
def test_rotation_param_eigenvalues(q):
    Q = pd_from_rotation_params(q, [2.0, 3.0, 5.0])
    np.testing.assert_allclose(np.linalg.eigvalsh(Q), [2.0, 3.0, 5.0], atol=1e-10)
    np.linalg.cholesky(Q)


def test_cholesky_param_examples():
    np.testing.assert_array_equal(pd_from_cholesky_params([1, 0, 1, 0, 0, 1]), np.eye(3))
    np.testing.assert_array_equal(pd_from_cholesky_params([2, 0, 3, 0, 0, 4]), np.diag([4.0, 9, 16]))
    with pytest.raises(GeometryError):
        pd_from_cholesky_params([1, 0, 0, 0, 0, 1])


@settings(max_examples=50)
@given(arrays(float, 3, elements=st.floats(0.1, 5)), arrays(float, 3, elements=st.floats(-3, 3)))
def test_cholesky_param_dense(diag, off):
    g = [diag[0], off[0], diag[1], off[1], off[2], diag[2]]
    Q = pd_from_cholesky_params(g)
    assert np.array_equal(Q, Q.T)
    assert np.linalg.eigvalsh(Q)[0] > 0
    np.linalg.cholesky(Q)
