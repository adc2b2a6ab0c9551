import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestnav import geometry as geo
from forestnav.geometry import CameraIntrinsics, Pose


K = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)


def random_rotation(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return geo.so3_exp(axis * rng.uniform(1e-6, max_angle))


def random_pose(rng):
    return Pose(random_rotation(rng), rng.normal(size=3))


class TestSo3:
    def test_zero_rotation_is_identity(self):
        assert np.allclose(geo.so3_exp([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = geo.so3_exp([0.0, 0.0, math.pi / 2])
        assert np.allclose(R @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_log_identity(self):
        assert np.allclose(geo.so3_log(np.eye(3)), 0.0)

    def test_log_quarter_turn(self):
        R = geo.so3_exp([0.0, 0.0, math.pi / 2])
        assert np.allclose(geo.so3_log(R), [0.0, 0.0, math.pi / 2], atol=1e-12)

    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            w = axis * rng.uniform(1e-8, 3.0)
            assert np.allclose(geo.so3_log(geo.so3_exp(w)), w, atol=1e-9)

    def test_log_exp_round_trip_on_rotations(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            R = random_rotation(rng)
            assert np.allclose(geo.so3_exp(geo.so3_log(R)), R, atol=1e-9)

    def test_log_near_pi(self):
        # The skew part degenerates at pi; the axis-extraction branch must hold.
        for axis in ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, -0.8, 0.0], [0.36, 0.48, 0.8]):
            w = np.asarray(axis) * (math.pi - 1e-7)
            R = geo.so3_exp(w)
            assert np.allclose(geo.so3_exp(geo.so3_log(R)), R, atol=1e-6)

    def test_output_is_orthonormal(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            R = random_rotation(rng)
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(R) - 1.0) < 1e-9


class TestSe3:
    def test_zero_twist(self):
        T = geo.se3_exp(np.zeros(6))
        assert np.allclose(T.R, np.eye(3)) and np.allclose(T.t, 0.0)

    def test_pure_translation(self):
        T = geo.se3_exp([0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
        assert np.allclose(T.R, np.eye(3))
        assert np.allclose(T.t, [1.0, 2.0, 3.0])

    def test_round_trip(self):
        # Mutual inverses hold inside the injectivity radius (|w| < pi).
        rng = np.random.default_rng(10)
        for _ in range(100):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            xi = np.concatenate([
                axis * rng.uniform(0.0, math.pi - 1e-3),
                rng.normal(size=3) * 2.0,
            ])
            xi2 = geo.se3_log(geo.se3_exp(xi))
            assert np.allclose(xi2, xi, atol=1e-9)

    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            T = random_pose(rng)
            I = T.compose(T.inverse())
            assert np.allclose(I.R, np.eye(3), atol=1e-9)
            assert np.allclose(I.t, 0.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_composition_associativity(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (random_pose(rng) for _ in range(3))
    left = A.compose(B).compose(C)
    right = A.compose(B.compose(C))
    assert np.allclose(left.R, right.R, atol=1e-9)
    assert np.allclose(left.t, right.t, atol=1e-9)


def test_compose_rotations_matches_incremental_product():
    rng = np.random.default_rng(12)
    Rs = [random_rotation(rng, 0.5) for _ in range(257)]
    R_ref = np.eye(3)
    for Rk in Rs:
        R_ref = R_ref @ Rk
    R = geo.compose_rotations(Rs)
    assert np.allclose(R, R_ref, atol=1e-9)


def test_pose_renormalization_keeps_orthonormality():
    rng = np.random.default_rng(13)
    T = Pose.identity()
    for _ in range(5000):
        T = T.compose(Pose(random_rotation(rng, 0.3)))
    assert np.max(np.abs(T.R.T @ T.R - np.eye(3))) < 1e-9


class TestCamera:
    def test_principal_axis(self):
        assert np.allclose(geo.project(K, [0.0, 0.0, 2.0]), [320.0, 240.0])

    def test_off_axis(self):
        assert np.allclose(geo.project(K, [1.0, 0.0, 2.0]), [470.0, 240.0])

    def test_project_rejects_nonpositive_depth(self):
        with pytest.raises(geo.NonPositiveDepth):
            geo.project(K, [0.0, 0.0, 0.0])

    def test_unproject_center(self):
        assert np.allclose(geo.unproject(K, [320.0, 240.0], 0.5), [0.0, 0.0, 2.0])

    def test_unproject_off_axis(self):
        assert np.allclose(geo.unproject(K, [470.0, 240.0], 0.5), [1.0, 0.0, 2.0])

    def test_unproject_rejects_nonpositive_inverse_depth(self):
        with pytest.raises(geo.NonPositiveInverseDepth):
            geo.unproject(K, [320.0, 240.0], 0.0)

    def test_project_unproject_round_trip(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            x = np.array([rng.uniform(0, 640), rng.uniform(0, 480)])
            d = rng.uniform(0.01, 10.0)
            p = geo.unproject(K, x, d)
            assert np.allclose(geo.project(K, p), x, atol=1e-9)
            assert abs(1.0 / p[2] - d) < 1e-9


class TestWarp:
    def test_identity_pose_is_noop(self):
        x = np.array([400.0, 200.0])
        assert np.allclose(geo.warp(x, 0.4, Pose.identity(), K), x, atol=1e-12)

    def test_lateral_camera_motion_shifts_pixels_against_motion(self):
        # Camera translated +0.1 m along x; a point 2 m out moves -15 px in u.
        x = np.array([320.0, 240.0])
        out = geo.warp(x, 0.5, Pose(t=[0.1, 0.0, 0.0]), K)
        assert np.allclose(out, [305.0, 240.0], atol=1e-9)

    def test_warp_round_trip(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            T = Pose(random_rotation(rng, 0.2), rng.normal(size=3) * 0.2)
            x = np.array([rng.uniform(100, 540), rng.uniform(100, 380)])
            d = rng.uniform(0.05, 0.5)
            x1 = geo.warp(x, d, T, K)
            p_new = T.inverse().apply(geo.unproject(K, x, d))
            x0 = geo.warp(x1, 1.0 / p_new[2], T.inverse(), K)
            assert np.allclose(x0, x, atol=1e-6)

    def test_behind_camera_raises(self):
        with pytest.raises(geo.BehindCamera):
            geo.warp([320.0, 240.0], 0.5, Pose(t=[0.0, 0.0, 5.0]), K)


def test_vectorized_projection_matches_scalar():
    rng = np.random.default_rng(16)
    P = np.column_stack([
        rng.uniform(-2, 2, 64), rng.uniform(-2, 2, 64), rng.uniform(0.5, 10, 64),
    ])
    uv, ok = geo.project_points(K, P)
    assert ok.all()
    for i in range(64):
        assert np.allclose(uv[i], geo.project(K, P[i]), atol=1e-12)
    back = geo.unproject_pixels(K, uv, 1.0 / P[:, 2])
    assert np.allclose(back, P, atol=1e-9)
