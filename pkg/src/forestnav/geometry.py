"""SO(3)/SE(3) algebra and the pinhole camera model.

Conventions used throughout the stack:
  - camera frame: z forward, x right, y down
  - pixel coordinates: u rightward, v downward
  - twist layout: [wx, wy, wz, tx, ty, tz] (rotational part first)
  - a relative Pose is the pose of the *new* camera expressed in the
    reference frame (camera motion); warping a reference-frame point into
    the new frame therefore applies the inverse transform
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this angle the closed forms are replaced by 2nd-order series.
SMALL_ANGLE = 1e-8

# Compositions between re-orthonormalizations of a Pose rotation block.
RENORM_INTERVAL = 100


class NonPositiveDepth(ValueError):
    """Point at or behind the camera plane."""


class NonPositiveInverseDepth(ValueError):
    """Inverse depth must be strictly positive."""


class BehindCamera(ValueError):
    """Warped point landed behind the camera."""


def hat(w):
    """Skew-symmetric matrix of a 3-vector."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula; 2nd-order series below SMALL_ANGLE."""
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    W = hat(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * W
        + ((1.0 - math.cos(theta)) / (theta * theta)) * (W @ W)
    )


def so3_log(R) -> np.ndarray:
    """Axis-angle coordinates with norm in [0, pi].

    Near pi the skew part vanishes, so the axis is extracted from the
    symmetric part via the largest-diagonal branch.
    """
    R = np.asarray(R, dtype=float)
    trace = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(trace)
    if theta < SMALL_ANGLE:
        return vee(R - R.T) / 2.0
    if theta > math.pi - 1e-4:
        # R = -I + 2 a a^T at theta = pi; pick the best-conditioned column.
        A = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(A)))
        axis = A[:, i] / math.sqrt(max(A[i, i], 1e-12))
        axis = axis / np.linalg.norm(axis)
        # Away from exactly pi, the residual skew part fixes the sign.
        s = vee(R - R.T)
        if s @ axis < 0.0:
            axis = -axis
        return axis * theta
    return vee(R - R.T) * (theta / (2.0 * math.sin(theta)))


def _left_jacobian(w):
    """V such that se3_exp translation = V @ rho."""
    theta = math.sqrt(float(w @ w))
    W = hat(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + ((1.0 - math.cos(theta)) / t2) * W
        + ((theta - math.sin(theta)) / (t2 * theta)) * (W @ W)
    )


def se3_exp(xi) -> "Pose":
    xi = np.asarray(xi, dtype=float)
    w, rho = xi[:3], xi[3:]
    return Pose(so3_exp(w), _left_jacobian(w) @ rho)


def se3_log(T: "Pose") -> np.ndarray:
    w = so3_log(T.R)
    rho = np.linalg.solve(_left_jacobian(w), T.t)
    return np.concatenate([w, rho])


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
    return U @ D @ Vt


def compose_rotations(rotations, renorm_every: int = RENORM_INTERVAL) -> np.ndarray:
    """Left-to-right product of a stack of rotation matrices.

    Re-orthonormalizes periodically so drift stays bounded over long chains.
    """
    R = np.eye(3)
    for k, Rk in enumerate(rotations, start=1):
        R = R @ Rk
        if k % renorm_every == 0:
            R = orthonormalize(R)
    return R


class Pose:
    """Rigid transform (R, t); composition re-orthonormalizes every
    RENORM_INTERVAL compositions to bound drift."""

    __slots__ = ("R", "t", "_gen")

    def __init__(self, R=None, t=None, _gen: int = 0):
        self.R = np.eye(3) if R is None else np.asarray(R, dtype=float)
        self.t = np.zeros(3) if t is None else np.asarray(t, dtype=float)
        self._gen = _gen

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def compose(self, other: "Pose") -> "Pose":
        gen = self._gen + other._gen + 1
        R = self.R @ other.R
        if gen >= RENORM_INTERVAL:
            R = orthonormalize(R)
            gen = 0
        return Pose(R, self.R @ other.t + self.t, gen)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -(Rt @ self.t), self._gen)

    def apply(self, p) -> np.ndarray:
        """Transform a point (3,) or stack of points (N, 3)."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return self.R @ p + self.t
        return p @ self.R.T + self.t

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by `factor` (e.g. 0.5 per pyramid level)."""
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor,
            self.cx * factor, self.cy * factor,
            max(1, int(round(self.width * factor))),
            max(1, int(round(self.height * factor))),
        )


def project(K: CameraIntrinsics, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p[2] <= 1e-6:
        raise NonPositiveDepth(f"z = {p[2]}")
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy])


def unproject(K: CameraIntrinsics, x, d: float) -> np.ndarray:
    if d <= 0.0:
        raise NonPositiveInverseDepth(f"d = {d}")
    return np.array([(x[0] - K.cx) / K.fx, (x[1] - K.cy) / K.fy, 1.0]) / d


def warp(x, d: float, T: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Map a pixel of the reference frame into the frame whose camera moved by T.

    T is the new camera's pose in the reference frame, so reference-frame
    points land in the new frame through T^-1.
    """
    p = unproject(K, x, d)
    q = T.inverse().apply(p)
    if q[2] <= 1e-6:
        raise BehindCamera(f"warped z = {q[2]}")
    return project(K, q)


def project_points(K: CameraIntrinsics, P):
    """Vectorized projection of (N, 3) points.

    Returns (uv (N, 2), in_front (N,)); rows with in_front False hold garbage.
    """
    P = np.asarray(P, dtype=float)
    z = P[:, 2]
    in_front = z > 1e-6
    zs = np.where(in_front, z, 1.0)
    uv = np.empty((P.shape[0], 2))
    uv[:, 0] = K.fx * P[:, 0] / zs + K.cx
    uv[:, 1] = K.fy * P[:, 1] / zs + K.cy
    return uv, in_front


def unproject_pixels(K: CameraIntrinsics, uv, d):
    """Vectorized unprojection: uv (N, 2), inverse depths d (N,) -> (N, 3)."""
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(d, dtype=float)
    rays = np.empty((uv.shape[0], 3))
    rays[:, 0] = (uv[:, 0] - K.cx) / K.fx
    rays[:, 1] = (uv[:, 1] - K.cy) / K.fy
    rays[:, 2] = 1.0
    return rays / d[:, None]
