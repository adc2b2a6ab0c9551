"""Visual-inertial tracking: gyro preintegration, direct image alignment,
metric scale estimation.

Alignment minimizes the Huber-robustified photometric error between a
keyframe (image + inverse-depth map) and a new frame over a coarse-to-fine
pyramid, seeded by a preintegrated rotation prior. The optimization state
is the point transform from keyframe to new frame; the returned pose is
its inverse, i.e. the new camera's pose in the keyframe frame.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .depth_mapping import InverseDepthMap, bilinear
from .geometry import CameraIntrinsics, Pose


class InsufficientMap(RuntimeError):
    """Keyframe map has too few valid pixels to align against."""


class NegligibleMotion(ValueError):
    """Metric displacement too small for a scale sample."""


@dataclass
class ImuSample:
    omega: np.ndarray  # rad/s, body frame
    dt: float

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class PreintegratedRotation:
    delta_R: np.ndarray
    total_dt: float


@dataclass
class KeyframePacket:
    image: np.ndarray
    map: InverseDepthMap
    pose: Pose

    def __post_init__(self):
        if self.image.shape != self.map.mu.shape:
            raise ValueError("image and map dimensions differ")


@dataclass
class MeasurementLog:
    """Keyframes interleaved with the gyro samples bridging them."""
    keyframes: list = field(default_factory=list)
    imu_sets: list = field(default_factory=list)

    def add_keyframe(self, packet: KeyframePacket, imu_since_previous=None):
        if self.keyframes and imu_since_previous is None:
            raise ValueError("non-initial keyframe needs its bridging IMU set")
        if self.keyframes:
            self.imu_sets.append(list(imu_since_previous))
        self.keyframes.append(packet)


def preintegrate(samples, bias) -> PreintegratedRotation:
    """Compose bias-corrected gyro increments into one relative rotation.

    The increments multiply left-to-right in time order (rotation
    composition is a product; increments about a fixed axis commute, so a
    constant-rate stream reduces to the single closed-form rotation).
    """
    if not samples:
        raise ValueError("empty sample list")
    bias = np.asarray(bias, dtype=float)
    increments = [geo.so3_exp((s.omega - bias) * s.dt) for s in samples]
    delta_R = geo.compose_rotations(increments)
    return PreintegratedRotation(delta_R=delta_R,
                                 total_dt=float(sum(s.dt for s in samples)))


def compose_prior(delta_R: PreintegratedRotation, t_prior) -> Pose:
    """Pose prior for the next frame: inertial rotation, extrapolated translation."""
    return Pose(delta_R.delta_R, np.asarray(t_prior, dtype=float))


def huber(r, delta: float):
    """Huber cost: quadratic within delta, linear outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_weight(r, delta: float):
    """IRLS weight min(1, delta/|r|)."""
    a = np.abs(r)
    return np.minimum(1.0, delta / np.maximum(a, 1e-12))


@dataclass
class AlignResult:
    xi: np.ndarray
    pose: Pose
    final_error: float
    converged: bool
    inlier_fraction: float


def _downsample(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _level_intrinsics(K: CameraIntrinsics, level: int) -> CameraIntrinsics:
    # Block-average downsampling puts the coarse pixel center at
    # (2u + 0.5), hence the -0.25 principal point correction per level.
    fx, fy, cx, cy = K.fx, K.fy, K.cx, K.cy
    w, h = K.width, K.height
    for _ in range(level):
        fx, fy = fx / 2, fy / 2
        cx, cy = (cx - 0.5) / 2, (cy - 0.5) / 2
        w, h = w // 2, h // 2
    return CameraIntrinsics(fx, fy, cx, cy, w, h)


def _downsample_map(m: InverseDepthMap) -> InverseDepthMap:
    h2, w2 = m.height // 2, m.width // 2
    mu = m.mu[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    var = m.var[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    valid = m.valid[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    w = np.where(valid, 1.0 / np.where(valid, var, 1.0), 0.0)
    wsum = w.sum(axis=(1, 3))
    any_valid = wsum > 0
    mu2 = np.where(any_valid, (w * mu).sum(axis=(1, 3)) / np.where(any_valid, wsum, 1.0), 0.0)
    var2 = np.where(any_valid, 1.0 / np.where(any_valid, wsum, 1.0), 0.0)
    return InverseDepthMap(mu=mu2, var=var2, valid=any_valid)


def _gather_level(image, m: InverseDepthMap, K, cap):
    vs, us = np.nonzero(m.valid)
    if us.size > cap:
        idx = np.linspace(0, us.size - 1, cap).astype(int)
        us, vs = us[idx], vs[idx]
    uv = np.column_stack([us, vs]).astype(float)
    rays = geo.unproject_pixels(K, uv, m.mu[vs, us])
    intensities = image[vs, us]
    return rays, intensities


def _photometric(rays, i_ref, W: Pose, cur, gx, gy, K, delta):
    """Residuals, IRLS weights and Jacobian at the current point transform."""
    q = rays @ W.R.T + W.t
    uv, in_front = geo.project_points(K, q)
    h, w = cur.shape
    ok = (in_front
          & (uv[:, 0] >= 1) & (uv[:, 0] <= w - 2)
          & (uv[:, 1] >= 1) & (uv[:, 1] <= h - 2))
    if not ok.any():
        return None
    u, v = uv[ok, 0], uv[ok, 1]
    r = i_ref[ok] - bilinear(cur, u, v)
    x, y, z = q[ok, 0], q[ok, 1], q[ok, 2]
    a = K.fx / z
    b = K.fy / z
    c = -K.fx * x / (z * z)
    d = -K.fy * y / (z * z)
    # d(pixel)/d(delta) for a left-multiplicative twist [w, rho]
    ju = np.stack([c * y, a * z - c * x, -a * y, a, np.zeros_like(a), c], axis=1)
    jv = np.stack([-b * z + d * y, -d * x, b * x, np.zeros_like(b), b, d], axis=1)
    gxs = bilinear(gx, u, v)
    gys = bilinear(gy, u, v)
    J = -(gxs[:, None] * ju + gys[:, None] * jv)
    wts = huber_weight(r, delta)
    return r, wts, J, ok


def _mean_cost(rays, i_ref, W, cur, K, delta):
    q = rays @ W.R.T + W.t
    uv, in_front = geo.project_points(K, q)
    h, w = cur.shape
    ok = (in_front
          & (uv[:, 0] >= 1) & (uv[:, 0] <= w - 2)
          & (uv[:, 1] >= 1) & (uv[:, 1] <= h - 2))
    if not ok.any():
        return math.inf, ok
    r = i_ref[ok] - bilinear(cur, uv[ok, 0], uv[ok, 1])
    return float(np.mean(huber(r, delta))), ok


def align(ref: KeyframePacket, cur_image: np.ndarray, prior: Pose,
          K: CameraIntrinsics, levels: int = 3, max_iterations: int = 20,
          huber_delta: float = 0.1, conv_tol: float = 1e-6,
          min_inlier_fraction: float = 0.3, pixel_cap: int = 2500) -> AlignResult:
    """Direct image alignment of a new frame against a keyframe.

    Iteratively reweighted Levenberg-Marquardt over a coarse-to-fine
    pyramid; every accepted step left-composes the solved update onto the
    running estimate, which starts at the supplied (inertial) prior.
    Accepted steps never increase the robust photometric error. The result
    is flagged unconverged when the finest level exhausts its iteration
    budget or the inlier fraction falls below `min_inlier_fraction`.
    """
    if ref.map.n_valid < 100:
        raise InsufficientMap(f"{ref.map.n_valid} valid pixels < 100")

    imgs_ref, imgs_cur, maps, Ks = [ref.image], [cur_image], [ref.map], [K]
    for lvl in range(1, levels):
        imgs_ref.append(_downsample(imgs_ref[-1]))
        imgs_cur.append(_downsample(imgs_cur[-1]))
        maps.append(_downsample_map(maps[-1]))
        Ks.append(_level_intrinsics(K, lvl))

    W = prior.inverse()
    finest_hit_cap = False
    for lvl in range(levels - 1, -1, -1):
        cur = imgs_cur[lvl]
        gy_img, gx_img = np.gradient(cur)
        cap = max(200, pixel_cap // (2 ** lvl))
        rays, i_ref = _gather_level(imgs_ref[lvl], maps[lvl], Ks[lvl], cap)
        if rays.shape[0] < 20:
            continue
        lam = 1e-4
        err, _ = _mean_cost(rays, i_ref, W, cur, Ks[lvl], huber_delta)
        level_converged = err == 0.0
        it = 0
        while it < max_iterations and not level_converged:
            it += 1
            out = _photometric(rays, i_ref, W, cur, gx_img, gy_img,
                               Ks[lvl], huber_delta)
            if out is None:
                break
            r, wts, J, _ = out
            H = (J * wts[:, None]).T @ J
            g = J.T @ (wts * r)
            try:
                delta_xi = np.linalg.solve(H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(6), -g)
            except np.linalg.LinAlgError:
                break
            trial = geo.se3_exp(delta_xi).compose(W)
            trial_err, _ = _mean_cost(rays, i_ref, trial, cur, Ks[lvl], huber_delta)
            if trial_err < err:
                W = trial
                err = trial_err
                lam = max(lam / 3.0, 1e-7)
                if np.linalg.norm(delta_xi) < conv_tol or err == 0.0:
                    level_converged = True
            else:
                lam = min(lam * 5.0, 1e7)
        if lvl == 0:
            finest_hit_cap = not level_converged

    # Final statistics on the finest level.
    cur = imgs_cur[0]
    rays, i_ref = _gather_level(imgs_ref[0], maps[0], Ks[0], max(200, pixel_cap))
    q = rays @ W.R.T + W.t
    uv, in_front = geo.project_points(Ks[0], q)
    h, w = cur.shape
    ok = (in_front
          & (uv[:, 0] >= 1) & (uv[:, 0] <= w - 2)
          & (uv[:, 1] >= 1) & (uv[:, 1] <= h - 2))
    if ok.any():
        r = i_ref[ok] - bilinear(cur, uv[ok, 0], uv[ok, 1])
        final_error = float(np.mean(huber(r, huber_delta)))
        inliers = int(np.count_nonzero(np.abs(r) <= 2.0 * huber_delta))
    else:
        final_error = math.inf
        inliers = 0
    inlier_fraction = inliers / rays.shape[0]

    pose = W.inverse()
    converged = (not finest_hit_cap) and inlier_fraction >= min_inlier_fraction
    return AlignResult(
        xi=geo.se3_log(pose),
        pose=pose,
        final_error=final_error,
        converged=converged,
        inlier_fraction=inlier_fraction,
    )


class ScaleEstimator:
    """Running mean of VO-to-metric displacement quotients, low-passed.

    The first accepted sample initializes the filter at the window mean, so
    a constant quotient stream holds the estimate exactly.
    """

    def __init__(self, window: int = 15, alpha: float = 0.1):
        self.window = window
        self.alpha = alpha
        self.samples = deque(maxlen=window)
        self.lam = None

    @property
    def metric_scale(self) -> float:
        """Multiplier converting VO units to meters (1/lambda)."""
        if self.lam is None:
            return 1.0
        return 1.0 / self.lam


def update_scale(est: ScaleEstimator, vo_delta, metric_delta) -> ScaleEstimator:
    m = float(np.linalg.norm(np.asarray(metric_delta, dtype=float)))
    if m <= 0.01:
        raise NegligibleMotion(f"metric displacement {m:.4f} m")
    q = float(np.linalg.norm(np.asarray(vo_delta, dtype=float))) / m
    est.samples.append(q)
    mean = float(np.mean(est.samples))
    if est.lam is None:
        est.lam = mean
    else:
        est.lam = (1.0 - est.alpha) * est.lam + est.alpha * mean
    est.lam = max(est.lam, 1e-9)
    return est
