"""Semi-dense inverse-depth mapping.

The map stores per-pixel inverse depth (1/m), its variance and a validity
flag. Mapping operations are pure: they return new maps and never mutate
their inputs. Invalid pixels are excluded from every sum and every export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, project_points, unproject_pixels

# Squared-gradient threshold for semi-dense pixel selection ([0,1] intensities).
GRADIENT_THRESHOLD = 0.01

# Inverse-depth search interval, 1/m (depths 0.5 .. 20 m).
D_SEARCH_MIN = 0.05
D_SEARCH_MAX = 2.0

# Additive variance inflation applied on every propagation.
PROPAGATION_INFLATION = 1e-5

PATCH_OFFSETS = (-2.0, -1.0, 0.0, 1.0, 2.0)


class DegenerateBaseline(ValueError):
    """Relative translation too small for stereo triangulation."""


@dataclass
class InverseDepthMap:
    mu: np.ndarray
    var: np.ndarray
    valid: np.ndarray

    @classmethod
    def empty(cls, width: int, height: int) -> "InverseDepthMap":
        return cls(
            mu=np.zeros((height, width)),
            var=np.zeros((height, width)),
            valid=np.zeros((height, width), dtype=bool),
        )

    @property
    def width(self) -> int:
        return self.mu.shape[1]

    @property
    def height(self) -> int:
        return self.mu.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def copy(self) -> "InverseDepthMap":
        return InverseDepthMap(self.mu.copy(), self.var.copy(), self.valid.copy())


@dataclass
class DepthObservation:
    u: int
    v: int
    mu_obs: float
    var_obs: float


@dataclass
class DepthHypothesisSet:
    """Three metric depth images; 0 marks a pixel invalid in that hypothesis."""
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def bilinear(img: np.ndarray, u, v):
    """Bilinear sample; callers must keep (u, v) at least one pixel inside."""
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    fu = u - u0
    fv = v - v0
    return (img[v0, u0] * (1 - fu) * (1 - fv)
            + img[v0, u0 + 1] * fu * (1 - fv)
            + img[v0 + 1, u0] * (1 - fu) * fv
            + img[v0 + 1, u0 + 1] * fu * fv)


def semidense_mask(image: np.ndarray, threshold: float = GRADIENT_THRESHOLD,
                   margin: int = 3) -> np.ndarray:
    """Pixels whose squared gradient magnitude clears the semi-dense threshold."""
    gy, gx = np.gradient(image)
    mask = gx * gx + gy * gy > threshold
    mask[:margin, :] = False
    mask[-margin:, :] = False
    mask[:, :margin] = False
    mask[:, -margin:] = False
    return mask


def _epipolar_dirs_ref(uv, t, K):
    """Unit epipolar direction at each ref pixel (toward/away from the epipole)."""
    if abs(t[2]) > 1e-6:
        epi = np.array([K.fx * t[0] / t[2] + K.cx, K.fy * t[1] / t[2] + K.cy])
        dirs = uv - epi
    else:
        dirs = np.broadcast_to(np.array([K.fx * t[0], K.fy * t[1]]), uv.shape).copy()
    norms = np.linalg.norm(dirs, axis=1)
    norms[norms < 1e-9] = 1.0
    return dirs / norms[:, None]


def init_stereo(ref_image: np.ndarray, ref_gradient_mask: np.ndarray,
                cur_image: np.ndarray, relative_pose: Pose, K: CameraIntrinsics,
                n_steps: int = 96, sigma_photo: float = 0.01,
                max_candidates: int = 6000, ssd_accept: float = 0.02,
                ambiguity_ratio: float = 1.6,
                saturation_reject: float = 0.80) -> list[DepthObservation]:
    """One-dimensional inverse-depth search along the epipolar line.

    For every masked ref pixel, a 5-sample SSD is swept over the inverse
    depth interval; the minimum is refined by parabola fit and converted to
    a variance through the geometric disparity model. Pixels whose SSD
    profile has a competitive second minimum (or no acceptable minimum at
    all) emit nothing, and neither do patches containing near-ceiling
    (saturated / sky) samples, which sit on occlusion boundaries where
    matching tracks the foreground silhouette instead of the pixel's own
    surface.

    `relative_pose` is the current camera's pose in the ref frame; its
    translation is the stereo baseline.
    """
    baseline = float(np.linalg.norm(relative_pose.t))
    if baseline < 0.01:
        raise DegenerateBaseline(f"baseline {baseline:.4f} m")
    if ref_image.shape != cur_image.shape:
        raise ValueError("image dimensions differ")

    vs, us = np.nonzero(ref_gradient_mask)
    if us.size == 0:
        return []
    if us.size > max_candidates:
        gy, gx = np.gradient(ref_image)
        strength = (gx * gx + gy * gy)[vs, us]
        keep = np.argsort(strength)[::-1][:max_candidates]
        keep.sort()
        us, vs = us[keep], vs[keep]

    uv = np.column_stack([us, vs]).astype(float)
    n = uv.shape[0]
    n_off = len(PATCH_OFFSETS)

    W = relative_pose.inverse()
    e_ref = _epipolar_dirs_ref(uv, relative_pose.t, K)
    offs = np.asarray(PATCH_OFFSETS)
    patch_uv = uv[None, :, :] + offs[:, None, None] * e_ref[None, :, :]  # (5, N, 2)
    ref_patch = bilinear(ref_image, patch_uv[:, :, 0], patch_uv[:, :, 1])

    keep = np.max(ref_patch, axis=0) < saturation_reject
    if not keep.any():
        return []
    uv, e_ref = uv[keep], e_ref[keep]
    patch_uv, ref_patch = patch_uv[:, keep], ref_patch[:, keep]
    n = uv.shape[0]

    # The whole patch is warped at each candidate depth, which keeps its
    # orientation and local scale consistent between the two images.
    rays = unproject_pixels(K, patch_uv.reshape(-1, 2), np.ones(n_off * n))
    rays_cur = (rays @ W.R.T).reshape(n_off, n, 3)

    ds = np.linspace(D_SEARCH_MIN, D_SEARCH_MAX, n_steps)
    h, w = cur_image.shape
    center_u = np.empty((n_steps, n))
    center_v = np.empty((n_steps, n))
    ssd = np.empty((n_steps, n))
    for i, d in enumerate(ds):
        p = rays_cur / d + W.t
        z = p[:, :, 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        pu = K.fx * p[:, :, 0] / zs + K.cx
        pv = K.fy * p[:, :, 1] / zs + K.cy
        ok = (front & (pu >= 1) & (pu <= w - 2) & (pv >= 1) & (pv <= h - 2))
        patch_ok = ok.all(axis=0)
        vals = bilinear(cur_image, np.clip(pu, 1, w - 2), np.clip(pv, 1, h - 2))
        acc = np.sum((ref_patch - vals) ** 2, axis=0)
        ssd[i] = np.where(patch_ok, acc, np.inf)
        center_u[i] = pu[n_off // 2]
        center_v[i] = pv[n_off // 2]

    best = np.argmin(ssd, axis=0)
    cols = np.arange(n)
    ssd_min = ssd[best, cols]

    usable = np.isfinite(ssd_min) & (ssd_min < ssd_accept)
    usable &= (best > 0) & (best < n_steps - 1)

    # Ambiguity: a rival minimum away from the chosen one kills the pixel.
    masked = ssd.copy()
    step_idx = np.arange(n_steps)[:, None]
    masked[np.abs(step_idx - best[None, :]) <= 3] = np.inf
    second = masked.min(axis=0)
    usable &= second > ambiguity_ratio * np.maximum(ssd_min, 1e-8) + 1e-4

    if not usable.any():
        return []

    b = best[usable]
    c = cols[usable]
    s0, s1, s2 = ssd[b - 1, c], ssd[b, c], ssd[b + 1, c]
    refinable = np.isfinite(s0) & np.isfinite(s2)
    denom = np.where(refinable, s0 - 2.0 * s1 + s2, 1.0)
    offset = np.where(refinable & (np.abs(denom) > 1e-12),
                      0.5 * (s0 - s2) / np.where(np.abs(denom) > 1e-12, denom, 1.0),
                      0.0)
    offset = np.clip(offset, -1.0, 1.0)
    step = ds[1] - ds[0]
    d_refined = ds[b] + offset * step

    # Geometric disparity error model: pixel matching noise over the product
    # of epipolar gradient and sweep slope (pixels per unit inverse depth).
    bp = np.minimum(b + 1, n_steps - 1)
    bm = np.maximum(b - 1, 0)
    du = center_u[bp, c] - center_u[bm, c]
    dv = center_v[bp, c] - center_v[bm, c]
    span = np.hypot(du, dv)
    du_dd = span / ((bp - bm) * step)
    tn = np.maximum(span, 1e-12)
    eu, ev = du / tn, dv / tn
    pu = np.clip(center_u[b, c], 2, w - 3)
    pv = np.clip(center_v[b, c], 2, h - 3)
    g_epi = np.abs(bilinear(cur_image, pu + eu, pv + ev)
                   - bilinear(cur_image, pu - eu, pv - ev)) / 2.0
    var = (sigma_photo / np.maximum(g_epi * du_dd, 1e-6)) ** 2
    var = np.maximum(var, 1e-6)

    return [
        DepthObservation(int(uv[i, 0]), int(uv[i, 1]), float(d), float(v))
        for i, d, v in zip(c, d_refined, var)
    ]


def _fuse_arrays(map_in: InverseDepthMap, us, vs, mu_obs, var_obs) -> InverseDepthMap:
    out = map_in.copy()
    valid = out.valid[vs, us]
    mu = out.mu[vs, us]
    var = out.var[vs, us]

    gate = np.abs(mu - mu_obs) <= 2.0 * np.sqrt(var + var_obs)
    upd = valid & gate
    mu_new = np.where(upd, (var_obs * mu + var * mu_obs) / (var + var_obs), mu)
    var_new = np.where(upd, var * var_obs / (var + var_obs), var)

    init = ~valid
    mu_new = np.where(init, mu_obs, mu_new)
    var_new = np.where(init, var_obs, var_new)

    out.mu[vs, us] = mu_new
    out.var[vs, us] = var_new
    out.valid[vs, us] = True
    return out


def fuse(map_in: InverseDepthMap, obs: DepthObservation) -> InverseDepthMap:
    """Inverse-variance-weighted fusion of a single observation.

    A valid pixel only accepts the observation when the two estimates agree
    within two combined sigmas; an invalid pixel adopts it outright.
    """
    if not (0 <= obs.u < map_in.width and 0 <= obs.v < map_in.height):
        raise ValueError(f"observation at ({obs.u}, {obs.v}) outside the map")
    return _fuse_arrays(map_in, np.array([obs.u]), np.array([obs.v]),
                        np.array([obs.mu_obs]), np.array([obs.var_obs]))


def fuse_many(map_in: InverseDepthMap, observations) -> InverseDepthMap:
    """Batch fusion; observations must target distinct pixels."""
    if not observations:
        return map_in.copy()
    us = np.array([o.u for o in observations])
    vs = np.array([o.v for o in observations])
    mu = np.array([o.mu_obs for o in observations])
    var = np.array([o.var_obs for o in observations])
    return _fuse_arrays(map_in, us, vs, mu, var)


def propagate(map_in: InverseDepthMap, pose_change: Pose,
              K: CameraIntrinsics) -> InverseDepthMap:
    """Reproject the map into the frame whose camera moved by `pose_change`.

    Each valid pixel's 3-D point lands on the nearest integer pixel of the
    new frame with the transformed inverse depth; variance is scaled by the
    (d_new/d_old)^4 Jacobian factor and inflated by the per-frame noise
    term. Collisions keep the nearer point; points behind the camera or out
    of frame are dropped.
    """
    h, w = map_in.mu.shape
    out = InverseDepthMap.empty(w, h)
    vs, us = np.nonzero(map_in.valid)
    if us.size == 0:
        return out
    mu = map_in.mu[vs, us]
    var = map_in.var[vs, us]

    pts = unproject_pixels(K, np.column_stack([us, vs]).astype(float), mu)
    q = pose_change.inverse().apply(pts)
    uv, in_front = project_points(K, q)
    ui = np.round(uv[:, 0]).astype(int)
    vi = np.round(uv[:, 1]).astype(int)
    ok = in_front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    if not ok.any():
        return out

    mu_new = 1.0 / q[ok, 2]
    ratio = mu_new / mu[ok]
    var_new = var[ok] * ratio ** 4 + PROPAGATION_INFLATION

    # Nearer points written last so they win pixel collisions.
    order = np.argsort(mu_new, kind="stable")
    ui, vi = ui[ok][order], vi[ok][order]
    out.mu[vi, ui] = mu_new[order]
    out.var[vi, ui] = var_new[order]
    out.valid[vi, ui] = True
    return out


def regularize(map_in: InverseDepthMap) -> InverseDepthMap:
    """One smoothing pass: inverse-variance-weighted 4-neighborhood mean.

    A neighbor only participates when it agrees with the center within two
    of the center's sigmas, which preserves depth edges. All reads come
    from the input snapshot; variance is left untouched.
    """
    mu0, var0, valid0 = map_in.mu, map_in.var, map_in.valid
    weight_c = np.where(valid0, 1.0 / np.where(valid0, var0, 1.0), 0.0)
    acc_w = weight_c.copy()
    acc_mu = weight_c * mu0
    gate_width = 2.0 * np.sqrt(var0)

    for dv, du in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        mu_n = np.roll(mu0, (dv, du), axis=(0, 1))
        var_n = np.roll(var0, (dv, du), axis=(0, 1))
        valid_n = np.roll(valid0, (dv, du), axis=(0, 1))
        # Rolled-over edges are not real neighbors.
        if dv == -1:
            valid_n = valid_n.copy(); valid_n[-1, :] = False
        elif dv == 1:
            valid_n = valid_n.copy(); valid_n[0, :] = False
        elif du == -1:
            valid_n = valid_n.copy(); valid_n[:, -1] = False
        else:
            valid_n = valid_n.copy(); valid_n[:, 0] = False
        include = valid0 & valid_n & (np.abs(mu_n - mu0) <= gate_width)
        w_n = np.where(include, 1.0 / np.where(include, var_n, 1.0), 0.0)
        acc_w += w_n
        acc_mu += w_n * mu_n

    out = map_in.copy()
    out.mu = np.where(valid0, acc_mu / np.where(valid0, acc_w, 1.0), mu0)
    return out


def predict_multi(map_in: InverseDepthMap, eps_d: float = 1e-3) -> DepthHypothesisSet:
    """Three depth interpretations: mean and +-1 sigma in inverse depth.

    The far (upper-confidence) hypothesis drops pixels whose mu - sigma
    would cross zero.
    """
    sigma = np.sqrt(map_in.var)
    valid = map_in.valid
    mu = map_in.mu

    mean = np.where(valid & (mu > eps_d), 1.0 / np.where(mu > eps_d, mu, 1.0), 0.0)
    lo_div = mu + sigma
    lower = np.where(valid & (lo_div > eps_d),
                     1.0 / np.where(lo_div > eps_d, lo_div, 1.0), 0.0)
    hi_div = mu - sigma
    upper = np.where(valid & (hi_div > eps_d),
                     1.0 / np.where(hi_div > eps_d, hi_div, 1.0), 0.0)
    return DepthHypothesisSet(mean=mean, lower=lower, upper=upper)


def to_pointcloud(depth_image: np.ndarray, scale: float, K: CameraIntrinsics,
                  camera_pose: Pose) -> np.ndarray:
    """World-frame points from a depth image scaled to metric units.

    Pixels with depth <= 0 are skipped. Returns an (N, 3) array.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    vs, us = np.nonzero(depth_image > 0)
    if us.size == 0:
        return np.zeros((0, 3))
    z = scale * depth_image[vs, us]
    pts = np.empty((us.size, 3))
    pts[:, 0] = (us - K.cx) / K.fx * z
    pts[:, 1] = (vs - K.cy) / K.fy * z
    pts[:, 2] = z
    return camera_pose.apply(pts)


def map_to_depth(map_in: InverseDepthMap, max_var: float | None = None) -> np.ndarray:
    """Metric-per-VO-unit depth image; 0 where invalid or too uncertain."""
    ok = map_in.valid & (map_in.mu > 1e-9)
    if max_var is not None:
        ok = ok & (map_in.var <= max_var)
    return np.where(ok, 1.0 / np.where(ok, map_in.mu, 1.0), 0.0)
