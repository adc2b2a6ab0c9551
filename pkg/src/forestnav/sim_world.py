"""Synthetic forest world: Poisson tree placement, ground-truth linear
plant with gusting wind, a ray-cast cylinder renderer, gyro synthesis and
collision checks.

Everything is a pure function of (seed, config, t); repeated episodes with
the same seed are bit-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .flight_control import ControlCmd, PlantState
from .geometry import CameraIntrinsics, Pose
from .tracking import ImuSample

TREE_RADIUS_MIN = 0.1
TREE_RADIUS_MAX = 0.5
TREE_HEIGHT = 10.0
MIN_TREE_GAP = 1.0
START_CLEARANCE = 2.0
SKY_INTENSITY = 0.85


@dataclass
class World:
    trees: np.ndarray  # (N, 3) columns x, y, radius
    bounds: tuple  # (xmin, xmax, ymin, ymax)
    goal: np.ndarray
    start: np.ndarray
    texture_seed: int
    tree_height: float = TREE_HEIGHT


@dataclass
class TruePlant:
    A: np.ndarray
    B: np.ndarray
    noise_sigma: np.ndarray
    dt: float


@dataclass
class Gust:
    onset: float
    duration: float
    bias: np.ndarray  # per-step velocity bias, 2-vector

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=float)
        if self.duration <= 0:
            raise ValueError("gust duration must be positive")


@dataclass
class WindProcess:
    seed: int
    gusts: list = field(default_factory=list)
    noise_sigma: float = 0.0


@dataclass
class RenderOutput:
    intensity: np.ndarray
    depth: np.ndarray  # meters; 0 = sky / no hit


def gen_forest(seed: int, density: float, bounds, start=(0.0, 0.0),
               goal=None, max_attempts: int = 500) -> World:
    """Homogeneous Poisson forest with clearance constraints.

    The tree count is a Poisson draw at density * area; each tree is
    rejection-resampled until it clears the start position by 2 m (surface
    distance), keeps a 1 m gap to already placed trees, and clears the goal
    when one is given.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    xmin, xmax, ymin, ymax = bounds
    area = (xmax - xmin) * (ymax - ymin)
    rng = np.random.default_rng(seed)
    count = int(rng.poisson(density * area))
    start = np.asarray(start, dtype=float)
    goal_arr = None if goal is None else np.asarray(goal, dtype=float)

    placed = []
    for _ in range(count):
        for _ in range(max_attempts):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            r = rng.uniform(TREE_RADIUS_MIN, TREE_RADIUS_MAX)
            if math.hypot(x - start[0], y - start[1]) - r < START_CLEARANCE:
                continue
            if goal_arr is not None and math.hypot(x - goal_arr[0], y - goal_arr[1]) - r < 1.5:
                continue
            if placed:
                arr = np.asarray(placed)
                gaps = np.hypot(arr[:, 0] - x, arr[:, 1] - y) - arr[:, 2] - r
                if gaps.min() < MIN_TREE_GAP:
                    continue
            placed.append((x, y, r))
            break

    trees = np.asarray(placed, dtype=float).reshape(-1, 3)
    if goal_arr is None:
        goal_arr = np.array([xmax, (ymin + ymax) / 2.0])
    return World(trees=trees, bounds=tuple(bounds), goal=goal_arr, start=start,
                 texture_seed=seed)


def default_plant(dt: float = 0.05, drag: float = 0.6, accel_gain: float = 4.0,
                  yaw_rate_gain: float = 1.5,
                  noise_sigma=(0.0, 0.0, 0.01, 0.01, 0.002)) -> TruePlant:
    """Double-integrator kinematics with first-order command lag.

    Pitch commands forward (x) acceleration, roll lateral (y), yaw a
    heading rate. Process noise enters velocities and yaw only; positions
    are exact integrals.
    """
    A = np.array([
        [1.0, 0.0, dt, 0.0, 0.0],
        [0.0, 1.0, 0.0, dt, 0.0],
        [0.0, 0.0, 1.0 - drag * dt, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0 - drag * dt, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, accel_gain * dt, 0.0],
        [accel_gain * dt, 0.0, 0.0],
        [0.0, 0.0, yaw_rate_gain * dt],
    ])
    return TruePlant(A=A, B=B, noise_sigma=np.asarray(noise_sigma, dtype=float), dt=dt)


def step_true(plant: TruePlant, x: PlantState, u: ControlCmd,
              wind_bias=None, rng: np.random.Generator | None = None) -> PlantState:
    """One tick of the ground-truth plant; wind enters the velocity channels."""
    v = plant.A @ x.as_vector() + plant.B @ u.as_vector()
    if wind_bias is not None:
        v[2] += wind_bias[0]
        v[3] += wind_bias[1]
    if rng is not None:
        v = v + rng.normal(size=5) * plant.noise_sigma
    return PlantState.from_vector(v)


def wind_at(process: WindProcess, t: float) -> np.ndarray:
    """Piecewise-constant gust bias plus seeded white noise at time t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    w = np.zeros(2)
    for g in process.gusts:
        if g.onset <= t < g.onset + g.duration:
            w += g.bias
    if process.noise_sigma > 0:
        tick = int(round(t * 1e6))
        rng = np.random.default_rng((process.seed, tick))
        w += rng.normal(size=2) * process.noise_sigma
    return w


# --- rendering -------------------------------------------------------------

_DIRS_CACHE: dict = {}


def _camera_dirs(K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ray directions, camera frame, unit z component, (H, W, 3)."""
    key = (K.fx, K.fy, K.cx, K.cy, K.width, K.height)
    dirs = _DIRS_CACHE.get(key)
    if dirs is None:
        us, vs = np.meshgrid(np.arange(K.width, dtype=float),
                             np.arange(K.height, dtype=float))
        dirs = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy,
                         np.ones_like(us)], axis=-1)
        _DIRS_CACHE[key] = dirs
    return dirs


def _hash01(ix, iy, seed):
    mask = 0xFFFFFFFFFFFFFFFF
    z = (ix.astype(np.int64).view(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.int64).view(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
         ^ np.uint64(((seed * 2 + 1) * 0x94D049BB133111EB) & mask))
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xD6E8FEB86659FD93)
    z ^= z >> np.uint64(27)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _value_noise(x, y, seed):
    """Smooth deterministic lattice noise in [0, 1]."""
    ix, iy = np.floor(x), np.floor(y)
    fx, fy = x - ix, y - iy
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    n00 = _hash01(ix, iy, seed)
    n10 = _hash01(ix + 1, iy, seed)
    n01 = _hash01(ix, iy + 1, seed)
    n11 = _hash01(ix + 1, iy + 1, seed)
    return (n00 * (1 - sx) * (1 - sy) + n10 * sx * (1 - sy)
            + n01 * (1 - sx) * sy + n11 * sx * sy)


def _visible_trees(world: World, origin, heading_xy, K, max_dist):
    if world.trees.shape[0] == 0:
        return world.trees, np.zeros(0, dtype=int)
    rel = world.trees[:, :2] - origin[:2]
    dist = np.hypot(rel[:, 0], rel[:, 1])
    hx, hy = heading_xy
    hn = math.hypot(hx, hy)
    if hn < 1e-9:
        keep = dist < max_dist
    else:
        along = (rel[:, 0] * hx + rel[:, 1] * hy) / hn
        tan_half = (max(K.cx, K.width - K.cx) + 2.0) / K.fx
        half_angle = math.atan(tan_half) + 0.35
        ang = np.arccos(np.clip(along / np.maximum(dist, 1e-9), -1.0, 1.0))
        margin = np.arcsin(np.clip(world.trees[:, 2] / np.maximum(dist, 1e-9), 0.0, 1.0))
        keep = (dist < max_dist) & ((ang - margin < half_angle) | (dist < 2.0))
    idx = np.nonzero(keep)[0]
    return world.trees[idx], idx


def _column_span(tree, origin, R, K):
    """Pixel-column interval a vertical cylinder can cover (level camera)."""
    tx, ty, r = tree
    rel = np.array([tx - origin[0], ty - origin[1]])
    dist = math.hypot(rel[0], rel[1])
    if dist < r + 1e-6:
        return 0, K.width
    x_along = rel[0] * R[0, 0] + rel[1] * R[1, 0]
    z_along = rel[0] * R[0, 2] + rel[1] * R[1, 2]
    if z_along < 0.3:
        return 0, K.width
    half = math.asin(min(r / dist, 1.0)) + 2.0 / K.fx
    ang = math.atan2(x_along, z_along)
    alim = math.atan((max(K.cx, K.width - K.cx) + 2.0) / K.fx)
    lo, hi = ang - half, ang + half
    if lo > alim or hi < -alim:
        return 0, 0
    u0 = 0 if lo <= -alim else max(0, int(math.floor(K.fx * math.tan(lo) + K.cx)) - 1)
    u1 = K.width if hi >= alim else min(K.width, int(math.ceil(K.fx * math.tan(hi) + K.cx)) + 2)
    return u0, u1


def render(world: World, camera_pose: Pose, K: CameraIntrinsics,
           max_dist: float = 45.0) -> RenderOutput:
    """Ray-cast the forest: vertical cylinders over a textured ground plane.

    Depth is the hit distance along the camera z axis (0 for sky; ground
    beyond `max_dist` is treated as sky to keep far-field texture sane).
    Tree bark carries seeded angular bands with strong vertical edges; the
    ground gets low-contrast smooth noise; everything fades with distance.

    A level camera (y axis pointing straight down) restricts each cylinder
    to a contiguous column span, which is where all the speed comes from.
    """
    origin = camera_pose.t
    if origin[2] <= 0:
        raise ValueError("camera must be above the ground plane")
    R = camera_pose.R
    dirs = _camera_dirs(K) @ R.T  # (H, W, 3) world frame, unit z-depth
    h, w = K.height, K.width

    t_hit = np.full((h, w), np.inf)
    hit_kind = np.zeros((h, w), dtype=np.int8)  # 0 sky, 1 ground, 2 tree
    hit_tree = np.full((h, w), -1, dtype=int)

    dz = dirs[:, :, 2]
    below = dz < -1e-9
    t_g = np.where(below, -origin[2] / np.where(below, dz, 1.0), np.inf)
    ground = below & (t_g > 1e-6) & (t_g <= max_dist)
    t_hit[ground] = t_g[ground]
    hit_kind[ground] = 1

    level = abs(R[2, 0]) < 1e-9 and abs(R[2, 2]) < 1e-9
    trees, tree_ids = _visible_trees(world, origin, R[:2, 2], K, max_dist)
    ox, oy, oz = origin
    spans = {}
    for tree, tid in zip(trees, tree_ids):
        u0, u1 = _column_span(tree, origin, R, K) if level else (0, w)
        if u1 <= u0:
            continue
        spans[int(tid)] = (u0, u1)
        tx, ty, r = tree
        dx = dirs[:, u0:u1, 0]
        dy = dirs[:, u0:u1, 1]
        a = dx * dx + dy * dy
        rx, ry = ox - tx, oy - ty
        b = 2.0 * (rx * dx + ry * dy)
        c = rx * rx + ry * ry - r * r
        disc = b * b - 4.0 * a * c
        okd = (disc > 0) & (a > 1e-12)
        sq = np.sqrt(np.where(okd, disc, 0.0))
        t = (-b - sq) / np.where(okd, 2.0 * a, 1.0)
        z = oz + t * dz[:, u0:u1]
        sub_hit = t_hit[:, u0:u1]
        ok = okd & (t > 1e-6) & (z >= 0.0) & (z <= world.tree_height) & (t < sub_hit)
        sub_hit[ok] = t[ok]
        hit_kind[:, u0:u1][ok] = 2
        hit_tree[:, u0:u1][ok] = tid

    intensity = np.full((h, w), SKY_INTENSITY)
    depth = np.zeros((h, w))
    hit = hit_kind > 0
    depth[hit] = t_hit[hit]

    g = hit_kind == 1
    if g.any():
        px = origin[0] + t_hit[g] * dirs[:, :, 0][g]
        py = origin[1] + t_hit[g] * dirs[:, :, 1][g]
        noise = _value_noise(px * 0.7, py * 0.7, world.texture_seed)
        intensity[g] = 0.45 + 0.16 * (noise - 0.5)

    for tid, (u0, u1) in spans.items():
        sel = hit_tree[:, u0:u1] == tid
        if not sel.any():
            continue
        tree = world.trees[tid]
        ts = t_hit[:, u0:u1][sel]
        px = origin[0] + ts * dirs[:, u0:u1, 0][sel]
        py = origin[1] + ts * dirs[:, u0:u1, 1][sel]
        pz = origin[2] + ts * dirs[:, u0:u1, 2][sel]
        # Non-periodic bark: octaves of smooth noise over (angle, height).
        # Each octave fades out as its on-screen cell size approaches one
        # pixel (analytic band-limiting), so matching has strong gradients
        # at every range without aliasing at any.
        cx, cy, r = tree
        nx = (px - cx) / r
        ny = (py - cy) / r
        view = np.stack([px - origin[0], py - origin[1]], axis=-1)
        vn = np.linalg.norm(view, axis=-1)
        vn = np.maximum(vn, 1e-9)
        cosg = np.clip(-(nx * view[:, 0] + ny * view[:, 1]) / vn, 0.0, 1.0)
        depth_here = np.maximum(ts, 1e-6)
        px_per_rad = K.fx * r * cosg / depth_here
        px_per_z = K.fy / depth_here

        phi = np.arctan2(ny, nx)
        seed0 = world.texture_seed * 1000003 + int(tid) * 16
        tex = np.full(phi.shape, 0.45)
        for j, (fa_, fz_, amp, steep) in enumerate(
                ((1.3, 0.45, 0.28, 5.0), (3.2, 1.1, 0.24, 5.0),
                 (7.5, 2.6, 0.18, 5.0), (16.0, 5.5, 0.12, 4.0))):
            cells = np.minimum(px_per_rad / fa_, px_per_z / fz_)
            wgt = np.clip((cells - 2.5) / 2.5, 0.0, 1.0)
            if not wgt.any():
                continue
            noise = _value_noise(phi * fa_, pz * fz_, seed0 + j)
            # Steepened bands: ridge-like edges a pixel or two wide on
            # screen, which is what the gradient-based pixel selection and
            # the epipolar matcher feed on.
            edged = np.clip(steep * (noise - 0.5) + 0.5, 0.0, 1.0)
            edged = edged * edged * (3.0 - 2.0 * edged)
            tex += amp * wgt * (2.0 * edged - 1.0)
        block = intensity[:, u0:u1]
        block[sel] = np.clip(tex, 0.04, 0.74)

    fall = 0.35 + 0.65 / (1.0 + 0.04 * depth[hit])
    intensity[hit] = np.clip(intensity[hit] * fall, 0.0, 1.0)

    return RenderOutput(intensity=intensity, depth=depth)


def camera_pose_for(x: float, y: float, theta: float, altitude: float) -> Pose:
    """Camera-to-world pose for a level vehicle heading `theta`.

    Camera axes: z along the heading, x to the vehicle's right, y down.
    """
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([
        [s, 0.0, c],
        [-c, 0.0, s],
        [0.0, -1.0, 0.0],
    ])
    return Pose(R, np.array([x, y, altitude]))


def synth_imu(attitude, t0: float, t1: float, rate_hz: float,
              bias=(0.0, 0.0, 0.0), noise_sigma: float = 0.0,
              seed: int = 0) -> list[ImuSample]:
    """Sample gyro measurements from an attitude trajectory.

    `attitude` maps time to a camera/body rotation matrix. The true body
    rate over each sample interval is the finite rotation increment divided
    by dt, so a noise- and bias-free stream preintegrates back to the exact
    relative rotation.
    """
    from . import geometry as geo

    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    n = max(1, int(round((t1 - t0) * rate_hz)))
    dt = (t1 - t0) / n
    bias = np.asarray(bias, dtype=float)
    rng = np.random.default_rng(seed) if noise_sigma > 0 else None
    samples = []
    for k in range(n):
        Ra = attitude(t0 + k * dt)
        Rb = attitude(t0 + (k + 1) * dt)
        omega = geo.so3_log(Ra.T @ Rb) / dt
        measured = omega + bias
        if rng is not None:
            measured = measured + rng.normal(size=3) * noise_sigma
        samples.append(ImuSample(omega=measured, dt=dt))
    return samples


def check_collision(world: World, position, vehicle_radius: float) -> bool:
    """True iff the disc at `position` strictly overlaps any tree."""
    if world.trees.shape[0] == 0:
        return False
    d = np.hypot(world.trees[:, 0] - position[0], world.trees[:, 1] - position[1])
    return bool(np.any(d < world.trees[:, 2] + vehicle_radius))


def save_world_csv(path, world: World):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tree_id", "x", "y", "radius"])
        for i, (x, y, r) in enumerate(world.trees):
            writer.writerow([i, f"{x:.9g}", f"{y:.9g}", f"{r:.9g}"])


def load_world_csv(path, bounds, goal, start=(0.0, 0.0), texture_seed: int = 0) -> World:
    trees = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            trees.append([float(row[1]), float(row[2]), float(row[3])])
    return World(trees=np.asarray(trees, dtype=float).reshape(-1, 3),
                 bounds=tuple(bounds), goal=np.asarray(goal, dtype=float),
                 start=np.asarray(start, dtype=float), texture_seed=texture_seed)
