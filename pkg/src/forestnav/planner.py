"""Receding-horizon planning: motion-primitive library, dispersion
budgeting, and trajectory scoring averaged over depth interpretations.

Library members are planar arcs with linearly varying curvature, arc-length
parameterized in the vehicle-start frame (+x forward). Scoring combines
distance-to-goal with a squared-hinge clearance penalty, evaluated against
obstacle point clouds; the selector takes the argmin of the mean cost over
all supplied interpretations of the scene.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

LIBRARY_SIZE = 2401  # 49 x 49 curvature grid
BUDGET = 78
ARC_LENGTH = 5.0
POINT_SPACING = 0.125
K0_MAX = 0.4  # initial curvature bound, 1/m
K1_MAX = 0.2  # curvature rate bound, 1/m^2


@dataclass
class Trajectory:
    points: np.ndarray  # (P, 2)
    s: np.ndarray  # (P,) arc length at each point
    index: int | None = None

    @property
    def arc_length(self) -> float:
        return float(self.s[-1])

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]


@dataclass
class TrajectoryLibrary:
    full: list
    subset: np.ndarray | None = None

    def budgeted(self) -> list:
        if self.subset is None:
            raise ValueError("library has no budgeted subset yet")
        return [self.full[i] for i in self.subset]


@dataclass
class ScoreWeights:
    w_goal: float = 1.0
    w_collision: float = 10.0
    clearance: float = 0.75
    z_min: float = 0.4
    z_max: float = 2.6


def generate_library(count: int = LIBRARY_SIZE, length: float = ARC_LENGTH,
                     k0_max: float = K0_MAX, k1_max: float = K1_MAX,
                     spacing: float = POINT_SPACING) -> TrajectoryLibrary:
    """Arcs with curvature k(s) = k0 + k1*s on a symmetric odd grid.

    The grid is mirror-symmetric (negating both parameters reflects the
    trajectory across the heading axis) and contains the straight segment
    at its center.
    """
    side = round(math.sqrt(count))
    if side * side != count or side % 2 == 0:
        raise ValueError("count must be the square of an odd number")
    k0s = np.linspace(-k0_max, k0_max, side)
    k1s = np.linspace(-k1_max, k1_max, side)

    n_pts = int(round(length / spacing)) + 1
    sub = 5  # integration substeps per stored point
    s_fine = np.linspace(0.0, length, (n_pts - 1) * sub + 1)

    trajectories = []
    idx = 0
    for k0 in k0s:
        for k1 in k1s:
            psi = k0 * s_fine + 0.5 * k1 * s_fine ** 2
            cx = np.cos(psi)
            cy = np.sin(psi)
            ds = s_fine[1] - s_fine[0]
            x = np.concatenate([[0.0], np.cumsum((cx[1:] + cx[:-1]) * 0.5 * ds)])
            y = np.concatenate([[0.0], np.cumsum((cy[1:] + cy[:-1]) * 0.5 * ds)])
            pts = np.column_stack([x[::sub], y[::sub]])
            trajectories.append(Trajectory(points=pts, s=s_fine[::sub].copy(), index=idx))
            idx += 1
    return TrajectoryLibrary(full=trajectories)


def trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    """Maximum pointwise separation at matched arc lengths."""
    return float(np.max(np.linalg.norm(a.points - b.points, axis=1)))


def max_dispersion_subset(library: TrajectoryLibrary, budget: int = BUDGET) -> np.ndarray:
    """Greedy farthest-point budgeting seeded at the straight trajectory.

    Each round adds the member maximizing the minimum distance to the
    selected set; ties break to the lowest index, so the result is
    deterministic.
    """
    full = library.full
    m = len(full)
    if budget > m:
        raise ValueError("budget exceeds library size")
    pts = np.stack([t.points for t in full])  # (M, P, 2)

    straight = int(np.argmin(np.max(np.abs(pts[:, :, 1]), axis=1)))
    selected = [straight]
    d = np.max(np.linalg.norm(pts - pts[straight], axis=2), axis=1)
    d[straight] = -1.0
    while len(selected) < budget:
        nxt = int(np.argmax(d))
        selected.append(nxt)
        dn = np.max(np.linalg.norm(pts - pts[nxt], axis=2), axis=1)
        d = np.minimum(d, dn)
        d[nxt] = -1.0
    return np.asarray(selected, dtype=int)


def _band_filter(pointcloud: np.ndarray, weights: ScoreWeights) -> np.ndarray:
    """Drop points outside the vehicle height band; returns (N, 2) xy."""
    pc = np.asarray(pointcloud, dtype=float)
    if pc.size == 0:
        return np.zeros((0, 2))
    if pc.shape[1] == 3:
        keep = (pc[:, 2] >= weights.z_min) & (pc[:, 2] <= weights.z_max)
        return pc[keep, :2]
    return pc


def score_trajectory(traj: Trajectory, pointcloud, goal,
                     weights: ScoreWeights) -> float:
    """Goal-distance plus squared-hinge collision cost against a cloud."""
    goal = np.asarray(goal, dtype=float)
    cost = weights.w_goal * float(np.linalg.norm(traj.endpoint - goal))
    xy = _band_filter(pointcloud, weights)
    if xy.shape[0]:
        d = np.linalg.norm(xy[:, None, :] - traj.points[None, :, :], axis=2)
        d_min = d.min(axis=1)
        hinge = np.maximum(0.0, 1.0 - d_min / weights.clearance)
        cost += weights.w_collision * float(np.sum(hinge ** 2))
    return cost


def _score_batch(trajs, clouds_xy, goal, weights: ScoreWeights) -> np.ndarray:
    """Mean cost per trajectory across interpretations; matches
    score_trajectory exactly, evaluated with one flattened distance matrix."""
    pts = np.stack([t.points for t in trajs])  # (T, P, 2)
    tshape = pts.shape
    flat = pts.reshape(-1, 2)
    ends = pts[:, -1, :]
    goal_cost = weights.w_goal * np.linalg.norm(ends - np.asarray(goal, dtype=float), axis=1)
    total = np.zeros(len(trajs))
    for xy in clouds_xy:
        cost = goal_cost.copy()
        if xy.shape[0]:
            d2 = (np.sum(flat ** 2, axis=1)[:, None]
                  + np.sum(xy ** 2, axis=1)[None, :]
                  - 2.0 * flat @ xy.T)
            d = np.sqrt(np.maximum(d2, 0.0)).reshape(tshape[0], tshape[1], -1)
            d_min = d.min(axis=1)  # (T, N)
            hinge = np.maximum(0.0, 1.0 - d_min / weights.clearance)
            cost = cost + weights.w_collision * np.sum(hinge ** 2, axis=1)
        total += cost
    return total / len(clouds_xy)


def select_best(trajs, hypothesis_clouds, goal, weights: ScoreWeights) -> Trajectory:
    """Argmin of the mean cost over all scene interpretations.

    `trajs` are already expressed in the same frame as the clouds and the
    goal. Ties break to the first (lowest-position) trajectory.
    """
    if not hypothesis_clouds:
        raise ValueError("need at least one hypothesis cloud")
    clouds_xy = [_band_filter(c, weights) for c in hypothesis_clouds]
    costs = _score_batch(trajs, clouds_xy, goal, weights)
    return trajs[int(np.argmin(costs))]


def transform_trajectory(traj: Trajectory, position, heading: float) -> Trajectory:
    """Vehicle-start-frame trajectory expressed in the world frame."""
    c, s = math.cos(heading), math.sin(heading)
    R = np.array([[c, -s], [s, c]])
    return Trajectory(points=traj.points @ R.T + np.asarray(position, dtype=float),
                      s=traj.s, index=traj.index)


def save_library_csv(path, trajectories):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["traj_id", "s", "x", "y"])
        for t in trajectories:
            tid = t.index if t.index is not None else -1
            for si, (x, y) in zip(t.s, t.points):
                writer.writerow([tid, f"{si:.9g}", f"{x:.9g}", f"{y:.9g}"])
