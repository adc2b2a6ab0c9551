"""Planar flight control: learned linear plant, wind-bias estimation, LQR.

State vector layout is [x, y, vx, vy, theta] (positions m, velocities m/s,
yaw rad, world frame); commands are [roll, pitch, yaw] in normalized units
clamped to [-1, 1].
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

STATE_DIM = 5
CONTROL_DIM = 3

FLIGHT_LOG_HEADER = ["t", "x", "y", "vx", "vy", "theta", "u_roll", "u_pitch", "u_yaw"]


class RankDeficient(ValueError):
    """Regression data is not persistently exciting."""


class NotStabilizable(RuntimeError):
    """Riccati iteration diverged or the closed loop is unstable."""


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass
class PlantState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.theta])

    @classmethod
    def from_vector(cls, v) -> "PlantState":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3], v[4])

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass
class ControlCmd:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        self.roll = float(np.clip(self.roll, -1.0, 1.0))
        self.pitch = float(np.clip(self.pitch, -1.0, 1.0))
        self.yaw = float(np.clip(self.yaw, -1.0, 1.0))

    def as_vector(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])

    @classmethod
    def from_vector(cls, v) -> "ControlCmd":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2])


@dataclass
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    dt: float
    residual_rms: np.ndarray | None = None


@dataclass
class WindBias:
    w_px: float = 0.0
    w_py: float = 0.0
    w_vx: float = 0.0
    w_vy: float = 0.0
    # yaw is never biased by wind

    def as_vector(self) -> np.ndarray:
        return np.array([self.w_px, self.w_py, self.w_vx, self.w_vy, 0.0])

    def magnitude(self) -> float:
        return math.hypot(self.w_vx, self.w_vy)

    def heading(self) -> float:
        return math.atan2(self.w_vy, self.w_vx)


class ResidualWindow:
    """Ring buffer of the last N one-step prediction errors (5-vectors)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._buf = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    @property
    def full(self) -> bool:
        return len(self._buf) == self.capacity

    def push(self, residual):
        self._buf.append(np.asarray(residual, dtype=float))

    def as_array(self) -> np.ndarray:
        if not self._buf:
            return np.zeros((0, STATE_DIM))
        return np.stack(list(self._buf))


def fit_model(states, controls, dt: float) -> SystemModel:
    """Least-squares fit of x(t+1) = A x(t) + B u(t) from logged transitions.

    `states` holds one more entry than `controls`; yaw is unwrapped before
    stacking so the regression never sees the +-pi seam.
    """
    if len(states) != len(controls) + 1:
        raise ValueError("need len(states) == len(controls) + 1")
    n = len(controls)
    if n < 200:
        raise ValueError(f"need at least 200 transitions, got {n}")
    X = np.stack([s.as_vector() for s in states])
    X[:, 4] = np.unwrap(X[:, 4])
    U = np.stack([u.as_vector() for u in controls])
    Z = np.hstack([X[:-1], U])
    Y = X[1:]
    coeffs, _, rank, _ = np.linalg.lstsq(Z, Y, rcond=None)
    if rank < STATE_DIM + CONTROL_DIM:
        raise RankDeficient(f"regressor rank {rank} < {STATE_DIM + CONTROL_DIM}")
    A = coeffs[:STATE_DIM].T
    B = coeffs[STATE_DIM:].T
    rms = np.sqrt(np.mean((Z @ coeffs - Y) ** 2, axis=0))
    return SystemModel(A=A, B=B, dt=dt, residual_rms=rms)


def predict(model: SystemModel, x: PlantState, u: ControlCmd,
            w: WindBias | None = None) -> PlantState:
    v = model.A @ x.as_vector() + model.B @ u.as_vector()
    if w is not None:
        v = v + w.as_vector()
    return PlantState.from_vector(v)


def observe_residual(window: ResidualWindow, predicted: PlantState,
                     measured: PlantState) -> ResidualWindow:
    r = measured.as_vector() - predicted.as_vector()
    r[4] = wrap_angle(r[4])
    window.push(r)
    return window


def estimate_wind(window: ResidualWindow, var_thresholds) -> WindBias:
    """Window mean per channel when its variance clears the gate, else zero.

    High variance means the errors look like noise rather than a sustained
    disturbance, so that channel is left uncorrected. A partially filled
    window yields a zero bias. Yaw is never corrected.
    """
    if not window.full:
        return WindBias()
    thr = np.asarray(var_thresholds, dtype=float)
    samples = window.as_array()
    means = samples.mean(axis=0)
    variances = samples.var(axis=0)
    out = np.zeros(4)
    for i in range(4):
        if variances[i] < thr[i]:
            out[i] = means[i]
    return WindBias(out[0], out[1], out[2], out[3])


@dataclass
class LqrGain:
    K: np.ndarray
    P: np.ndarray


def solve_lqr(model: SystemModel, Q, R,
              tol: float = 1e-10, max_iter: int = 100_000) -> LqrGain:
    """Infinite-horizon discrete LQR via fixed-point Riccati iteration.

    Iterates the Riccati recursion from P0 = Q until the sup-norm change
    drops below `tol`, then forms K = (R + B'PB)^-1 B'PA and verifies the
    closed loop is a contraction.
    """
    A, B = model.A, model.B
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if not np.allclose(Q, Q.T, atol=1e-12) or np.any(np.linalg.eigvalsh(Q) < -1e-12):
        raise ValueError("Q must be symmetric PSD")
    if not np.allclose(R, R.T, atol=1e-12) or np.any(np.linalg.eigvalsh(R) <= 0):
        raise ValueError("R must be symmetric PD")
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ G
        Pn = (Pn + Pn.T) / 2.0
        delta = np.max(np.abs(Pn - P))
        P = Pn
        if not np.isfinite(delta) or np.max(np.abs(P)) > 1e12:
            raise NotStabilizable("Riccati iteration diverged")
        if delta < tol:
            break
    else:
        raise NotStabilizable("Riccati iteration did not converge")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    radius = np.max(np.abs(np.linalg.eigvals(A - B @ K)))
    if radius >= 1.0:
        raise NotStabilizable(f"closed-loop spectral radius {radius:.6f} >= 1")
    return LqrGain(K=K, P=P)


def lqr_control(gain: LqrGain, x: PlantState, x_ref: PlantState,
                w: WindBias, model: SystemModel) -> ControlCmd:
    """Error-state feedback u = -K(x - x_ref) with pseudoinverse wind feedforward."""
    e = x.as_vector() - x_ref.as_vector()
    e[4] = wrap_angle(e[4])
    u = -gain.K @ e - np.linalg.pinv(model.B) @ w.as_vector()
    return ControlCmd.from_vector(u)


def pure_pursuit(pose: PlantState, traj, lookahead: float,
                 cruise_speed: float) -> PlantState:
    """Reference a lookahead distance past the closest trajectory point.

    `traj` needs `points` (P, 2) and `s` (P,) arc-length attributes. Past
    the end of the trajectory the final point is referenced.
    """
    pts = np.asarray(traj.points, dtype=float)
    s = np.asarray(traj.s, dtype=float)
    if pts.shape[0] == 0:
        raise ValueError("empty trajectory")
    p = pose.position()
    closest = int(np.argmin(np.sum((pts - p) ** 2, axis=1)))
    target_s = s[closest] + lookahead
    ahead = np.nonzero(s >= target_s)[0]
    idx = int(ahead[0]) if ahead.size else pts.shape[0] - 1
    target = pts[idx]
    delta = target - p
    if np.hypot(delta[0], delta[1]) < 1e-9:
        heading = pose.theta
    else:
        heading = math.atan2(delta[1], delta[0])
    return PlantState(target[0], target[1],
                      cruise_speed * math.cos(heading),
                      cruise_speed * math.sin(heading),
                      heading)


def save_flight_log(path, times, states, controls):
    """CSV flight log, one row per control tick."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FLIGHT_LOG_HEADER)
        for t, s, u in zip(times, states, controls):
            writer.writerow([f"{t:.6f}",
                             f"{s.x:.9g}", f"{s.y:.9g}", f"{s.vx:.9g}",
                             f"{s.vy:.9g}", f"{s.theta:.9g}",
                             f"{u.roll:.9g}", f"{u.pitch:.9g}", f"{u.yaw:.9g}"])


def load_flight_log(path):
    """Read a flight-log CSV back into (times, states, controls)."""
    times, states, controls = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != FLIGHT_LOG_HEADER:
            raise ValueError(f"unexpected flight log header: {header}")
        for row in reader:
            vals = [float(v) for v in row]
            times.append(vals[0])
            states.append(PlantState(*vals[1:6]))
            controls.append(ControlCmd(*vals[6:9]))
    return times, states, controls
