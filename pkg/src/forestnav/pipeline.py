"""Per-frame perception pipeline: keyframe bookkeeping over the tracking
and mapping modules.

The map lives on the current keyframe and is refined with every new frame
whose baseline clears the stereo gate; when the camera has moved far
enough, the map is propagated forward and the frame becomes the new
keyframe. Metric scale is maintained from quotients of VO displacement
against the simulator-supplied (noisy) metric pose, standing in for the
onboard metric sensor. On tracking loss the depth map is thrown away and
re-bootstrapped from the next usable stereo pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import depth_mapping as dm
from . import tracking as tr
from .config import RunConfig
from .geometry import CameraIntrinsics, Pose


@dataclass
class PerceptionOutput:
    clouds: list | None          # world-frame (N, 3) arrays, one per hypothesis
    align: tr.AlignResult | None
    loss: bool
    vo_step: np.ndarray | None   # inter-frame VO translation, keyframe frame
    map_depth_metric: np.ndarray | None  # metric depth image at the keyframe
    kf_true_pose: Pose | None    # true camera pose of the keyframe (oracle use)
    metric_scale: float = 1.0


@dataclass
class _Frame:
    image: np.ndarray
    noisy_pose: Pose
    true_pose: Pose


class PerceptionPipeline:
    def __init__(self, cfg: RunConfig, K: CameraIntrinsics):
        self.cfg = cfg
        self.K = K
        self.bias = np.array([cfg.gyro_bias_x, cfg.gyro_bias_y, cfg.gyro_bias_z])
        self.scale = tr.ScaleEstimator(window=cfg.scale_window, alpha=cfg.scale_alpha)
        self.log = tr.MeasurementLog()
        self.loss_count = 0
        self._pending: _Frame | None = None
        self._kf: tr.KeyframePacket | None = None
        self._kf_noisy_pose: Pose | None = None
        self._kf_true_pose: Pose | None = None
        self._T_kf_cur = Pose.identity()
        self._last_step = Pose.identity()
        self._prev_frame: _Frame | None = None

    @property
    def has_map(self) -> bool:
        return self._kf is not None

    def _reset(self, frame: _Frame):
        self._pending = frame
        self._kf = None
        self._kf_noisy_pose = None
        self._kf_true_pose = None
        self._T_kf_cur = Pose.identity()
        self._last_step = Pose.identity()

    def _bootstrap(self, frame: _Frame) -> bool:
        """Seed the map by stereo between the pending frame and this one."""
        ref = self._pending
        rel = ref.noisy_pose.inverse().compose(frame.noisy_pose)
        if np.linalg.norm(rel.t) < self.cfg.min_baseline:
            return False
        mask = dm.semidense_mask(ref.image, self.cfg.grad_threshold)
        try:
            obs = dm.init_stereo(
                ref.image, mask, frame.image, rel, self.K,
                n_steps=self.cfg.stereo_steps, sigma_photo=self.cfg.sigma_photo,
                max_candidates=self.cfg.stereo_max_candidates,
                ssd_accept=self.cfg.ssd_accept,
                ambiguity_ratio=self.cfg.ambiguity_ratio)
        except dm.DegenerateBaseline:
            return False
        if len(obs) < 100:
            return False
        m = dm.fuse_many(dm.InverseDepthMap.empty(self.K.width, self.K.height), obs)
        m = dm.regularize(m)
        self._kf = tr.KeyframePacket(image=ref.image, map=m, pose=ref.noisy_pose)
        self._kf_noisy_pose = ref.noisy_pose
        self._kf_true_pose = ref.true_pose
        self._T_kf_cur = rel
        self._last_step = rel
        self._pending = None
        self.log.add_keyframe(self._kf, None if not self.log.keyframes else [])
        return True

    def _map_snapshot(self) -> np.ndarray:
        depth = dm.map_to_depth(self._kf.map, max_var=self.cfg.export_max_var)
        return depth * self.scale.metric_scale

    def _hypothesis_clouds(self) -> list:
        gated = self._kf.map.copy()
        gated.valid &= gated.var <= self.cfg.export_max_var
        hyp = dm.predict_multi(gated)
        images = [hyp.mean, hyp.lower, hyp.upper]
        if self.cfg.prediction_mode == "single":
            images = [hyp.mean]
        cam = self._kf_noisy_pose
        s = self.scale.metric_scale
        return [dm.to_pointcloud(img, s, self.K, cam) for img in images]

    def process_frame(self, image, noisy_pose: Pose, true_pose: Pose,
                      imu_samples) -> PerceptionOutput:
        frame = _Frame(image=image, noisy_pose=noisy_pose, true_pose=true_pose)
        none = PerceptionOutput(clouds=None, align=None, loss=False, vo_step=None,
                                map_depth_metric=None, kf_true_pose=None)
        if self._kf is None:
            if self._pending is None:
                self._pending = frame
                self._prev_frame = frame
                return none
            if not self._bootstrap(frame):
                self._prev_frame = frame
                return none
            self._prev_frame = frame
            return self._emit(align=None, loss=False)

        # inertial rotation prior + constant-velocity translation prior
        if imu_samples:
            pre = tr.preintegrate(imu_samples, self.bias)
        else:
            pre = tr.PreintegratedRotation(delta_R=np.eye(3), total_dt=0.0)
        step_prior = tr.compose_prior(pre, self._last_step.t)
        prior = self._T_kf_cur.compose(step_prior)

        try:
            result = tr.align(
                self._kf, image, prior, self.K,
                levels=self.cfg.pyramid_levels,
                max_iterations=self.cfg.max_iterations,
                huber_delta=self.cfg.huber_delta,
                conv_tol=self.cfg.conv_tol,
                min_inlier_fraction=self.cfg.min_inlier_fraction,
                pixel_cap=self.cfg.pixel_cap)
        except tr.InsufficientMap:
            result = None
        if result is None or not result.converged:
            self.loss_count += 1
            self._reset(frame)
            self._prev_frame = frame
            return PerceptionOutput(clouds=None, align=result, loss=True,
                                    vo_step=None, map_depth_metric=None,
                                    kf_true_pose=None)

        T_prev = self._T_kf_cur
        self._T_kf_cur = result.pose
        self._last_step = T_prev.inverse().compose(result.pose)

        # metric scale from the simulator-supplied pose (metric reference)
        metric_step = self._prev_frame.noisy_pose.inverse().compose(noisy_pose).t
        try:
            tr.update_scale(self.scale, self._last_step.t, metric_step)
        except tr.NegligibleMotion:
            pass

        # stereo refinement against the keyframe
        baseline = float(np.linalg.norm(self._T_kf_cur.t))
        if baseline >= self.cfg.min_baseline:
            mask = dm.semidense_mask(self._kf.image, self.cfg.grad_threshold)
            try:
                obs = dm.init_stereo(
                    self._kf.image, mask, image, self._T_kf_cur, self.K,
                    n_steps=self.cfg.stereo_steps, sigma_photo=self.cfg.sigma_photo,
                    max_candidates=self.cfg.stereo_max_candidates,
                    ssd_accept=self.cfg.ssd_accept,
                    ambiguity_ratio=self.cfg.ambiguity_ratio)
            except dm.DegenerateBaseline:
                obs = []
            if obs:
                self._kf.map = dm.regularize(dm.fuse_many(self._kf.map, obs))

        # keyframe switch: carry the map forward
        if baseline >= self.cfg.keyframe_distance:
            new_map = dm.propagate(self._kf.map, self._T_kf_cur, self.K)
            new_map = dm.regularize(new_map)
            self._kf = tr.KeyframePacket(image=image, map=new_map,
                                         pose=self._kf.pose.compose(self._T_kf_cur))
            self._kf_noisy_pose = noisy_pose
            self._kf_true_pose = true_pose
            self.log.add_keyframe(self._kf, list(imu_samples or []))
            self._T_kf_cur = Pose.identity()

        self._prev_frame = frame
        return self._emit(align=result, loss=False)

    def _emit(self, align, loss) -> PerceptionOutput:
        return PerceptionOutput(
            clouds=self._hypothesis_clouds(),
            align=align,
            loss=loss,
            vo_step=self._last_step.t.copy(),
            map_depth_metric=self._map_snapshot(),
            kf_true_pose=self._kf_true_pose,
            metric_scale=self.scale.metric_scale,
        )
