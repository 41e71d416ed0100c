"""Pattern tracking over sequential motion-compensated event batches.

Each batch is SE(2)-compensated to its start time, registered to the
previous batch (and, in ``full`` mode, to a dynamic template) with a
homography, and the chained homography moves the seed.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .events import EventBatch, Events, SensorGeometry, collect_batch
from .fields import (
    DistanceField,
    PointAtInfinityError,
    RegistrationResult,
    RegistrationTerm,
    build_distance_field,
    project,
    register_terms,
)
from .gp import SqExpKernel
from .motion import MotionCompConfig, MotionCompResult, compensate
from .se2 import Se2Trajectory, compensation_transform
from .template import DynamicTemplate, TemplateEmpty, build_template

log = logging.getLogger(__name__)

MODES = ("se2", "b2b", "full")


class EndReason(str, enum.Enum):
    STREAM_DEPLETED = "stream_depleted"
    BORDER = "border"
    DIVERGENCE = "divergence"
    LML_FAILURE = "lml_failure"
    REGISTRATION_FAILURE = "registration_failure"
    MAX_BATCHES = "max_batches"


@dataclass(frozen=True)
class TrackerConfig:
    patch_radius: float = 15.0
    divergence_threshold: float = 3.0
    border_margin: float | None = None  # defaults to patch_radius + 2
    template_threshold: int = 2
    mode: str = "full"
    field_lengthscale: float = 0.25
    field_noise: float = 1e-2
    template_lengthscale: float = 0.5
    loss_scale: float = 1.0
    warm_start: bool = True
    max_batches: int = 100000
    motion: MotionCompConfig = field(default_factory=MotionCompConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in (
            "patch_radius", "divergence_threshold", "template_threshold", "field_lengthscale",
            "field_noise", "template_lengthscale", "loss_scale", "max_batches",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.border_margin is not None and not self.border_margin > 0:
            raise ValueError("border_margin must be positive")

    @property
    def margin(self) -> float:
        return self.patch_radius + 2.0 if self.border_margin is None else self.border_margin


@dataclass
class BatchRecord:
    tau: float
    t_end: float
    collect_seed: np.ndarray
    motion: MotionCompResult
    H_step: np.ndarray  # previous batch frame <- this batch frame
    H_chain: np.ndarray  # this batch frame <- first batch frame
    registration: RegistrationResult | None = None

    @property
    def trajectory(self) -> Se2Trajectory:
        return self.motion.trajectory


@dataclass
class Track:
    id: int
    s0: np.ndarray
    status: str = "active"
    reason: EndReason | None = None
    history: list[tuple[float, float, float]] = field(default_factory=list)
    H_chain: np.ndarray = field(default_factory=lambda: np.eye(3))
    records: list[BatchRecord] = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.status == "active"

    def end(self, reason: EndReason) -> None:
        if self.active:
            self.status = "ended"
            self.reason = reason

    @property
    def lifetime(self) -> float:
        return self.history[-1][0] - self.history[0][0] if self.history else 0.0

    def position_at(self, t: float) -> np.ndarray:
        """Continuous seed position between batch boundaries."""
        if not self.records:
            return self.s0.copy()
        taus = [r.tau for r in self.records]
        n = int(np.searchsorted(taus, t, side="right"))
        if n <= 0:
            return self.s0.copy()
        if n >= len(self.records):
            return seed_position(self.s0, self.records[-1].H_chain)
        prev, cur = self.records[n - 1], self.records[n]
        return update_seed(self.s0, prev.H_chain, cur.H_chain, prev.trajectory, prev.tau, cur.tau, t)


def seed_position(s0, H_chain) -> np.ndarray:
    return project(H_chain, np.asarray(s0, dtype=float))


def se2_prediction(traj: Se2Trajectory, point, t: float) -> np.ndarray:
    """Where a point located at the trajectory's reference frame is seen at ``t``."""
    return compensation_transform(traj, t).inverse().apply(np.asarray(point, dtype=float))


def update_seed(s0, H_prev, H_new, traj_prev: Se2Trajectory, tau_prev: float, tau_new: float, t: float) -> np.ndarray:
    """Seed at ``t`` in ``[tau_prev, tau_new]`` from the local SE(2) motion and the homography chain.

    The SE(2) prediction from the previous boundary is corrected by a
    linear term that makes the result equal the homography position at
    ``tau_new``.
    """
    base = seed_position(s0, H_prev)
    target = seed_position(s0, H_new)
    end = se2_prediction(traj_prev, base, tau_new)
    span = tau_new - tau_prev
    alpha = (target - end) / span if span > 0 else np.zeros(2)
    if span <= 0:
        return target
    return se2_prediction(traj_prev, base, t) + (t - tau_prev) * alpha


def check_termination(
    motion: MotionCompResult,
    seed_h,
    seed_se2,
    geometry: SensorGeometry,
    cfg: TrackerConfig,
) -> EndReason | None:
    if not motion.converged:
        return EndReason.LML_FAILURE
    if seed_se2 is not None and np.linalg.norm(np.asarray(seed_h) - np.asarray(seed_se2)) > cfg.divergence_threshold:
        return EndReason.DIVERGENCE
    if near_border(seed_h, geometry, cfg.margin):
        return EndReason.BORDER
    return None


def near_border(p, geometry: SensorGeometry, margin: float) -> bool:
    x, y = float(p[0]), float(p[1])
    return x < margin or y < margin or x > geometry.width - 1 - margin or y > geometry.height - 1 - margin


def _velocity_init(prev: Se2Trajectory, batch: EventBatch, cfg: MotionCompConfig) -> np.ndarray:
    """Constant-velocity extrapolation of the previous compensation to the new inducing times."""
    from .se2 import make_trajectory

    new = make_trajectory(batch.t, cfg.events_per_state, cfg.lengthscale_factor, center=batch.seed)
    if prev.n_states < 2:
        return np.zeros(3 * new.n_states)
    t1, t0 = prev.times[-1], prev.times[-2]
    a = compensation_transform(prev, t0)
    b = compensation_transform(prev, t1)
    dt = t1 - t0
    omega = (b.theta - a.theta) / dt
    c = np.asarray(batch.seed, dtype=float)
    v = (b.apply(c) - a.apply(c)) / dt
    dts = new.times - batch.t_start
    return np.concatenate([omega * dts, v[0] * dts, v[1] * dts])


def track_pattern(
    stream: Events,
    s0,
    t0: float,
    cfg: TrackerConfig = TrackerConfig(),
    geometry: SensorGeometry = SensorGeometry(),
    track_id: int = 0,
) -> Track:
    s0 = np.asarray(s0, dtype=float).reshape(2)
    track = Track(track_id, s0)
    mcfg = cfg.motion
    kern = SqExpKernel(1.0, cfg.field_lengthscale)
    t_from = float(t0)
    seed = s0.copy()
    prev: BatchRecord | None = None
    prev_points = prev_field = None
    template: DynamicTemplate | None = None
    template_field: DistanceField | None = None

    if near_border(s0, geometry, cfg.margin):
        track.end(EndReason.BORDER)
        return track

    for n in range(cfg.max_batches):
        batch = collect_batch(stream, seed, t_from, mcfg.batch_size, cfg.patch_radius)
        if batch.depleted or len(batch) < 2:
            track.end(EndReason.STREAM_DEPLETED)
            break
        init = _velocity_init(prev.trajectory, batch, mcfg) if (prev is not None and cfg.warm_start) else None
        motion = compensate(batch, mcfg, init)
        pts = motion.compensated
        tau = batch.t_start
        if n == 0:
            track.history.append((tau, s0[0], s0[1]))
        if not motion.converged:
            track.end(EndReason.LML_FAILURE)
            break

        field_n = build_distance_field(pts, kern, cfg.field_noise)
        reg = None
        seed_se2 = None
        if prev is None:
            H_step = np.eye(3)
            H_chain = np.eye(3)
        else:
            H_pred = compensation_transform(prev.trajectory, tau).matrix()
            if cfg.mode == "se2":
                H_step = H_pred
            else:
                terms = [
                    RegistrationTerm(pts, prev_field),
                    RegistrationTerm(prev_points, field_n, inverse=True),
                ]
                if cfg.mode == "full" and template_field is not None:
                    to_template = np.linalg.inv(prev.H_chain)
                    terms.append(RegistrationTerm(pts, template_field, left=to_template))
                    terms.append(RegistrationTerm(template.points, field_n, inverse=True, right=prev.H_chain))
                reg = register_terms(terms, H_pred, cfg.loss_scale)
                H_step = reg.H
            H_chain = np.linalg.inv(H_step) @ prev.H_chain
            H_chain /= H_chain[2, 2]
            seed_se2 = se2_prediction(prev.trajectory, seed_position(s0, prev.H_chain), tau)

        try:
            s_n = seed_position(s0, H_chain)
        except PointAtInfinityError:
            track.end(EndReason.REGISTRATION_FAILURE)
            break
        if not np.all(np.isfinite(s_n)):
            track.end(EndReason.REGISTRATION_FAILURE)
            break

        record = BatchRecord(tau, float(batch.t[-1]), batch.seed, motion, H_step, H_chain, reg)
        reason = check_termination(motion, s_n, seed_se2 if cfg.mode != "se2" else None, geometry, cfg)
        if reason is not None:
            track.end(reason)
            break

        track.records.append(record)
        track.H_chain = H_chain
        if n > 0:
            track.history.append((tau, float(s_n[0]), float(s_n[1])))

        if cfg.mode == "full":
            in_template = project(np.linalg.inv(H_chain), pts)
            if template is None:
                try:
                    template = build_template([in_template], s0, cfg.patch_radius, cfg.template_threshold, tau)
                except TemplateEmpty:
                    log.info("track %d: empty template, continuing batch-to-batch", track_id)
            else:
                template.accumulate(in_template)
            if template is not None and not template.empty:
                template_field = build_distance_field(
                    template.points, SqExpKernel(1.0, cfg.template_lengthscale), cfg.field_noise
                )

        prev, prev_points, prev_field = record, pts, field_n
        # next batch is collected around the SE(2) prediction at this batch's end
        seed = se2_prediction(motion.trajectory, s_n, record.t_end)
        t_from = float(np.nextafter(record.t_end, np.inf))
    else:
        track.end(EndReason.MAX_BATCHES)
    return track


def format_track(track: Track) -> str:
    buf = io.StringIO()
    for t, x, y in track.history:
        buf.write(f"{track.id} {t:.9f} {x:.6f} {y:.6f}\n")
    buf.write(f"# ended {track.reason.value if track.reason else 'active'}\n")
    return buf.getvalue()
