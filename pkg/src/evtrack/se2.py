"""Continuous-time SE(2) image-plane trajectories.

Rotation angle and the two translation components are three independent
zero-mean GPs over time. Their inducing values are the free parameters; a
pose at any time is the GP posterior mean.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gp import SqExpKernel, cho_solve, cholesky

TRAJ_NOISE = 1e-6


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Se2Transform:
    theta: float = 0.0
    p: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError("rotation angle must be finite")
        object.__setattr__(self, "p", (float(self.p[0]), float(self.p[1])))

    def matrix(self) -> np.ndarray:
        T = np.eye(3)
        T[:2, :2] = rotation(self.theta)
        T[:2, 2] = self.p
        return T

    def inverse(self) -> "Se2Transform":
        p = -rotation(-self.theta) @ np.asarray(self.p)
        return Se2Transform(-self.theta, (p[0], p[1]))

    def compose(self, other: "Se2Transform") -> "Se2Transform":
        """``self * other``: apply ``other`` first."""
        p = rotation(self.theta) @ np.asarray(other.p) + np.asarray(self.p)
        return Se2Transform(self.theta + other.theta, (p[0], p[1]))

    def apply(self, e) -> np.ndarray:
        return apply_se2(self, e)


def apply_se2(T: Se2Transform, e) -> np.ndarray:
    """``R(theta) e + p`` for a single point or an ``(N, 2)`` array."""
    e = np.asarray(e, dtype=float)
    R = rotation(T.theta)
    return e @ R.T + np.asarray(T.p)


@dataclass(frozen=True)
class Se2Trajectory:
    """GP-interpolated SE(2) trajectory.

    ``rot`` has shape ``(Q,)`` and ``trans`` shape ``(Q, 2)``. Rotation acts
    about ``center`` (image coordinates); the pose itself is expressed in
    coordinates relative to that pivot.
    """

    times: np.ndarray
    rot: np.ndarray
    trans: np.ndarray
    kernel: SqExpKernel
    t_ref: float
    noise: float = TRAJ_NOISE
    center: tuple[float, float] = (0.0, 0.0)
    _chol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size < 1:
            raise ValueError("trajectory needs at least one inducing time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("inducing times must be strictly increasing")
        rot = np.asarray(self.rot, dtype=float).reshape(times.size)
        trans = np.asarray(self.trans, dtype=float).reshape(times.size, 2)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)
        if self._chol is None:
            K = self.kernel.matrix(times) + self.noise * np.eye(times.size)
            object.__setattr__(self, "_chol", cholesky(K))

    @property
    def n_states(self) -> int:
        return self.times.size

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector: angles, then x translations, then y translations."""
        return np.concatenate([self.rot, self.trans[:, 0], self.trans[:, 1]])

    def with_params(self, theta: np.ndarray) -> "Se2Trajectory":
        q = self.n_states
        theta = np.asarray(theta, dtype=float)
        if theta.size != 3 * q:
            raise ValueError(f"expected {3 * q} parameters, got {theta.size}")
        return replace(
            self,
            rot=theta[:q].copy(),
            trans=np.stack([theta[q : 2 * q], theta[2 * q :]], axis=1),
            _chol=self._chol,
        )

    def weights(self, t) -> np.ndarray:
        """Interpolation weights ``k(t, s) (K_s + noise I)^-1``, shape ``(len(t), Q)``.

        Poses are linear in the inducing values through these weights.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        Ks = self.kernel.matrix(t, self.times)
        return cho_solve(self._chol, Ks.T).T

    def poses(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Angles ``(N,)`` and translations ``(N, 2)`` at times ``t``."""
        A = self.weights(t)
        return A @ self.rot, A @ self.trans


def pose_at(traj: Se2Trajectory, t: float) -> Se2Transform:
    theta, p = traj.poses([t])
    return Se2Transform(float(theta[0]), (p[0, 0], p[0, 1]))


def make_trajectory(
    times,
    events_per_state: int = 250,
    lengthscale_factor: float = 3.0,
    center=(0.0, 0.0),
    t_ref: float | None = None,
) -> Se2Trajectory:
    """Zero-initialized trajectory for a batch with event timestamps ``times``.

    One inducing time every ``events_per_state`` events starting at the
    first, plus the final event's time. The kernel lengthscale is
    ``lengthscale_factor`` times the mean inducing spacing.
    """
    if events_per_state < 1:
        raise ValueError("events_per_state must be >= 1")
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("cannot build a trajectory for an empty batch")
    t0 = float(times[0])
    if times.size < events_per_state:
        s = np.array([t0])
    else:
        idx = list(range(0, times.size, events_per_state))
        if idx[-1] != times.size - 1:
            idx.append(times.size - 1)
        s = np.unique(times[idx])
    if s.size > 1:
        spacing = float(np.mean(np.diff(s)))
    else:
        spacing = float(times[-1] - t0)
    if spacing <= 0:
        spacing = 1.0
    q = s.size
    return Se2Trajectory(
        times=s,
        rot=np.zeros(q),
        trans=np.zeros((q, 2)),
        kernel=SqExpKernel(1.0, lengthscale_factor * spacing),
        t_ref=t0 if t_ref is None else float(t_ref),
        center=(float(center[0]), float(center[1])),
    )


def compensate_batch(traj: Se2Trajectory, xy, t, anchor: bool = True) -> np.ndarray:
    """Warp events ``xy`` observed at times ``t`` with the trajectory.

    With ``anchor`` the result is re-expressed in the frame of the pose at
    ``traj.t_ref``, so the reference pose is exactly the identity. This
    changes no pairwise distances.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    c = np.asarray(traj.center)
    theta, p = traj.poses(t)
    local = xy - c
    cos, sin = np.cos(theta), np.sin(theta)
    out = np.empty_like(local)
    out[:, 0] = cos * local[:, 0] - sin * local[:, 1] + p[:, 0]
    out[:, 1] = sin * local[:, 0] + cos * local[:, 1] + p[:, 1]
    if anchor:
        ref = pose_at(traj, traj.t_ref)
        out = apply_se2(ref.inverse(), out)
    return out + c


def compensation_transform(traj: Se2Trajectory, t: float, anchor: bool = True) -> Se2Transform:
    """Image-coordinate transform taking a point observed at ``t`` to the reference frame.

    Matches :func:`compensate_batch` for a single event. Its inverse predicts
    where a reference-frame point is seen at time ``t``.
    """
    c = traj.center
    T = pose_at(traj, t)
    if anchor:
        T = pose_at(traj, traj.t_ref).inverse().compose(T)
    return Se2Transform(0.0, c).compose(T).compose(Se2Transform(0.0, (-c[0], -c[1])))


def dump_trajectory(traj: Se2Trajectory) -> str:
    """Text dump, one ``s theta px py`` line per inducing time."""
    buf = io.StringIO()
    for s, r, (px, py) in zip(traj.times, traj.rot, traj.trans):
        buf.write(f"{s:.9f} {r:.12g} {px:.12g} {py:.12g}\n")
    return buf.getvalue()
