"""SE(2) motion compensation by occupancy-GP likelihood maximization.

Events get the constant target one. Their occupancy GP uses a
squared-exponential kernel on motion-compensated coordinates, so the
trajectory inducing values act as kernel hyperparameters and are learnt by
maximizing the log marginal likelihood with BFGS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .events import EventBatch, Events, downsample_batch
from .gp import (
    SingularModelError,
    cho_inverse,
    cho_solve,
    cholesky,
    log_likelihood_from_factor,
    sqexp_from_sqdist,
)
from .se2 import Se2Trajectory, compensate_batch, make_trajectory

log = logging.getLogger(__name__)

PENALTY = 1e10
STALL_WINDOW = 5


@dataclass(frozen=True)
class MotionCompConfig:
    batch_size: int = 1250
    optimize_size: int = 1250
    events_per_state: int = 250
    lengthscale_factor: float = 3.0
    kernel_scale: float = 1.0
    kernel_lengthscale: float = 0.25
    noise: float = 1e-2
    max_iterations: int = 200
    gtol: float = 1e-5
    ftol: float = 1e-7  # per-event nats over STALL_WINDOW iterations
    min_improvement: float = 0.1  # nats per optimized event
    # coarse-to-fine warm-up: short fits with wider kernels before the final one
    warmup_lengthscales: tuple[float, ...] = (2.0, 1.0, 0.5)
    # integer sensor coordinates get a seeded uniform sub-pixel dither
    dither: bool = True
    dither_seed: int = 0

    def __post_init__(self):
        for name in (
            "batch_size", "optimize_size", "events_per_state", "lengthscale_factor",
            "kernel_scale", "kernel_lengthscale", "noise", "max_iterations", "gtol", "ftol",
            "min_improvement",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.optimize_size > self.batch_size:
            raise ValueError("optimize_size cannot exceed batch_size")
        if any(not l > 0 for l in self.warmup_lengthscales):
            raise ValueError("warm-up lengthscales must be positive")
        object.__setattr__(self, "warmup_lengthscales", tuple(float(l) for l in self.warmup_lengthscales))


@dataclass
class MotionCompResult:
    trajectory: Se2Trajectory
    compensated: np.ndarray
    lml_initial: float
    lml_final: float
    converged: bool
    iterations: int
    n_optimized: int
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def improvement(self) -> float:
        return self.lml_final - self.lml_initial


def kf_gram(traj: Se2Trajectory, xy, t, cfg: MotionCompConfig) -> np.ndarray:
    """Occupancy kernel matrix on compensated events (no noise term)."""
    u = compensate_batch(traj, xy, t, anchor=False)
    return sqexp_from_sqdist(cdist(u, u, "sqeuclidean"), cfg.kernel_lengthscale, cfg.kernel_scale)


class Objective:
    """Negative log marginal likelihood of unit targets and its gradient.

    The parameter layout is ``[angles (Q), x translations (Q), y translations (Q)]``.
    Interpolation weights are computed once since poses are linear in the
    inducing values.
    """

    def __init__(self, traj: Se2Trajectory, xy, t, cfg: MotionCompConfig):
        self.traj = traj
        self.cfg = cfg
        self.local = np.asarray(xy, dtype=float) - np.asarray(traj.center)
        self.A = traj.weights(t)
        self.n = self.local.shape[0]
        self.ones = np.ones(self.n)
        self.n_evals = 0

    def compensated(self, params: np.ndarray) -> np.ndarray:
        q = self.traj.n_states
        theta = self.A @ params[:q]
        px = self.A @ params[q : 2 * q]
        py = self.A @ params[2 * q :]
        cos, sin = np.cos(theta), np.sin(theta)
        ex, ey = self.local[:, 0], self.local[:, 1]
        u = np.empty_like(self.local)
        u[:, 0] = cos * ex - sin * ey + px
        u[:, 1] = sin * ex + cos * ey + py
        return u, cos, sin

    def lml(self, params: np.ndarray) -> float:
        return -self(params)[0]

    def __call__(self, params: np.ndarray) -> tuple[float, np.ndarray]:
        self.n_evals += 1
        params = np.asarray(params, dtype=float)
        cfg = self.cfg
        u, cos, sin = self.compensated(params)
        inv_l2 = 1.0 / cfg.kernel_lengthscale**2
        K = sqexp_from_sqdist(cdist(u, u, "sqeuclidean"), cfg.kernel_lengthscale, cfg.kernel_scale)
        diag = np.diag_indices_from(K)
        K[diag] += cfg.noise
        try:
            L = cholesky(K)
        except SingularModelError:
            return PENALTY, np.zeros_like(params)
        alpha = cho_solve(L, self.ones)
        value = log_likelihood_from_factor(L, self.ones, alpha)

        # d lml / d u_i = -(1/l^2) sum_j M_ij (u_i - u_j), M = (alpha alpha^T - K^-1) * K
        K[diag] -= cfg.noise
        M = cho_inverse(L)
        M -= np.outer(alpha, alpha)
        M *= K
        rows = M.sum(axis=1)
        G = inv_l2 * (u * rows[:, None] - M @ u)

        ex, ey = self.local[:, 0], self.local[:, 1]
        dtheta = G[:, 0] * (-sin * ex - cos * ey) + G[:, 1] * (cos * ex - sin * ey)
        grad = np.concatenate([self.A.T @ dtheta, self.A.T @ G[:, 0], self.A.T @ G[:, 1]])
        return -value, -grad


def objective(params, traj: Se2Trajectory, xy, t, cfg: MotionCompConfig) -> tuple[float, np.ndarray]:
    return Objective(traj, xy, t, cfg)(params)


def _bfgs(obj: Objective, x0: np.ndarray, scale: np.ndarray, cfg: MotionCompConfig, history=None):
    n = obj.n

    def fun(z):
        v, g = obj(z / scale)
        return v / n, g / scale / n

    trace = []

    def record(intermediate_result):
        trace.append(intermediate_result.fun)
        if history is not None:
            history.append(-intermediate_result.fun * n)
        # stalled: total decrease over the last few iterations is negligible
        if len(trace) > STALL_WINDOW and trace[-STALL_WINDOW - 1] - trace[-1] < cfg.ftol:
            raise StopIteration

    res = minimize(
        fun,
        x0 * scale,
        jac=True,
        method="BFGS",
        callback=record,
        options={"maxiter": cfg.max_iterations, "gtol": cfg.gtol},
    )
    return res.x / scale, res


def dithered(batch: EventBatch, cfg: MotionCompConfig) -> EventBatch:
    """Spread integer pixel coordinates uniformly over their pixel cell.

    Coincident integer events make the unmoved batch a spurious likelihood
    optimum for sub-pixel kernels.
    """
    xy = batch.xy
    if not cfg.dither or not np.all(xy == np.round(xy)):
        return batch
    rng = np.random.default_rng(cfg.dither_seed)
    jitter = rng.uniform(-0.5, 0.5, size=xy.shape)
    events = Events(batch.t, xy + jitter, batch.events.polarity)
    return EventBatch(events, batch.t_start, batch.seed, batch.depleted)


def compensate(
    batch: EventBatch,
    cfg: MotionCompConfig = MotionCompConfig(),
    init: np.ndarray | None = None,
) -> MotionCompResult:
    """Estimate the batch trajectory and warp every event to the batch start.

    ``init`` optionally warm-starts the inducing values (length ``3 Q``).
    """
    if len(batch) < 2:
        raise ValueError("motion compensation needs at least two events")
    batch = dithered(batch, cfg)
    center = batch.seed if batch.seed is not None else batch.xy.mean(axis=0)
    traj = make_trajectory(batch.t, cfg.events_per_state, cfg.lengthscale_factor, center=center)
    sub = batch if cfg.optimize_size >= len(batch) else downsample_batch(batch, cfg.optimize_size)
    obj = Objective(traj, sub.xy, sub.t, cfg)
    n = obj.n

    # rescale angles so every coordinate moves events by about a pixel
    radius = max(float(np.sqrt(np.mean(np.sum(obj.local**2, axis=1)))), 1.0)
    q = traj.n_states
    scale = np.ones(3 * q)
    scale[:q] = radius

    zero = np.zeros(3 * q)
    f0, _ = obj(zero)
    x, fx = zero, f0
    if init is not None:
        xi = np.asarray(init, dtype=float).reshape(3 * q)
        fi, _ = obj(xi)
        if fi < f0:
            x, fx = xi, fi
    start = x
    iterations = 0
    for lf in cfg.warmup_lengthscales:
        stage_cfg = replace(cfg, kernel_lengthscale=lf)
        x, stage = _bfgs(Objective(traj, sub.xy, sub.t, stage_cfg), x, scale, stage_cfg)
        iterations += stage.nit

    # lml_initial always refers to the identity motion
    history = [-f0]
    fw, _ = obj(x)
    if fw > fx:
        x = start
    else:
        history.append(-fw)
    x, res = _bfgs(obj, x, scale, cfg, history)
    f1, _ = obj(x)
    if f1 > f0:
        x, f1 = zero, f0
    traj = traj.with_params(x)
    lml0, lml1 = -f0, -f1
    converged = (lml1 - lml0) >= cfg.min_improvement * n
    log.debug("compensate: n=%d iters=%d lml %.3f -> %.3f (%s)", n, res.nit, lml0, lml1, res.message)
    return MotionCompResult(
        trajectory=traj,
        compensated=compensate_batch(traj, batch.xy, batch.t),
        lml_initial=lml0,
        lml_final=lml1,
        converged=bool(converged),
        iterations=int(iterations + res.nit),
        n_optimized=n,
        history=history,
    )
