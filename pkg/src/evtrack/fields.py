"""GP occupancy and distance fields, homographies and robust registration.

An occupancy field is the posterior mean of a GP with unit targets at the
support points; its negative logarithm behaves like a smooth distance to
the closest support point (exactly ``r^2 / (2 l^2)`` for a single point).
Homographies are registered by Levenberg-Marquardt on distance-field
residuals with a Cauchy loss, in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .gp import SqExpKernel, cho_solve, cholesky

EPS_FLOOR = 1e-12
MAX_SUPPORT = 1000


class PointAtInfinityError(ValueError):
    """Projection hits the line at infinity (homogeneous ``w`` is ~0)."""


@dataclass(frozen=True)
class OccupancyField:
    points: np.ndarray
    kernel: SqExpKernel
    noise: float
    weights: np.ndarray = field(repr=False)

    def mean(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        return self.kernel.matrix(Q, self.points) @ self.weights

    def mean_and_gradient(self, Q) -> tuple[np.ndarray, np.ndarray]:
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        Kw = self.kernel.matrix(Q, self.points) * self.weights
        g = Kw.sum(axis=1)
        # d k(q, p) / dq = -k(q, p) (q - p) / l^2
        grad = -(Q * g[:, None] - Kw @ self.points) / self.kernel.lengthscale**2
        return g, grad


@dataclass(frozen=True)
class DistanceField:
    occupancy: OccupancyField
    floor: float = EPS_FLOOR

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    @property
    def points(self) -> np.ndarray:
        return self.occupancy.points

    def __call__(self, Q) -> np.ndarray:
        g = np.clip(self.occupancy.mean(Q), self.floor, 1.0)
        return -np.log(g)

    def value_and_gradient(self, Q) -> tuple[np.ndarray, np.ndarray]:
        g, dg = self.occupancy.mean_and_gradient(Q)
        active = (g > self.floor) & (g < 1.0)
        d = -np.log(np.clip(g, self.floor, 1.0))
        grad = np.zeros_like(dg)
        grad[active] = -dg[active] / g[active, None]
        return d, grad


def thin_support(points, cell: float, max_points: int = MAX_SUPPORT) -> np.ndarray:
    """Replace points sharing a ``cell``-sized bin by their centroid once above ``max_points``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] <= max_points:
        return points
    keys = np.floor(points / cell).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.bincount(inv)
    out = np.zeros((counts.size, 2))
    np.add.at(out, inv, points)
    return out / counts[:, None]


def build_occupancy(points, kernel: SqExpKernel = SqExpKernel(1.0, 0.25), noise: float = 1e-2) -> OccupancyField:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        raise ValueError("occupancy field needs at least one support point")
    K = kernel.matrix(points) + noise * np.eye(points.shape[0])
    w = cho_solve(cholesky(K), np.ones(points.shape[0]))
    return OccupancyField(points, kernel, float(noise), w)


def build_distance_field(
    points,
    kernel: SqExpKernel = SqExpKernel(1.0, 0.25),
    noise: float = 1e-2,
    floor: float = EPS_FLOOR,
    thin: bool = True,
) -> DistanceField:
    pts = thin_support(points, kernel.lengthscale / 2) if thin else points
    return DistanceField(build_occupancy(pts, kernel, noise), floor)


def distance_query(f: DistanceField, q) -> float:
    return float(f(np.asarray(q, dtype=float).reshape(1, 2))[0])


def distance_gradient(f: DistanceField, q) -> np.ndarray:
    """Analytic gradient of the distance field; zero where the field is saturated."""
    return f.value_and_gradient(np.asarray(q, dtype=float).reshape(1, 2))[1][0]


def normalize_h(H) -> np.ndarray:
    H = np.asarray(H, dtype=float).reshape(3, 3)
    if abs(H[2, 2]) < 1e-15:
        raise ValueError("homography has a zero bottom-right entry")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise ValueError("homography is not invertible")
    return H


def translation_h(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def project(H, e) -> np.ndarray:
    """Apply a homography to a point or an ``(N, 2)`` array with the projective division."""
    e = np.asarray(e, dtype=float)
    single = e.ndim == 1
    pts = e.reshape(-1, 2)
    q = pts @ np.asarray(H, dtype=float)[:, :2].T + np.asarray(H, dtype=float)[:, 2]
    if np.any(np.abs(q[:, 2]) < 1e-12):
        raise PointAtInfinityError("point maps to infinity")
    out = q[:, :2] / q[:, 2:3]
    return out[0] if single else out


def cauchy(s: np.ndarray, c: float = 1.0) -> np.ndarray:
    return c * c * np.log1p(s / (c * c))


@dataclass
class RegistrationTerm:
    """Residuals ``d(pi_G(p))`` with ``G = left @ X @ right`` and ``X = H`` or ``H^-1``."""

    points: np.ndarray
    field: DistanceField
    inverse: bool = False
    left: np.ndarray = field(default_factory=lambda: np.eye(3))
    right: np.ndarray = field(default_factory=lambda: np.eye(3))
    weight: float = 1.0


@dataclass
class RegistrationResult:
    H: np.ndarray
    cost: float
    initial_cost: float
    converged: bool
    iterations: int
    costs: list[float] = field(default_factory=list, repr=False)


# (row, col) of the 8 free entries
_FREE = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)]


def _h_from(params) -> np.ndarray:
    H = np.ones(9)
    H[:8] = params
    return H.reshape(3, 3)


def _term_eval(term: RegistrationTerm, X: np.ndarray, Xinv: np.ndarray, jac: bool):
    n = term.points.shape[0]
    ph = np.column_stack([term.points, np.ones(n)])
    v = term.right @ ph.T  # 3 x n
    if term.inverse:
        P = term.left @ Xinv
        V = Xinv @ v
        sign = -1.0
    else:
        P = term.left
        V = v
        sign = 1.0
    q = (term.left @ (Xinv if term.inverse else X)) @ v
    w = q[2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1e-12, w)
    proj = (q[:2] / w).T
    d, grad = term.field.value_and_gradient(proj)
    if np.any(bad):
        d = np.where(bad, -math.log(term.field.floor), d)
        grad[bad] = 0.0
    if not jac:
        return d, None
    gq = np.stack([grad[:, 0] / w, grad[:, 1] / w, -(grad[:, 0] * q[0] + grad[:, 1] * q[1]) / w**2], axis=1)
    gP = gq @ P  # n x 3, dotted with columns of P
    J = np.empty((n, 8))
    for m, (k, l) in enumerate(_FREE):
        J[:, m] = sign * gP[:, k] * V[l]
    return d, J


def registration_cost(terms: Sequence[RegistrationTerm], H, loss_scale: float = 1.0) -> float:
    H = np.asarray(H, dtype=float)
    Hinv = np.linalg.inv(H)
    total = 0.0
    for term in terms:
        d, _ = _term_eval(term, H, Hinv, jac=False)
        total += term.weight * float(np.sum(cauchy(d * d, loss_scale)))
    return total


def _conditioner(terms: Sequence[RegistrationTerm]) -> np.ndarray:
    pts = np.vstack([t.points for t in terms])
    c = pts.mean(axis=0)
    s = max(float(np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))), 1e-6)
    return np.array([[1 / s, 0, -c[0] / s], [0, 1 / s, -c[1] / s], [0, 0, 1]])


def register_terms(
    terms: Sequence[RegistrationTerm],
    H_init,
    loss_scale: float = 1.0,
    max_iterations: int = 100,
    lambda_init: float = 1e-3,
    tol: float = 1e-10,
) -> RegistrationResult:
    """Levenberg-Marquardt over the 8 free homography entries.

    Residuals are distance-field values; the Cauchy loss enters through
    iteratively reweighted normal equations. Only steps that lower the
    robust cost are accepted.
    """
    H0 = normalize_h(H_init)
    # work with X = N H N^-1 in normalized coordinates (Hartley-style)
    N = _conditioner(terms)
    Ninv = np.linalg.inv(N)
    local = [
        RegistrationTerm(t.points, t.field, t.inverse, t.left @ Ninv, N @ t.right, t.weight)
        for t in terms
    ]

    def evaluate(X, jac):
        Xinv = np.linalg.inv(X)
        rs, Js, ws = [], [], []
        for t in local:
            d, J = _term_eval(t, X, Xinv, jac)
            rs.append(d)
            Js.append(J)
            ws.append(np.full(d.size, t.weight))
        r = np.concatenate(rs)
        tw = np.concatenate(ws)
        cost = float(np.sum(tw * cauchy(r * r, loss_scale)))
        return r, (np.vstack(Js) if jac else None), tw, cost

    X = normalize_h(N @ H0 @ Ninv)
    params = X.reshape(-1)[:8].copy()
    r, J, tw, cost = evaluate(X, True)
    initial = cost
    costs = [cost]
    lam = lambda_init
    it = 0
    improved = False
    for it in range(1, max_iterations + 1):
        w = tw / (1.0 + (r * r) / loss_scale**2)
        A = J.T @ (J * w[:, None])
        b = J.T @ (w * r)
        if not np.all(np.isfinite(A)):
            break
        accepted = False
        while lam < 1e12:
            D = np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                step = np.linalg.solve(A + lam * D, -b)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = params + step
            Xc = _h_from(cand)
            if abs(np.linalg.det(Xc)) <= 1e-12:
                lam *= 10
                continue
            rc, Jc, twc, cc = evaluate(Xc, True)
            if cc < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            break
        rel = (cost - cc) / max(cost, 1e-300)
        params, r, J, tw = cand, rc, Jc, twc
        cost = cc
        costs.append(cost)
        improved = True
        lam = max(lam / 10, 1e-12)
        if rel < tol or np.max(np.abs(step)) < 1e-12:
            break
    X = _h_from(params)
    H = normalize_h(Ninv @ X @ N)
    converged = improved or cost <= 1e-12
    return RegistrationResult(H if improved else H0, cost, initial, bool(converged), it, costs)


def register_homography(
    moving,
    fixed_field: DistanceField,
    moving_field: DistanceField,
    fixed_points,
    H_init=np.eye(3),
    loss_scale: float = 1.0,
    max_iterations: int = 100,
    pyramid: Sequence[float] = (2.0, 1.0, 0.5),
) -> tuple[np.ndarray, float, bool]:
    """Bidirectional registration of ``moving`` onto ``fixed``.

    ``H`` maps moving coordinates to fixed coordinates. The cost sums the
    Cauchy-robustified squared fixed-field distances of the projected
    moving points and the moving-field distances of the fixed points
    projected with ``H^-1``.

    ``pyramid`` lists coarser kernel lengthscales. Fields rebuilt from the
    same points at each of them are registered first, in order, to widen
    the capture range before the final pass on the given fields.
    """
    moving = np.asarray(moving, dtype=float).reshape(-1, 2)
    fixed_points = np.asarray(fixed_points, dtype=float).reshape(-1, 2)
    H = normalize_h(H_init)
    occ = fixed_field.occupancy
    for ell in pyramid:
        k = SqExpKernel(occ.kernel.scale, ell)
        coarse = [
            RegistrationTerm(moving, build_distance_field(fixed_points, k, occ.noise, fixed_field.floor)),
            RegistrationTerm(fixed_points, build_distance_field(moving, k, occ.noise, fixed_field.floor), inverse=True),
        ]
        H = register_terms(coarse, H, loss_scale, max_iterations).H
    terms = [
        RegistrationTerm(moving, fixed_field),
        RegistrationTerm(fixed_points, moving_field, inverse=True),
    ]
    res = register_terms(terms, H, loss_scale, max_iterations)
    if not res.converged and pyramid:
        # the coarse passes moved H, so the final pass is judged against H_init
        init_cost = registration_cost(terms, H_init, loss_scale)
        return res.H, res.cost, bool(res.cost < init_cost)
    return res.H, res.cost, res.converged


def rasterize(f: DistanceField, x0: float, y0: float, x1: float, y1: float, step: float = 0.25) -> str:
    """Row-major text matrix of distance values on a regular grid, for plotting."""
    xs = np.arange(x0, x1 + 1e-9, step)
    ys = np.arange(y0, y1 + 1e-9, step)
    gx, gy = np.meshgrid(xs, ys)
    vals = f(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gy.shape)
    return "\n".join(" ".join(f"{v:.6g}" for v in row) for row in vals) + "\n"
