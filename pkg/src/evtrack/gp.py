"""Gaussian-process regression with squared-exponential kernels.

Everything here works on dense matrices and a cached Cholesky factor of
``K + noise * I``. The factor is shared by the posterior mean, posterior
variance, log marginal likelihood and its gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist

JITTER = 1e-8
LOG_2PI = math.log(2.0 * math.pi)
FLUSH_EXPONENT = -70.0


class SingularModelError(np.linalg.LinAlgError):
    """Raised when ``K + noise * I`` cannot be factorized even after jitter."""


@dataclass(frozen=True)
class SqExpKernel:
    """``scale * exp(-|a - b|^2 / (2 lengthscale^2))``."""

    scale: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and self.lengthscale > 0):
            raise ValueError(f"kernel needs scale > 0 and lengthscale > 0, got {self}")

    def __call__(self, a, b) -> float:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d2 = float(np.sum((a - b) ** 2))
        return self.scale * math.exp(-0.5 * d2 / self.lengthscale**2)

    def matrix(self, A, B=None) -> np.ndarray:
        """Cross-covariance between the rows of ``A`` and ``B``."""
        A = _as_points(A)
        B = A if B is None else _as_points(B)
        return sqexp_from_sqdist(cdist(A, B, "sqeuclidean"), self.lengthscale, self.scale)


def sqexp_from_sqdist(d2: np.ndarray, lengthscale: float, scale: float = 1.0) -> np.ndarray:
    """Kernel values from squared distances, in place on ``d2``.

    Entries below ``exp(FLUSH_EXPONENT)`` become exact zeros. They are far
    below double precision next to the unit diagonal, and left alone they
    produce subnormal floats that slow LAPACK down several-fold.
    """
    d2 *= -0.5 / lengthscale**2
    d2[d2 < FLUSH_EXPONENT] = -np.inf
    np.exp(d2, out=d2)
    if scale != 1.0:
        d2 *= scale
    return d2


def kernel_eval(k: SqExpKernel, a, b) -> float:
    return k(a, b)


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    return X


def cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``K``, retrying once with a small jitter.

    Raises
    ------
    SingularModelError
        If ``K`` is not positive definite even with jitter added.
    """
    L, info = lapack.dpotrf(K, lower=1, clean=1)
    if info != 0:
        Kj = K + JITTER * np.eye(K.shape[0])
        L, info = lapack.dpotrf(Kj, lower=1, clean=1)
        if info != 0:
            raise SingularModelError(f"Gram matrix is not positive definite (info={info})")
    return L


def cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    x, info = lapack.dpotrs(L, b, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs failed with info={info}")
    return x


def cho_inverse(L: np.ndarray) -> np.ndarray:
    """Full symmetric inverse from a lower Cholesky factor."""
    Ki, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise SingularModelError(f"dpotri failed with info={info}")
    # dpotri fills only the lower triangle
    Ki = np.tril(Ki)
    return Ki + np.tril(Ki, -1).T


def log_likelihood_from_factor(L: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    n = y.shape[0]
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def likelihood_gradient_matrix(L: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``alpha alpha^T - (K + noise I)^-1``.

    The gradient of the log marginal likelihood for any parameter ``p`` is
    ``0.5 * sum(W * dK/dp)`` with this matrix ``W``.
    """
    return np.outer(alpha, alpha) - cho_inverse(L)


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray
    y: np.ndarray
    kernel: SqExpKernel
    noise: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def gram(self) -> np.ndarray:
        return self.kernel.matrix(self.X) + self.noise * np.eye(self.n)

    def mean(self, Q) -> np.ndarray:
        """Posterior mean at each row of ``Q``."""
        return self.kernel.matrix(Q, self.X) @ self.alpha

    def variance(self, Q) -> np.ndarray:
        Ks = self.kernel.matrix(self.X, Q)
        v = lapack.dtrtrs(self.chol, Ks, lower=1)[0]
        var = self.kernel.scale - np.sum(v * v, axis=0)
        return np.maximum(var, 0.0)


def gp_fit(X, y, k: SqExpKernel, noise: float = 0.0) -> GpModel:
    """Factorize ``K + noise * I`` and cache the weight vector.

    Raises
    ------
    SingularModelError
        For rank-deficient Gram matrices, e.g. duplicated inputs with zero noise.
    """
    X = _as_points(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("X and y need the same, non-zero number of rows")
    if noise < 0:
        raise ValueError("noise variance must be non-negative")
    if noise == 0.0 and np.unique(X, axis=0).shape[0] < X.shape[0]:
        # exact rank deficiency; jitter would mask it
        raise SingularModelError("duplicate inputs with zero noise")
    K = k.matrix(X) + noise * np.eye(y.shape[0])
    L = cholesky(K)
    alpha = cho_solve(L, y)
    return GpModel(X=X, y=y, kernel=k, noise=float(noise), chol=L, alpha=alpha)


def gp_mean(m: GpModel, q) -> float:
    return float(m.mean(np.atleast_2d(np.asarray(q, dtype=float).reshape(1, -1)))[0])


def gp_variance(m: GpModel, q) -> float:
    return float(m.variance(np.asarray(q, dtype=float).reshape(1, -1))[0])


def log_marginal_likelihood(m: GpModel) -> float:
    return log_likelihood_from_factor(m.chol, m.y, m.alpha)


def lml_gradient(
    m: GpModel,
    dK_dtheta: Iterable[np.ndarray] | Callable[[GpModel], Iterable[np.ndarray]],
) -> np.ndarray:
    """Gradient of the log marginal likelihood.

    ``dK_dtheta`` is either a sequence of symmetric ``N x N`` Gram-matrix
    derivatives (one per parameter) or a callable producing them from the
    model. Each component is ``0.5 a^T dK a - 0.5 tr(K^-1 dK)``.
    """
    mats = dK_dtheta(m) if callable(dK_dtheta) else dK_dtheta
    W = likelihood_gradient_matrix(m.chol, m.alpha)
    return np.array([0.5 * float(np.sum(W * np.asarray(D))) for D in mats])


def sqexp_hyper_derivatives(m: GpModel) -> Sequence[np.ndarray]:
    """Gram derivatives with respect to (scale, lengthscale, noise)."""
    d2 = cdist(m.X, m.X, "sqeuclidean")
    E = sqexp_from_sqdist(d2.copy(), m.kernel.lengthscale)
    dscale = E
    dlen = m.kernel.scale * E * d2 / m.kernel.lengthscale**3
    return [dscale, dlen, np.eye(m.n)]
