"""Gaussian-process regression with a Matérn 5/2 kernel and constant mean.

One scalar output per model; the map metamodel fits one of these per principal
component.  Hyperparameters (anisotropic lengthscales, variance, nugget) are
chosen by maximizing the log marginal likelihood with the constant mean
profiled out by generalized least squares, from several seeded starting points
in log-parameter space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

__all__ = [
    "Matern52Params",
    "GpModel",
    "matern52",
    "fit_gp",
    "gp_from_params",
    "gp_mean",
    "gp_mean_batch",
]

_SQRT5 = math.sqrt(5.0)
_PREDICT_CHUNK = 16384


@dataclass(frozen=True, eq=False)
class Matern52Params:
    """Kernel hyperparameters: variance, per-dimension lengthscales, nugget."""

    variance: float
    lengthscales: np.ndarray
    nugget: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.lengthscales, dtype=np.float64).reshape(-1)
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError("variance must be finite and positive")
        if rho.size == 0 or not np.all(np.isfinite(rho) & (rho > 0)):
            raise ValueError("lengthscales must be finite and positive")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError("nugget must be finite and nonnegative")
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "lengthscales", rho)
        object.__setattr__(self, "nugget", float(self.nugget))

    @property
    def dim(self) -> int:
        return self.lengthscales.size


@dataclass(eq=False)
class GpModel:
    """Fitted model with cached factorization; treat as immutable.

    alpha solves (K + tau^2 I + jitter I) alpha = z - beta, so prediction is
    beta + k(x*, X) @ alpha.  jitter records any diagonal boost the
    factorization needed (0.0 in the common case).
    """

    X_train: np.ndarray
    z_train: np.ndarray
    beta: float
    params: Matern52Params
    chol_lower: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0
    nll: float = math.nan


def _matern_shape(r: np.ndarray) -> np.ndarray:
    s = _SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52(x, x2, params: Matern52Params) -> float:
    """Covariance between two input points (no nugget)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1)
    if x.size != x2.size or x.size != params.dim:
        raise ValueError("input dimensions must match the lengthscales")
    r = math.sqrt(float(np.sum(((x - x2) / params.lengthscales) ** 2)))
    s = _SQRT5 * r
    return params.variance * (1.0 + s + s * s / 3.0) * math.exp(-s)


def _as_design(X, z):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != z.size:
        raise ValueError("X must be (n, d) with one output per row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(z))):
        raise ValueError("inputs and outputs must be finite")
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    return X, z


def _chol_with_jitter(K: np.ndarray):
    """Lower Cholesky factor, escalating a diagonal boost when K is not PD."""
    n = K.shape[0]
    scale = float(np.trace(K)) / n
    jitter = 0.0
    while True:
        try:
            if jitter == 0.0:
                return np.linalg.cholesky(K), 0.0
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 * scale if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-6 * scale:
                raise ValueError(
                    f"kernel matrix is not positive definite even with jitter "
                    f"{jitter / 10.0:.3e} (n={n}, trace/n={scale:.3e}); "
                    "increase the nugget or remove duplicate inputs"
                ) from None


def _profiled_solve(L, z):
    """GLS constant mean and weights for the factorized kernel matrix."""
    ones = np.ones_like(z)
    sol = cho_solve((L, True), np.column_stack([z, ones]), check_finite=False)
    beta = float(ones @ sol[:, 0]) / float(ones @ sol[:, 1])
    resid = z - beta
    alpha = cho_solve((L, True), resid, check_finite=False)
    return beta, resid, alpha


def gp_from_params(X, z, params: Matern52Params, beta: float | None = None) -> GpModel:
    """Model with fixed hyperparameters; beta defaults to its GLS estimate."""
    X, z = _as_design(X, z)
    if X.shape[1] != params.dim:
        raise ValueError("lengthscale count must match the input dimension")
    diff = X[:, None, :] - X[None, :, :]
    R2 = (diff / params.lengthscales) ** 2 @ np.ones(params.dim)
    K = params.variance * _matern_shape(np.sqrt(R2))
    K[np.diag_indices_from(K)] += params.nugget
    L, jitter = _chol_with_jitter(K)
    if beta is None:
        beta, resid, alpha = _profiled_solve(L, z)
    else:
        beta = float(beta)
        resid = z - beta
        alpha = cho_solve((L, True), resid, check_finite=False)
    n = z.size
    nll = 0.5 * float(resid @ alpha) + float(np.log(np.diag(L)).sum()) + 0.5 * n * math.log(2 * math.pi)
    return GpModel(X, z, beta, params, L, alpha, jitter, nll)


def _likelihood_objective(X: np.ndarray, z: np.ndarray, nugget: float | None):
    """Negative log marginal likelihood (beta profiled out) and its gradient.

    theta = (log rho_1..d, log sigma^2[, log tau^2 when the nugget is free]).
    Non-factorizable kernel matrices yield +inf so the optimizer backs away.
    """
    n, d = X.shape
    # Squared pairwise differences per dimension, reused by every call.
    Q = (X[:, None, :] - X[None, :, :]) ** 2
    eye = np.eye(n)

    def nll_grad(theta):
        rho2 = np.exp(2.0 * theta[:d])
        sig2 = math.exp(theta[d])
        tau2 = math.exp(theta[d + 1]) if nugget is None else nugget
        R2 = Q @ (1.0 / rho2)
        r = np.sqrt(R2)
        E = np.exp(-_SQRT5 * r)
        K = sig2 * ((1.0 + _SQRT5 * r + 5.0 * R2 / 3.0) * E)
        Ksig = K.copy()
        K[np.diag_indices_from(K)] += tau2
        try:
            L, _ = _chol_with_jitter(K)
        except ValueError:
            return np.inf, np.zeros_like(theta)
        beta, resid, alpha = _profiled_solve(L, z)
        val = 0.5 * float(resid @ alpha) + float(np.log(np.diag(L)).sum()) + 0.5 * n * math.log(2 * math.pi)
        Kinv = cho_solve((L, True), eye, check_finite=False)
        A = Kinv - np.outer(alpha, alpha)
        # dK/dlog rho_j = (5/3) sig2 (1 + sqrt5 r) E * Q_j / rho_j^2
        G = (5.0 / 3.0) * sig2 * (1.0 + _SQRT5 * r) * E * A
        grad = np.empty_like(theta)
        grad[:d] = 0.5 * np.einsum("ij,ijk->k", G, Q) / rho2
        grad[d] = 0.5 * float(np.sum(A * Ksig))
        if nugget is None:
            grad[d + 1] = 0.5 * tau2 * float(np.trace(A))
        return val, grad

    return nll_grad


def fit_gp(X, z, *, nugget: float | None = None, n_restarts: int = 10, seed=0) -> GpModel:
    """Fit hyperparameters by seeded multi-start likelihood maximization.

    nugget=None optimizes tau^2 within its bounds; a fixed value (0 requires
    distinct rows of X) pins it. Identical data and seed give an identical
    model.
    """
    X, z = _as_design(X, z)
    n, d = X.shape
    if nugget is not None and nugget == 0.0:
        if np.unique(X, axis=0).shape[0] != n:
            raise ValueError("duplicate inputs require a positive nugget")

    ranges = X.max(axis=0) - X.min(axis=0)
    ranges[ranges == 0.0] = 1.0
    vz = float(np.var(z))
    if vz == 0.0:
        vz = 1.0
    lo = np.log(np.concatenate([1e-2 * ranges, [1e-6 * vz]]))
    hi = np.log(np.concatenate([1e2 * ranges, [1e3 * vz]]))
    if nugget is None:
        lo = np.append(lo, math.log(1e-12 * vz))
        hi = np.append(hi, math.log(1e-2 * vz))

    nll_grad = _likelihood_objective(X, z, nugget)
    rng = np.random.default_rng(seed)
    starts = [0.5 * (lo + hi)]
    starts += [rng.uniform(lo, hi) for _ in range(max(0, n_restarts - 1))]
    best = None
    for theta0 in starts:
        res = minimize(
            nll_grad,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 200},
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise ValueError("likelihood optimization failed from every start")
    theta = best.x
    params = Matern52Params(
        variance=math.exp(theta[d]),
        lengthscales=np.exp(theta[:d]),
        nugget=math.exp(theta[d + 1]) if nugget is None else nugget,
    )
    return gp_from_params(X, z, params)


def gp_mean_batch(model: GpModel, X_star) -> np.ndarray:
    """Posterior mean at each row of X_star, as a vector."""
    X_star = np.asarray(X_star, dtype=np.float64)
    if X_star.ndim == 1:
        X_star = X_star[:, None]
    if X_star.shape[1] != model.params.dim:
        raise ValueError("prediction inputs must match the training dimension")
    rho = model.params.lengthscales
    out = np.empty(X_star.shape[0])
    for start in range(0, X_star.shape[0], _PREDICT_CHUNK):
        S = X_star[start : start + _PREDICT_CHUNK]
        diff = S[:, None, :] - model.X_train[None, :, :]
        R2 = (diff / rho) ** 2 @ np.ones(rho.size)
        k = model.params.variance * _matern_shape(np.sqrt(R2))
        out[start : start + _PREDICT_CHUNK] = model.beta + k @ model.alpha
    return out


def gp_mean(model: GpModel, x_star) -> float:
    """Posterior mean at one input point."""
    x_star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    return float(gp_mean_batch(model, x_star[None, :])[0])
