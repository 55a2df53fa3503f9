"""Gaussian-process regression with an ARD Matern-5/2 kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

NOISE_FLOOR = 1e-6
MAX_JITTER = 1e-2
SQRT5 = math.sqrt(5.0)

# bounds on log hyperparameters (targets are standardised)
LOG_LS = (math.log(1e-2), math.log(20.0))
LOG_SIGNAL = (math.log(1e-6), math.log(20.0))
LOG_NOISE = (math.log(NOISE_FLOOR), math.log(1.0))


class NumericalError(RuntimeError):
    pass


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> np.ndarray:
    a, b = A / ls, B / ls
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def matern52(A: np.ndarray, B: np.ndarray, signal: float, ls: np.ndarray) -> np.ndarray:
    r = np.sqrt(_scaled_sqdist(A, B, ls))
    return signal * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def cholesky_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor, adding diagonal jitter x10 per retry up to ``MAX_JITTER``."""
    jitter = 0.0
    scale = float(np.mean(np.diag(K))) or 1.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * scale * np.eye(len(K))), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise NumericalError("kernel matrix not positive definite after jitter escalation")


@dataclass
class GPModel:
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    signal: float
    lengthscales: np.ndarray
    noise: float
    L: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    log_likelihood: float = float("nan")

    @classmethod
    def from_hyperparameters(cls, X, y, signal: float, lengthscales, noise: float,
                             standardize: bool = True) -> "GPModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        mu, sd = (float(y.mean()), float(y.std())) if standardize else (0.0, 1.0)
        if sd <= 0.0:
            sd = 1.0
        ys = (y - mu) / sd
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],)).copy()
        K = matern52(X, X, signal, ls) + noise * np.eye(len(X))
        L, jitter = cholesky_jitter(K)
        alpha = cho_solve((L, True), ys)
        lml = -0.5 * ys @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(ys) * math.log(2 * math.pi)
        return cls(X, y, mu, sd, float(signal), ls, float(noise), L, alpha, jitter, float(lml))

    @property
    def hyperparameters(self) -> np.ndarray:
        return np.concatenate([[math.log(self.signal)], np.log(self.lengthscales), [math.log(self.noise)]])

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent-function variance at the rows of ``Xs``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = matern52(Xs, self.X, self.signal, self.lengthscales)
        mean = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(self.signal - (v * v).sum(0), 0.0)
        return self.y_mean + self.y_std * mean, var * self.y_std ** 2


def pairwise_sq_diffs(X: np.ndarray) -> np.ndarray:
    """(d, n, n) squared coordinate differences, reused across likelihood evaluations."""
    diff = X.T[:, :, None] - X.T[:, None, :]
    return diff * diff


def _neg_lml(theta: np.ndarray, D: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    d, n = D.shape[0], D.shape[1]
    signal, noise = math.exp(theta[0]), math.exp(theta[-1])
    inv_ls2 = np.exp(-2.0 * theta[1:1 + d])
    r = np.sqrt(np.tensordot(inv_ls2, D, axes=1))
    e = np.exp(-SQRT5 * r)
    Kf = signal * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    K = Kf + noise * np.eye(n)
    L, info = lapack.dpotrf(K, lower=1, clean=1)
    if info != 0:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi)
    Kinv, info = lapack.dpotri(L, lower=1)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    grad[0] = -0.5 * np.sum(W * Kf)
    G = W * (signal * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e)
    grad[1:1 + d] = -0.5 * inv_ls2 * np.tensordot(D, G, axes=([1, 2], [0, 1]))
    grad[-1] = -0.5 * noise * np.trace(W)
    return float(nll), grad


def _dedupe(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average targets over identical input rows."""
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    if len(uniq) == len(X):
        return X, y
    inv = inv.ravel()
    sums = np.bincount(inv, weights=y, minlength=len(uniq))
    return uniq, sums / np.bincount(inv, minlength=len(uniq))


def gp_fit(X, y, restarts: int = 4, rng: np.random.Generator | None = None,
           warm_start: np.ndarray | None = None) -> GPModel:
    """Maximise the log marginal likelihood over log hyperparameters with L-BFGS-B.

    Starts are a fixed default, ``restarts`` random points within the bounds
    and, if given, ``warm_start`` (typically the previous fit's optimum).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) < 2:
        raise ValueError("gp_fit needs at least two observations")
    X, y = _dedupe(X, y)
    d = X.shape[1]
    mu, sd = float(y.mean()), float(y.std())
    if sd <= 0.0:
        sd = 1.0
    ys = (y - mu) / sd
    bounds = [LOG_SIGNAL] + [LOG_LS] * d + [LOG_NOISE]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = rng or np.random.default_rng(0)
    starts = [np.concatenate([[0.0], np.full(d, math.log(0.5)), [math.log(1e-3)]])]
    if warm_start is not None:
        starts.insert(0, np.clip(np.asarray(warm_start, dtype=float), lo, hi))
    starts += [rng.uniform(lo, hi) for _ in range(restarts)]
    D = pairwise_sq_diffs(X)
    best = None
    for s in starts:
        res = minimize(_neg_lml, s, args=(D, ys), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    return gp_condition(X, y, math.exp(theta[0]), np.exp(theta[1:1 + d]), math.exp(theta[-1]))


def gp_condition(X, y, signal: float, lengthscales, noise: float) -> GPModel:
    """Posterior on (deduplicated, standardised) data for fixed hyperparameters."""
    X, y = _dedupe(np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float).ravel())
    mu, sd = float(y.mean()), float(y.std())
    if sd <= 0.0:
        sd = 1.0
    model = GPModel.from_hyperparameters(X, (y - mu) / sd, signal, lengthscales, noise, standardize=False)
    model.y, model.y_mean, model.y_std = y, mu, sd
    return model


def gp_predict(model: GPModel, x) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(x)
