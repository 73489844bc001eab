"""AR(K) noise: stationarity, lag-polynomial pre-whitening, simulation.

Arrays on the full scan grid carry ``K = len(rho)`` presample rows on top;
pre-whitening consumes them and returns the ``T`` estimation rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .errors import NumericalError, ShapeError


@dataclass
class ArPrior:
    """Gaussian prior on AR coefficients truncated to the stationary region.

    ``a0`` is a covariance matrix.
    """

    rho0: np.ndarray
    a0: np.ndarray

    def __post_init__(self):
        self.rho0 = np.atleast_1d(np.asarray(self.rho0, dtype=float))
        self.a0 = np.atleast_2d(np.asarray(self.a0, dtype=float))
        k = self.rho0.size
        if self.a0.shape != (k, k):
            raise ValueError(f"a0 must be {k}x{k}, got {self.a0.shape}")
        if k and np.linalg.eigvalsh(self.a0).min() <= 0:
            raise ValueError("a0 must be positive definite")

    @property
    def order(self) -> int:
        return self.rho0.size

    @classmethod
    def shrinkage(cls, order: int, r: float = 0.0, c2: float = 0.5, zeta: float = 5.0) -> "ArPrior":
        """Prior centred on AR(1) with coefficient ``r``; lag ``k`` variance ``c2 / k**zeta``."""
        rho0 = np.zeros(order)
        if order:
            rho0[0] = r
        a0 = np.diag(c2 / np.arange(1, order + 1, dtype=float) ** zeta)
        return cls(rho0, a0)


def companion_matrix(rho) -> np.ndarray:
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    k = rho.size
    if k == 0:
        raise ValueError("companion matrix of an AR(0) process is empty")
    c = np.zeros((k, k))
    c[0] = rho
    c[np.arange(1, k), np.arange(k - 1)] = 1.0
    return c


def spectral_radius(rho) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(rho)))))


def is_stationary(rho) -> bool:
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.size == 0:
        return True
    return spectral_radius(rho) < 1.0


def prewhiten_columns(x, rho) -> np.ndarray:
    """Apply ``1 - rho_1 L - ... - rho_K L^K`` down each column.

    ``x`` has shape ``(T + K, C)`` (or ``(T + K,)``); the result has ``T`` rows.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    x = np.asarray(x, dtype=float)
    k = rho.size
    n = x.shape[0]
    if n <= k:
        raise ShapeError(f"need more than {k} rows (K presample + T), got {n}")
    out = x[k:].copy()
    for lag in range(1, k + 1):
        out -= rho[lag - 1] * x[k - lag:n - lag]
    return out


def prewhiten_rows(w, rho, n_total: int) -> np.ndarray:
    """Pre-whiten each consecutive ``n_total``-row block of ``w`` independently.

    Output stacks the ``n_total - K`` filtered rows of every block.
    """
    w = np.asarray(w, dtype=float)
    if w.shape[0] % n_total:
        raise ShapeError(f"row count {w.shape[0]} is not a multiple of {n_total}")
    blocks = w.shape[0] // n_total
    tail = w.shape[1:]
    cube = w.reshape((blocks, n_total) + tail)
    # move block axis behind time so prewhiten_columns filters along time
    cube = np.moveaxis(cube, 0, 1)
    out = prewhiten_columns(cube, rho)
    return np.moveaxis(out, 1, 0).reshape((-1,) + tail)


def autocovariances(rho, n_lags: int) -> np.ndarray:
    """Unit-innovation autocovariances ``gamma_0 .. gamma_{n_lags-1}`` via Yule-Walker."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    k = rho.size
    if not is_stationary(rho):
        raise ValueError(f"AR coefficients {rho} are not stationary")
    # gamma_h - sum_k rho_k gamma_|h-k| = 1{h=0}, h = 0..K
    a = np.eye(k + 1)
    for h in range(k + 1):
        for j in range(1, k + 1):
            a[h, abs(h - j)] -= rho[j - 1]
    rhs = np.zeros(k + 1)
    rhs[0] = 1.0
    g = list(np.linalg.solve(a, rhs))
    for h in range(k + 1, n_lags):
        g.append(sum(rho[j - 1] * g[h - j] for j in range(1, k + 1)))
    return np.asarray(g[:n_lags])


def ar_covariance_oracle(rho, n: int) -> np.ndarray:
    """Dense ``n x n`` stationary AR autocovariance matrix (unit innovations)."""
    return linalg.toeplitz(autocovariances(rho, n))


def simulate_ar(rho, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR path of length ``n`` with innovation sd ``sigma``.

    The first ``K`` values are drawn from the exact stationary distribution,
    so no burn-in is needed.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if not is_stationary(rho):
        raise ValueError(f"AR coefficients {rho} are not stationary")
    k = rho.size
    if sigma == 0:
        return np.zeros(n)
    if k == 0:
        return sigma * rng.standard_normal(n)
    head = sigma * linalg.cholesky(ar_covariance_oracle(rho, k), lower=True) @ rng.standard_normal(k)
    eps = sigma * rng.standard_normal(max(n - k, 0))
    a = np.concatenate(([1.0], -rho))
    zi = signal.lfiltic([1.0], a, head[::-1])
    tail, _ = signal.lfilter([1.0], a, eps, zi=zi)
    return np.concatenate((head, tail))[:n]


def conditional_loglik(resid, rho, sigma2) -> float:
    """Gaussian log-density of ``T`` rows given the ``K`` presample rows.

    ``resid`` is ``(T + K, J)``; voxel ``j`` has innovation variance ``sigma2[j]``.
    """
    e = prewhiten_columns(resid, rho)
    sigma2 = np.asarray(sigma2, dtype=float)
    t = e.shape[0]
    return float(-0.5 * (np.sum(e * e / sigma2) + t * np.sum(np.log(2 * np.pi * sigma2))))


def draw_stationary(mean, cov_chol, rng, max_tries: int = 10_000) -> np.ndarray:
    """Rejection-sample ``N(mean, L L^T)`` restricted to the stationary region."""
    for _ in range(max_tries):
        rho = mean + cov_chol @ rng.standard_normal(mean.size)
        if is_stationary(rho):
            return rho
    raise NumericalError(f"no stationary AR draw in {max_tries} attempts (mean {mean})")
