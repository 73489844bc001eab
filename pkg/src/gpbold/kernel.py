"""Matérn-5/2 GP priors over the scan grid.

Distances are measured in scans (TR units).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
MAX_JITTER = 1e-2


@dataclass(frozen=True)
class KernelHyper:
    """Lengthscale ``l`` (scans), variance ``omega**2`` and relative diagonal jitter.

    ``variance == 0`` is accepted as the degenerate prior concentrated on the mean.
    """

    lengthscale: float
    variance: float
    jitter: float = 1e-6

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.variance < 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be non-negative, got {self.jitter}")

    @classmethod
    def from_omega(cls, lengthscale: float, omega: float, jitter: float = 1e-6) -> "KernelHyper":
        return cls(lengthscale, omega ** 2, jitter)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyper":
        if "omega" in d and "variance" in d:
            raise ValueError("give either 'omega' or 'variance', not both")
        var = d["omega"] ** 2 if "omega" in d else d["variance"]
        return cls(float(d["lengthscale"]), float(var), float(d.get("jitter", 1e-6)))

    def to_dict(self) -> dict:
        return {"lengthscale": self.lengthscale, "variance": self.variance, "jitter": self.jitter}


def matern52(r, hyper: KernelHyper):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("matern52 needs non-negative distances")
    s = SQRT5 * r / hyper.lengthscale
    return hyper.variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


@dataclass(frozen=True)
class GpPrior:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    jitter: float

    @property
    def size(self) -> int:
        return self.mean.shape[0]


def _factor(cov, hyper):
    n = cov.shape[0]
    if hyper.variance == 0:
        return np.zeros_like(cov), hyper.jitter
    jitter = hyper.jitter
    while True:
        a = cov + jitter * hyper.variance * np.eye(n)
        try:
            return linalg.cholesky(a, lower=True), jitter
        except linalg.LinAlgError:
            pass
        nxt = max(jitter * 10, 1e-12)
        if nxt > MAX_JITTER * (1 + 1e-12):
            min_eig = linalg.eigvalsh(cov).min()
            raise NumericalError(
                f"Cholesky failed with jitter up to {jitter:g}; min eigenvalue {min_eig:.3g}")
        log.warning("Cholesky failed at jitter %g, retrying with %g", jitter, nxt)
        jitter = nxt


def build_gp_prior(mean, times, hyper: KernelHyper) -> GpPrior:
    """Prior ``N(mean, K)`` with ``K[i, j] = matern52(|t_i - t_j|) + jitter * omega**2 * 1{i=j}``.

    ``times`` must be equally spaced and increasing; the covariance is built
    as an exact symmetric Toeplitz matrix from the first-row lags.
    """
    mean = np.asarray(mean, dtype=float)
    times = np.asarray(times, dtype=float)
    if times.shape != mean.shape:
        raise ValueError("mean and times must have the same length")
    if times.size > 1:
        d = np.diff(times)
        if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError("times must be strictly increasing and equally spaced")
    row = matern52(np.abs(times - times[0]), hyper)
    cov = linalg.toeplitz(row)
    chol, jitter = _factor(cov, hyper)
    cov = cov + jitter * hyper.variance * np.eye(times.size)
    return GpPrior(mean, cov, chol, jitter)


def sample_gp(prior: GpPrior, rng: np.random.Generator) -> np.ndarray:
    return prior.mean + prior.chol @ rng.standard_normal(prior.size)
