"""LTI comparison models sharing the Gibbs machinery.

* ``fixed``: predicted BOLD pinned to the identified prior mean.
* ``fixed-deriv``: prior mean plus its temporal derivative as a second basis.
* ``fir``: smooth FIR filter with a GP prior, endpoints clamped to the prior mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy import linalg

from .errors import DegenerateInputError, NumericalError
from .gibbs import (LatentBlock, LatentModel, ModelSpec, ParcelData, PosteriorDraws,
                    fixed_latent_model, run_gibbs)
from .identify import identified
from .kernel import KernelHyper, build_gp_prior
from .paradigm import HrfParams, Paradigm, sampled_hrf, standardize_columns


def fit_fixed(data: ParcelData, spec: ModelSpec) -> PosteriorDraws:
    return run_gibbs(data, spec, fixed_latent_model(spec))[0]


def derivative_basis(prior_mean) -> np.ndarray:
    """``[H(F0) | standardized first differences of F0]``, shape ``(T+K, 2M)``."""
    f0 = np.asarray(prior_mean, dtype=float)
    if f0.ndim == 1:
        f0 = f0[:, None]
    deriv = np.diff(f0, axis=0, prepend=f0[:1])
    try:
        deriv = standardize_columns(deriv)
    except DegenerateInputError as exc:
        raise DegenerateInputError(
            "temporal derivative is constant and collinear with the intercept") from exc
    return np.hstack([identified(f0, f0), deriv])


def derivative_spec(spec: ModelSpec) -> ModelSpec:
    """Extend the activation prior to ``2M`` rows (derivative rows get the same precision)."""
    m = spec.prior_mean.shape[1]
    p = np.eye(m) if spec.b_precision is None else np.asarray(spec.b_precision, float)
    b0 = np.asarray(spec.b0, float)
    if b0.ndim == 2:
        b0 = np.vstack([b0, np.zeros_like(b0)])
    return replace(spec, b_precision=linalg.block_diag(p, p), b0=b0)


def fit_fixed_with_derivative(data: ParcelData, spec: ModelSpec) -> PosteriorDraws:
    """Fixed two-basis model; rows ``:M`` of ``b`` are the first-basis activations."""
    if data.n_total < 2:
        raise ValueError("temporal derivative needs at least two scans")
    basis = derivative_basis(spec.prior_mean)
    model = fixed_latent_model(spec, design=basis, name="fixed-deriv")
    m = spec.prior_mean.shape[1]
    return run_gibbs(data, derivative_spec(spec), model, {"primary_rows": m})[0]


@dataclass
class FirSpec:
    """Smooth FIR baseline settings.

    ``filter_length`` is in scans; the prior mean of each filter is the
    sampled double-gamma HRF scaled to unit peak.
    """

    paradigm: Paradigm
    filter_length: int | None = None
    kernel: KernelHyper = field(default_factory=lambda: KernelHyper(3.0, 0.5))
    hrf: HrfParams = field(default_factory=HrfParams)

    def __post_init__(self):
        if self.filter_length is None:
            self.filter_length = int(round(self.hrf.kernel_length / self.paradigm.tr))
        if self.filter_length < 3:
            raise ValueError("FIR filter needs at least 3 taps (two clamped endpoints)")
        if self.filter_length > self.paradigm.n_time:
            raise ValueError("FIR filter longer than the scan count")

    def prior_filter(self) -> np.ndarray:
        h = sampled_hrf(self.paradigm.tr, self.hrf)
        out = np.zeros(self.filter_length)
        n = min(h.size, self.filter_length)
        out[:n] = h[:n]
        return out / np.max(np.abs(out))


def fir_design_matrix(paradigm: Paradigm, filter_length: int) -> np.ndarray:
    """Lagged stimulus indicators, shape ``(T+K, filter_length * M)``, stimulus-major."""
    box = paradigm.boxcars()
    n, m = box.shape
    x = np.zeros((n, filter_length * m))
    for s in range(m):
        for lag in range(filter_length):
            x[lag:, s * filter_length + lag] = box[:n - lag, s]
    return x


def fir_predicted(h, x_fir) -> np.ndarray:
    """Per-stimulus predicted BOLD ``X_FIR h`` for a ``(filter_length, M)`` filter matrix."""
    h = np.asarray(h, dtype=float)
    k = h.shape[0]
    return np.column_stack([x_fir[:, s * k:(s + 1) * k] @ h[:, s] for s in range(h.shape[1])])


def _fir_design(h, x_fir, ref):
    return identified(fir_predicted(h, x_fir), ref)


def fir_latent_model(fir: FirSpec) -> LatentModel:
    k = fir.filter_length
    m = fir.paradigm.n_stimuli
    x_fir = fir_design_matrix(fir.paradigm, k)
    h0 = np.tile(fir.prior_filter()[:, None], (1, m))
    ref = fir_predicted(h0, x_fir)
    prior = build_gp_prior(h0[:, 0], np.arange(k, dtype=float), fir.kernel)
    inner = np.arange(1, k - 1)
    ends = np.array([0, k - 1])
    cov = prior.cov
    # endpoints sit at their prior means, so the conditional mean of the interior is unchanged
    cond = cov[np.ix_(inner, inner)] - cov[np.ix_(inner, ends)] @ linalg.solve(
        cov[np.ix_(ends, ends)], cov[np.ix_(ends, inner)], assume_a="pos")
    cond = 0.5 * (cond + cond.T)
    try:
        chol = linalg.cholesky(cond, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("conditional FIR prior covariance is not positive definite") from exc
    blocks = [LatentBlock(s, inner, h0[inner, s].copy(), chol) for s in range(m)]
    return LatentModel("fir", h0, blocks, partial(_fir_design, x_fir=x_fir, ref=ref),
                       latent_name="h")


def fit_smooth_fir(data: ParcelData, spec: ModelSpec, fir: FirSpec) -> PosteriorDraws:
    if fir.paradigm.n_total != data.n_total:
        raise ValueError("paradigm scan count does not match the data")
    model = fir_latent_model(fir)
    return run_gibbs(data, spec, model, {"filter_length": fir.filter_length,
                                         "fir_kernel": fir.kernel.to_dict()})[0]
