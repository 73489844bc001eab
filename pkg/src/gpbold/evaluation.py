"""Posterior summaries: Bayesian t-ratios, PPMs, ROC curves, global-mean scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

DEFAULT_THRESHOLDS = np.linspace(1.0, 4.0, 60)


def t_ratio(draws, c: float = 0.0):
    """``(mean - c) / sd`` over the first axis (draws); sd uses ``ddof=1``."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise ValueError("t-ratio needs at least two draws")
    sd = draws.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateInputError("t-ratio undefined: zero posterior variance")
    return (draws.mean(axis=0) - c) / sd


def ppm(draws, c: float = 0.0):
    """Posterior probability ``P(b > c | y)`` as the fraction of draws above ``c``."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 1:
        raise ValueError("ppm needs at least one draw")
    return np.mean(draws > c, axis=0)


@dataclass
class ActivityMap:
    t_values: np.ndarray
    ppm: np.ndarray
    effect_threshold: float
    parcel_id: str = "0"

    def rows(self):
        """``(voxel, stimulus, t, ppm)`` tuples, voxel-major."""
        n_stim, n_vox = self.t_values.shape
        for j in range(n_vox):
            for m in range(n_stim):
                yield j, m, float(self.t_values[m, j]), float(self.ppm[m, j])


def activity_map(b_draws, c: float = 0.25, parcel_id: str = "0", rows=None) -> ActivityMap:
    """t-ratios and PPMs for draws of shape ``(n, M, J)``; ``rows`` selects stimulus rows."""
    b_draws = np.asarray(b_draws, dtype=float)
    if rows is not None:
        b_draws = b_draws[:, :rows]
    return ActivityMap(t_ratio(b_draws, c), ppm(b_draws, c), c, parcel_id)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def auc_from_points(fpr, tpr) -> float:
    """Trapezoid area through ``(0, 0)``, the given points and ``(1, 1)``."""
    x = np.concatenate(([0.0], np.asarray(fpr, float), [1.0]))
    y = np.concatenate(([0.0], np.asarray(tpr, float), [1.0]))
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_curve(t_values, truth, thresholds=DEFAULT_THRESHOLDS) -> RocCurve:
    """Rates of ``t > a`` among active (TPR) and inactive (FPR) voxels for each threshold."""
    t_values = np.asarray(t_values, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if t_values.shape != truth.shape:
        raise ValueError("t_values and truth must have the same length")
    if truth.all() or not truth.any():
        raise DegenerateInputError("ROC needs at least one active and one inactive voxel")
    thresholds = np.asarray(thresholds, dtype=float)
    above = t_values[None, :] > thresholds[:, None]
    tpr = above[:, truth].mean(axis=1)
    fpr = above[:, ~truth].mean(axis=1)
    return RocCurve(thresholds, tpr, fpr, auc_from_points(fpr, tpr))


def average_roc(curves) -> RocCurve:
    """Pointwise mean of TPR and FPR per threshold across replicates."""
    curves = list(curves)
    thr = curves[0].thresholds
    if any(not np.array_equal(c.thresholds, thr) for c in curves):
        raise ValueError("ROC curves must share thresholds to be averaged")
    tpr = np.mean([c.tpr for c in curves], axis=0)
    fpr = np.mean([c.fpr for c in curves], axis=0)
    return RocCurve(thr, tpr, fpr, auc_from_points(fpr, tpr))


def tpr_at_fpr(curve: RocCurve, fpr) -> np.ndarray:
    """Interpolate the curve's TPR at the requested false-positive rates.

    Where several thresholds share one FPR the best TPR is used.
    """
    x = np.concatenate(([0.0], curve.fpr, [1.0]))
    y = np.concatenate(([0.0], curve.tpr, [1.0]))
    ux = np.unique(x)
    uy = np.array([y[x == v].max() for v in ux])
    return np.interp(fpr, ux, uy)


def matched_tpr_gain(curve: RocCurve, other: RocCurve) -> float:
    """Mean TPR difference ``curve - other`` at matched false-positive rates.

    Both curves are read off at the FPR reached by every threshold of
    either curve, so the comparison is antisymmetric and zero for equal curves.
    """
    grid = np.concatenate([curve.fpr, other.fpr])
    return float(np.mean(tpr_at_fpr(curve, grid) - tpr_at_fpr(other, grid)))


def scale_global_mean(y) -> np.ndarray:
    """Divide each voxel by its sd, then rescale so the grand mean is 100."""
    y = np.asarray(y, dtype=float)
    sd = y.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd == 0)
    if bad.size:
        raise DegenerateInputError(f"zero-variance voxels: {bad.tolist()}")
    unit = y / sd
    return unit * (100.0 / unit.mean())
