"""Identifying transform of the latent predicted BOLD.

``transform`` rescales each latent column to unit sup-norm, fixes its sign
against a reference (prior mean) column and orders the columns to maximise
their summed Pearson correlation with the reference columns. The result is
invariant to per-column rescaling, sign flips and column permutations of
the latent matrix.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateInputError

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE = 8


@dataclass(frozen=True)
class LatentBold:
    raw: np.ndarray
    transformed: np.ndarray
    permutation: tuple


def normalize_column(f, prior_mean):
    """``f / (max|f| * sign(f @ prior_mean))``; a zero inner product counts as positive."""
    f = np.asarray(f, dtype=float)
    scale = np.max(np.abs(f))
    if scale == 0:
        raise DegenerateInputError("cannot normalize an all-zero column")
    ip = float(f @ prior_mean)
    if ip == 0.0:
        log.warning("column orthogonal to its prior mean; sign taken as +1")
    elif ip < 0:
        scale = -scale
    return f / scale


def _corr_matrix(a, b):
    """Pearson correlations ``C[i, m] = corr(a[:, i], b[:, m])``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt((b * b).sum(axis=0))
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("correlation undefined for a constant column")
    return (a.T @ b) / np.outer(na, nb)


@lru_cache(maxsize=None)
def _all_orderings(m):
    return np.array(list(itertools.permutations(range(m))), dtype=np.intp)


def _best_ordering(score):
    """Ordering ``p`` maximising ``sum_m score[p[m], m]`` by exhaustive search.

    Ties go to the lexicographically first ordering, so the identity wins
    among equals.
    """
    m = score.shape[1]
    if m > MAX_EXHAUSTIVE:
        raise ValueError(f"column matching supports at most {MAX_EXHAUSTIVE} stimuli, got {m}")
    perms = _all_orderings(m)
    totals = score[perms, np.arange(m)].sum(axis=1)
    return tuple(int(i) for i in perms[int(np.argmax(totals))])


def match_permutation(f_post, f_ref) -> tuple:
    """Column ordering of ``f_post`` that maximises summed correlation with ``f_ref``.

    Returns ``p`` such that ``f_post[:, p]`` is the reordered matrix.
    """
    f_post = np.atleast_2d(np.asarray(f_post, dtype=float))
    f_ref = np.atleast_2d(np.asarray(f_ref, dtype=float))
    if f_post.shape != f_ref.shape:
        raise ValueError(f"shape mismatch {f_post.shape} vs {f_ref.shape}")
    if f_post.shape[1] == 1:
        _corr_matrix(f_post, f_ref)
        return (0,)
    return _best_ordering(_corr_matrix(f_post, f_ref))


def transform(f, f_ref) -> LatentBold:
    """Identified predicted BOLD ``H(F)`` with the column ordering used."""
    f = np.asarray(f, dtype=float)
    f_ref = np.asarray(f_ref, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f_ref.ndim == 1:
        f_ref = f_ref[:, None]
    if f.shape != f_ref.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {f_ref.shape}")
    m = f.shape[1]
    if m == 1:
        return LatentBold(f, normalize_column(f[:, 0], f_ref[:, 0])[:, None], (0,))
    # sign is fixed per candidate pairing, so the score is sign(<f_i, ref_m>) * corr
    signs = np.where(f.T @ f_ref < 0, -1.0, 1.0)
    perm = _best_ordering(signs * _corr_matrix(f, f_ref))
    out = np.column_stack([normalize_column(f[:, perm[k]], f_ref[:, k]) for k in range(m)])
    return LatentBold(f, out, perm)


def identified(f, f_ref) -> np.ndarray:
    """Shortcut for ``transform(f, f_ref).transformed``."""
    return transform(f, f_ref).transformed
