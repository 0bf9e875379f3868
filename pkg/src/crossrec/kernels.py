"""Hot numeric kernels with numba and pure-numpy implementations.

Every public function dispatches on :func:`crossrec.accel.use_numba` at call
time, so flipping ``CROSSREC_NO_NUMBA`` switches backends without reimport.
The numba versions iterate pair differences explicitly; the numpy versions
chunk over rows to keep memory bounded. Both compute squared distances from
explicit coordinate differences, so diagonal self-distances are exactly zero
on either backend.
"""

import numpy as np

from .accel import njit, use_numba

__all__ = ["pairwise_sq_dists", "mmd_sums", "rank_counts"]


# ---------------------------------------------------------------------------
# pairwise squared distances

@njit(cache=True)
def _pairwise_sq_dists_nb(a, b):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                acc += diff * diff
            out[i, j] = acc
    return out


def _pairwise_sq_dists_np(a, b):
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        diff = b - a[i]
        out[i] = np.einsum("jt,jt->j", diff, diff)
    return out


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` and ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("pairwise_sq_dists expects 2-D inputs with equal widths")
    if use_numba():
        return _pairwise_sq_dists_nb(a, b)
    return _pairwise_sq_dists_np(a, b)


# ---------------------------------------------------------------------------
# fused Gaussian-kernel sums for squared MMD

@njit(cache=True)
def _mmd_sums_nb(x, y, gamma):
    n = x.shape[0]
    m = y.shape[0]
    d = x.shape[1]
    sxx_full = 0.0
    sxx_off = 0.0
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - x[j, t]
                acc += diff * diff
            k = np.exp(-gamma * acc)
            sxx_full += k
            if i != j:
                sxx_off += k
    syy_full = 0.0
    syy_off = 0.0
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = y[i, t] - y[j, t]
                acc += diff * diff
            k = np.exp(-gamma * acc)
            syy_full += k
            if i != j:
                syy_off += k
    sxy = 0.0
    sxy_diag = 0.0
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - y[j, t]
                acc += diff * diff
            k = np.exp(-gamma * acc)
            sxy += k
            if i == j:
                sxy_diag += k
    return sxx_full, sxx_off, syy_full, syy_off, sxy, sxy_diag


def _mmd_sums_np(x, y, gamma):
    kxx = np.exp(-gamma * _pairwise_sq_dists_np(x, x))
    kyy = np.exp(-gamma * _pairwise_sq_dists_np(y, y))
    kxy = np.exp(-gamma * _pairwise_sq_dists_np(x, y))
    sxx_full = float(kxx.sum())
    syy_full = float(kyy.sum())
    return (
        sxx_full,
        sxx_full - float(np.trace(kxx)),
        syy_full,
        syy_full - float(np.trace(kyy)),
        float(kxy.sum()),
        float(np.trace(kxy)),
    )


def mmd_sums(x: np.ndarray, y: np.ndarray, sigma: float):
    """Gaussian-kernel sums needed by both squared-MMD estimators.

    Returns ``(sxx_full, sxx_offdiag, syy_full, syy_offdiag, sxy_full,
    sxy_diag)`` for kernel ``exp(-||a-b||^2 / (2 sigma^2))``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    gamma = 1.0 / (2.0 * sigma * sigma)
    if use_numba():
        return _mmd_sums_nb(x, y, gamma)
    return _mmd_sums_np(x, y, gamma)


# ---------------------------------------------------------------------------
# batched pessimistic ranks for leave-one-out evaluation

@njit(cache=True)
def _rank_counts_nb(scores, pos_idx):
    q, c = scores.shape
    out = np.empty(q, dtype=np.int64)
    for i in range(q):
        sp = scores[i, pos_idx[i]]
        r = 0
        for j in range(c):
            if scores[i, j] >= sp:
                r += 1
        out[i] = r
    return out


def _rank_counts_np(scores, pos_idx):
    sp = scores[np.arange(scores.shape[0]), pos_idx]
    return (scores >= sp[:, None]).sum(axis=1).astype(np.int64)


def rank_counts(scores: np.ndarray, pos_idx: np.ndarray) -> np.ndarray:
    """Pessimistic rank of the positive per query row.

    The rank counts every candidate scoring >= the positive (ties count
    against the positive), so the top rank is 1.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    pos_idx = np.ascontiguousarray(pos_idx, dtype=np.int64)
    if use_numba():
        return _rank_counts_nb(scores, pos_idx)
    return _rank_counts_np(scores, pos_idx)
