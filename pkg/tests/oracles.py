"""Independent oracles shared by the test suite.

These stay deliberately naive (finite differences, explicit loops,
brute-force enumeration) so they cannot share a bug with the vectorized
implementations they check.
"""

from __future__ import annotations

import numpy as np


def finite_diff_grads(loss_fn, params, h: float = 1e-5):
    """Central finite differences of a scalar loss over nested parameter lists.

    ``loss_fn(params)`` must be a pure function of the parameter values
    (any internal randomness re-derived from a fixed seed on every call).
    """
    grads = [[np.zeros_like(p) for p in plist] for plist in params]
    for i, plist in enumerate(params):
        for j, p in enumerate(plist):
            flat = p.ravel()
            gflat = grads[i][j].ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                lp = loss_fn(params)
                flat[k] = orig - h
                lm = loss_fn(params)
                flat[k] = orig
                gflat[k] = (lp - lm) / (2.0 * h)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Worst per-coordinate relative error between two gradient pytrees.

    The floor keeps finite-difference noise on near-zero coordinates from
    registering as spurious error.
    """
    worst = 0.0
    for plist_a, plist_n in zip(analytic, numeric):
        for a, n in zip(plist_a, plist_n):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def sample_covariance_two_pass(rows: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance via an explicit two-pass loop."""
    k, d = rows.shape
    mean = np.zeros(d)
    for r in rows:
        mean += r
    mean /= k
    cov = np.zeros((d, d))
    for r in rows:
        c = r - mean
        cov += np.outer(c, c)
    return cov / (k - 1)


def mahalanobis_by_solve(theta, center, matrix) -> float:
    """Score via an explicit linear solve (no factorization reuse)."""
    resid = np.asarray(theta, dtype=float) - np.asarray(center, dtype=float)
    return float(np.sqrt(resid @ np.linalg.solve(matrix, resid)))


def morans_i_dense(field: np.ndarray, lag: int) -> float:
    """Moran's I from an explicitly constructed row-standardized weight matrix."""
    g = field.shape[0]
    n = g * g
    w = np.zeros((n, n))
    for i in range(g):
        for j in range(g):
            row = i * g + j
            for di, dj in ((lag, 0), (-lag, 0), (0, lag), (0, -lag)):
                ii, jj = i + di, j + dj
                if 0 <= ii < g and 0 <= jj < g:
                    w[row, ii * g + jj] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    z = field.ravel() - field.mean()
    return float(n / w.sum() * (z @ w @ z) / (z @ z))


def semivariogram_pairs(field: np.ndarray, max_distance: float, n_bins: int) -> np.ndarray:
    """Semivariogram by exhaustive pair enumeration over the grid."""
    g = field.shape[0]
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    width = max_distance / n_bins
    pts = [(i, j) for i in range(g) for j in range(g)]
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            (i1, j1), (i2, j2) = pts[a], pts[b]
            d = np.hypot(i1 - i2, j1 - j2)
            if d <= 0 or d > max_distance:
                continue
            bin_idx = min(int(np.ceil(d / width)) - 1, n_bins - 1)
            sums[bin_idx] += (field[i1, j1] - field[i2, j2]) ** 2
            counts[bin_idx] += 1
    if np.any(counts == 0):
        raise ValueError("empty bin in oracle")
    return 0.5 * sums / counts
