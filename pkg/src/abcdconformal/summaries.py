"""Summary statistics and dataset distances for the ABC baselines.

MA(2) uses the first two (unnormalized) autocovariance sums; Gaussian
random fields use Moran's I at lags 1..5 plus a binned semivariogram;
Lotka-Volterra uses no summary at all, comparing raw trajectories with
the printed squared distance.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ma2_summaries",
    "morans_i",
    "semivariogram",
    "semivariogram_max_distance",
    "grf_summaries",
    "lv_raw_distance",
    "EmptyBinError",
]


class EmptyBinError(ValueError):
    """A semivariogram bin contains no pixel pairs."""

    def __init__(self, bin_index: int, n_bins: int, max_distance: float):
        super().__init__(
            f"semivariogram bin {bin_index} of {n_bins} (max distance {max_distance}) is empty"
        )
        self.bin_index = bin_index


def ma2_summaries(x) -> tuple[float, float]:
    """(sum_j x_j x_{j-1}, sum_j x_j x_{j-2}); exact sums, no normalization."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 3:
        raise ValueError("series must have length at least 3")
    return float(np.sum(x[1:] * x[:-1])), float(np.sum(x[2:] * x[:-2]))


def morans_i(field: np.ndarray, lag: int) -> float:
    """Moran's I with row-standardized weights; the lag-k neighborhood of
    a pixel is the up-to-four pixels exactly k steps away along an axis,
    clipped at the borders."""
    field = np.asarray(field, dtype=float)
    g = field.shape[0]
    if field.shape != (g, g):
        raise ValueError("field must be square")
    if lag < 1 or lag >= g:
        raise ValueError(f"lag must lie in [1, {g - 1}]")
    z = field - field.mean()
    denom = float(np.sum(z * z))
    if denom == 0.0:
        raise ValueError("constant field: Moran's I undefined")
    neighbor_sum = np.zeros_like(z)
    neighbor_count = np.zeros_like(z)
    neighbor_sum[lag:, :] += z[:-lag, :]
    neighbor_count[lag:, :] += 1.0
    neighbor_sum[:-lag, :] += z[lag:, :]
    neighbor_count[:-lag, :] += 1.0
    neighbor_sum[:, lag:] += z[:, :-lag]
    neighbor_count[:, lag:] += 1.0
    neighbor_sum[:, :-lag] += z[:, lag:]
    neighbor_count[:, :-lag] += 1.0
    # row-standardized weights: each pixel averages its neighbors
    return float(np.sum(z * neighbor_sum / neighbor_count) / denom)


def semivariogram_max_distance(grid_size: int) -> float:
    """Pixel-distance cap for the variogram.

    The full-scale convention is 20 pixels on a 100x100 grid, scaled
    proportionally; below G=75 the proportional cap would leave the
    smallest of 15 equal-width bins without any pixel pair (minimum pair
    distance is 1), so the cap floors at 15 pixels.
    """
    return max(15.0, 20.0 * grid_size / 100.0)


def semivariogram(field: np.ndarray, max_distance: float, n_bins: int = 15) -> np.ndarray:
    """Binned semivariogram over pixel pairs.

    Bin b covers Euclidean pixel distances in ((b-1) w, b w] with
    w = max_distance / n_bins; the value is half the mean squared field
    difference over the pairs in the bin.  Bin edges depend only on the
    arguments, so variograms of same-shape fields are comparable.
    """
    field = np.asarray(field, dtype=float)
    g = field.shape[0]
    if field.shape != (g, g):
        raise ValueError("field must be square")
    if max_distance <= 0.0 or n_bins < 1:
        raise ValueError("need positive max distance and at least one bin")
    width = max_distance / n_bins
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    dmax = int(np.floor(max_distance))
    # enumerate half-plane offsets once; each offset contributes all its
    # aligned pixel pairs via two array slices
    for di in range(0, min(dmax, g - 1) + 1):
        j_low = -min(dmax, g - 1) if di > 0 else 1
        for dj in range(j_low, min(dmax, g - 1) + 1):
            if di == 0 and dj <= 0:
                continue
            dist = float(np.hypot(di, dj))
            if dist > max_distance:
                continue
            b = min(int(np.ceil(dist / width)) - 1, n_bins - 1)
            a_rows = slice(0, g - di)
            b_rows = slice(di, g)
            if dj >= 0:
                a_cols, b_cols = slice(0, g - dj), slice(dj, g)
            else:
                a_cols, b_cols = slice(-dj, g), slice(0, g + dj)
            diff = field[a_rows, a_cols] - field[b_rows, b_cols]
            sums[b] += float(np.sum(diff * diff))
            counts[b] += diff.size
    for b in range(n_bins):
        if counts[b] == 0:
            raise EmptyBinError(b, n_bins, max_distance)
    return 0.5 * sums / counts


def grf_summaries(field: np.ndarray, lags: int = 5, n_bins: int = 15) -> np.ndarray:
    """Moran correlogram (lags 1..5) concatenated with the semivariogram."""
    max_distance = semivariogram_max_distance(field.shape[0])
    moran = [morans_i(field, k) for k in range(1, lags + 1)]
    return np.concatenate([moran, semivariogram(field, max_distance, n_bins)])


def lv_raw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sum over observation times of squared differences of both species
    (a squared distance; no root, as the raw-trajectory comparison is
    defined)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != 2:
        raise ValueError(f"need two (2, n_obs) trajectories, got {a.shape} and {b.shape}")
    d = a - b
    return float(np.sum(d * d))
