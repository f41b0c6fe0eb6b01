"""Moving-average(2) benchmark model.

X_j = Z_j + t1 * Z_{j-1} + t2 * Z_{j-2} with standard normal
innovations, parameters uniform on the identifiability triangle with
vertices (-2, 1), (2, 1), (0, -1).  The Gaussian likelihood of a series
is exact (banded Toeplitz covariance), which gives a grid-quadrature
posterior usable as an accuracy oracle for every other method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

__all__ = [
    "Ma2Params",
    "Ma2Posterior",
    "in_triangle",
    "sample_prior",
    "simulate",
    "autocovariances",
    "series_loglik",
    "grid_loglik",
    "triangle_grid",
    "grid_posterior",
    "exact_posterior",
]


def in_triangle(theta1: float, theta2: float) -> bool:
    """Identifiability triangle: -2 < t1 < 2, t1 + t2 > -1, t1 - t2 < 1.

    The triangle's top edge t2 < 1 closes the region (it is where the
    two diagonal edges meet the box); points above it are outside the
    prior's support.
    """
    return (
        -2.0 < theta1 < 2.0
        and theta1 + theta2 > -1.0
        and theta1 - theta2 < 1.0
        and theta2 < 1.0
    )


@dataclass(frozen=True)
class Ma2Params:
    theta1: float
    theta2: float

    def __post_init__(self):
        if not in_triangle(self.theta1, self.theta2):
            raise ValueError(f"({self.theta1}, {self.theta2}) outside the identifiability triangle")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


def sample_prior(rng: np.random.Generator) -> Ma2Params:
    """Uniform draw over the triangle by rejection from its bounding box."""
    while True:
        t1 = rng.uniform(-2.0, 2.0)
        t2 = rng.uniform(-1.0, 1.0)
        if in_triangle(t1, t2):
            return Ma2Params(t1, t2)


def simulate(params: Ma2Params, p: int, rng: np.random.Generator) -> np.ndarray:
    """Series of length p from p + 2 innovations Z_{-1}, Z_0, ..., Z_p."""
    if p < 3:
        raise ValueError("series length must be at least 3")
    z = rng.standard_normal(p + 2)
    return z[2:] + params.theta1 * z[1:-1] + params.theta2 * z[:-2]


def autocovariances(params: Ma2Params) -> tuple[float, float, float]:
    """gamma_0, gamma_1, gamma_2; all higher lags vanish."""
    t1, t2 = params.theta1, params.theta2
    return 1.0 + t1 * t1 + t2 * t2, t1 * (1.0 + t2), t2


def _banded_covariance(t1: float, t2: float, p: int) -> np.ndarray:
    """Upper banded storage (3, p) for scipy's banded Cholesky."""
    g0 = 1.0 + t1 * t1 + t2 * t2
    g1 = t1 * (1.0 + t2)
    ab = np.zeros((3, p))
    ab[0, 2:] = t2
    ab[1, 1:] = g1
    ab[2, :] = g0
    return ab


def series_loglik(x: np.ndarray, theta1: float, theta2: float) -> float:
    """Exact Gaussian log-likelihood up to the -p/2 log(2 pi) constant."""
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    ab = _banded_covariance(theta1, theta2, p)
    try:
        cb = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"covariance factorization failed at theta=({theta1}, {theta2})"
        ) from exc
    logdet = 2.0 * float(np.sum(np.log(cb[-1])))
    quad = float(x @ cho_solve_banded((cb, False), x))
    return -0.5 * (logdet + quad)


def grid_loglik(x: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``series_loglik`` for many (t1, t2) at once.

    Runs the banded Cholesky of the Toeplitz covariance as an index
    recursion over (M,) vectors: with bands g0/g1/g2, the factor rows are
        l2_i = g2 / l0_{i-2}
        l1_i = (g1 - l1_{i-1} l2_i) / l0_{i-1}
        l0_i = sqrt(g0 - l1_i^2 - l2_i^2)
    and the forward solve accumulates the quadratic form.  Agrees with
    the scipy path to float precision (tested) while being ~100x faster
    over a dense parameter grid.
    """
    x = np.asarray(x, dtype=float)
    points = np.asarray(points, dtype=float)
    t1, t2 = points[:, 0], points[:, 1]
    g0 = 1.0 + t1 * t1 + t2 * t2
    g1 = t1 * (1.0 + t2)
    g2 = t2
    m = points.shape[0]
    l1_prev = np.zeros(m)  # l1 at i-1
    l0_prev = np.zeros(m)  # l0 at i-1
    l0_prev2 = np.zeros(m)  # l0 at i-2
    y_prev = np.zeros(m)
    y_prev2 = np.zeros(m)
    logdet = np.zeros(m)
    quad = np.zeros(m)
    for i, xi in enumerate(x):
        if i == 0:
            l2 = np.zeros(m)
            l1 = np.zeros(m)
        elif i == 1:
            l2 = np.zeros(m)
            l1 = g1 / l0_prev
        else:
            l2 = g2 / l0_prev2
            l1 = (g1 - l1_prev * l2) / l0_prev
        diag_sq = g0 - l1 * l1 - l2 * l2
        if np.any(diag_sq <= 0.0):
            raise np.linalg.LinAlgError("covariance factorization failed on the grid")
        l0 = np.sqrt(diag_sq)
        y = (xi - l1 * y_prev - l2 * y_prev2) / l0
        logdet += np.log(l0)
        quad += y * y
        l0_prev2, l0_prev, l1_prev = l0_prev, l0, l1
        y_prev2, y_prev = y_prev, y
    return -0.5 * (2.0 * logdet + quad)


def triangle_grid(resolution: int = 400) -> np.ndarray:
    """Cell centers of a resolution^2 grid over the bounding box, clipped
    to the triangle; centers stay off the degenerate boundary."""
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    e1 = np.linspace(-2.0, 2.0, resolution + 1)
    e2 = np.linspace(-1.0, 1.0, resolution + 1)
    c1 = 0.5 * (e1[:-1] + e1[1:])
    c2 = 0.5 * (e2[:-1] + e2[1:])
    g1, g2 = np.meshgrid(c1, c2, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    keep = (
        (pts[:, 0] > -2.0)
        & (pts[:, 0] < 2.0)
        & (pts[:, 0] + pts[:, 1] > -1.0)
        & (pts[:, 0] - pts[:, 1] < 1.0)
        & (pts[:, 1] < 1.0)
    )
    return pts[keep]


@dataclass(frozen=True)
class Ma2Posterior:
    mean: np.ndarray    # (2,)
    points: np.ndarray  # (M, 2) grid points inside the triangle
    mass: np.ndarray    # (M,) normalized posterior mass

    def marginal_quantile(self, component: int, q: float) -> float:
        order = np.argsort(self.points[:, component])
        cdf = np.cumsum(self.mass[order])
        idx = int(np.searchsorted(cdf, q))
        return float(self.points[order][min(idx, order.size - 1), component])


def grid_posterior(logliks: np.ndarray, points: np.ndarray) -> Ma2Posterior:
    """Normalize log-likelihoods over equal-mass grid cells (uniform prior)."""
    logliks = np.asarray(logliks, dtype=float)
    mass = np.exp(logliks - logliks.max())
    mass /= mass.sum()
    return Ma2Posterior(mean=mass @ points, points=points, mass=mass)


def exact_posterior(x: np.ndarray, resolution: int = 400) -> Ma2Posterior:
    """Grid-quadrature posterior of (t1, t2) given one observed series."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 3:
        raise ValueError("need a series of length at least 3")
    pts = triangle_grid(resolution)
    return grid_posterior(grid_loglik(x, pts), pts)
