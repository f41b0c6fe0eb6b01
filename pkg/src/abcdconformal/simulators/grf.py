"""Stationary Gaussian random field on a regular grid over [0, extent]^2.

Covariance between grid points is exp(-||dz / theta||^2) with range
parameter theta uniform on (0, 1).  Fields are generated by dense
Cholesky factorization with a jitter ladder; grids stay desk-scale
(G <= 64 or so) by design.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["GrfParams", "FactorizationError", "sample_prior", "covariance_matrix", "simulate"]

JITTER_LADDER = tuple(1e-12 * 10.0**i for i in range(7))  # 1e-12 .. 1e-6


class FactorizationError(np.linalg.LinAlgError):
    """Covariance not factorizable even with the maximum jitter."""


@dataclass(frozen=True)
class GrfParams:
    theta: float
    grid_size: int = 32
    extent: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("range parameter must lie in (0, 1)")
        if self.grid_size < 2:
            raise ValueError("grid size must be at least 2")
        if self.extent <= 0.0:
            raise ValueError("extent must be positive")


def sample_prior(rng: np.random.Generator) -> float:
    return float(rng.uniform(0.0, 1.0))


@lru_cache(maxsize=8)
def _sq_distances(grid_size: int, extent: float) -> np.ndarray:
    """Pairwise squared distances between grid points, cached per grid."""
    coords = np.linspace(0.0, extent, grid_size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    pts = np.column_stack([yy.ravel(), xx.ravel()])
    diff = pts[:, None, :] - pts[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def covariance_matrix(params: GrfParams) -> np.ndarray:
    d2 = _sq_distances(params.grid_size, params.extent)
    return np.exp(-d2 / (params.theta * params.theta))


def _cholesky_with_jitter(cov: np.ndarray, context: str) -> np.ndarray:
    n = cov.shape[0]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(f"covariance factorization failed for {context}")


def simulate(params: GrfParams, rng: np.random.Generator) -> np.ndarray:
    """One zero-mean field realization of shape (G, G)."""
    low = _cholesky_with_jitter(
        covariance_matrix(params), f"theta={params.theta}, G={params.grid_size}"
    )
    z = rng.standard_normal(params.grid_size**2)
    return (low @ z).reshape(params.grid_size, params.grid_size)
