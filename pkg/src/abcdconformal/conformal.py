"""Split conformal calibration with Mahalanobis scores.

The nonconformity score of a parameter vector against a prediction is
the Mahalanobis residual sqrt((theta - center)^T V^-1 (theta - center)).
The conformal quantile is the ceil((N+1)(1-delta))-th smallest
calibration score; the confidence set is the closed ellipsoid of scores
up to that quantile, which in one dimension is the interval
center +/- q * sqrt(V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .mcdropout import DropoutPrediction, UncertaintyKind, uncertainty_matrix

__all__ = [
    "ConformalCalibrator",
    "ConfidenceSet",
    "CalibrationSizeError",
    "mahalanobis_score",
    "calibrate",
    "confidence_set",
    "component_interval_scores",
    "marginal_intervals",
    "coverage_bounds",
]


class CalibrationSizeError(ValueError):
    """The calibration set is too small for the requested miscoverage."""


def mahalanobis_score(theta, center, matrix) -> float:
    """sqrt((theta-center)^T V^-1 (theta-center)) via Cholesky and a
    triangular solve; zero exactly when theta equals the center."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    center = np.atleast_1d(np.asarray(center, dtype=float))
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    try:
        low = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("uncertainty matrix is not positive definite") from exc
    y = solve_triangular(low, theta - center, lower=True)
    return float(np.sqrt(np.dot(y, y)))


def conformal_rank(n_cal: int, delta: float) -> int:
    """k = ceil((N+1)(1-delta)); the quantile is the k-th smallest score."""
    if not 0.0 < delta < 1.0:
        raise ValueError("miscoverage delta must lie in (0, 1)")
    k = math.ceil((n_cal + 1) * (1.0 - delta))
    if k > n_cal:
        minimal = math.ceil(1.0 / delta)
        raise CalibrationSizeError(
            f"delta={delta} needs at least {minimal} calibration scores, got {n_cal}"
        )
    return k


@dataclass(frozen=True)
class ConformalCalibrator:
    """Sorted calibration scores with their conformal quantile."""

    delta: float
    scores: np.ndarray  # sorted ascending
    q_hat: float
    kind: UncertaintyKind | None = None

    @property
    def n_cal(self) -> int:
        return self.scores.shape[0]

    def to_dict(self) -> dict:
        hist, edges = np.histogram(self.scores, bins=min(30, self.n_cal))
        return {
            "delta": self.delta,
            "n_cal": self.n_cal,
            "q_hat": self.q_hat,
            "kind": self.kind.value if self.kind is not None else None,
            "score_histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
            "scores": self.scores.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ConformalCalibrator":
        kind = UncertaintyKind(d["kind"]) if d.get("kind") else None
        return ConformalCalibrator(
            delta=d["delta"], scores=np.asarray(d["scores"]), q_hat=d["q_hat"], kind=kind
        )


def calibrate(scores, delta: float, kind: UncertaintyKind | None = None) -> ConformalCalibrator:
    """Sort the scores and take the rank-ceil((N+1)(1-delta)) order statistic.

    Ties are kept; duplicates simply occupy adjacent ranks.
    """
    scores = np.sort(np.asarray(scores, dtype=float))
    if scores.size == 0:
        raise CalibrationSizeError("no calibration scores")
    if np.any(scores < 0.0) or not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite and nonnegative")
    k = conformal_rank(scores.size, delta)
    return ConformalCalibrator(delta=delta, scores=scores, q_hat=float(scores[k - 1]), kind=kind)


@dataclass(frozen=True)
class ConfidenceSet:
    """Closed ellipsoid {theta : score(theta) <= q_hat}."""

    center: np.ndarray
    shape_matrix: np.ndarray
    q_hat: float
    ndim: int

    def contains(self, theta) -> bool:
        return mahalanobis_score(theta, self.center, self.shape_matrix) <= self.q_hat

    def interval(self) -> tuple[float, float]:
        """Endpoints for the one-dimensional case."""
        if self.ndim != 1:
            raise ValueError("interval endpoints only defined in one dimension")
        half = self.q_hat * math.sqrt(float(self.shape_matrix[0, 0]))
        c = float(self.center[0])
        return (c - half, c + half)

    def component_extent(self, j: int) -> float:
        """Length of the ellipsoid's projection onto component j."""
        return 2.0 * self.q_hat * math.sqrt(float(self.shape_matrix[j, j]))

    def boundary_points(self, n: int = 256) -> np.ndarray:
        """Points on the boundary (score exactly q_hat); 2-D ellipses are
        traced with a parametric angle, 1-D sets degenerate to endpoints."""
        if self.ndim == 1:
            lo, hi = self.interval()
            return np.array([[lo], [hi]])
        if self.ndim != 2:
            raise ValueError("boundary tracing implemented for 1-D and 2-D sets")
        low = np.linalg.cholesky(self.shape_matrix)
        t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        circle = np.stack([np.cos(t), np.sin(t)])
        return (self.center[:, None] + self.q_hat * (low @ circle)).T


def confidence_set(
    pred: DropoutPrediction,
    kind: UncertaintyKind,
    calibrator: ConformalCalibrator,
    ridge: float | None = None,
) -> ConfidenceSet:
    """Ellipsoid centered at the MC-dropout mean with the calibrated radius."""
    if calibrator.kind is not None and calibrator.kind is not kind:
        raise ValueError(
            f"calibrator built for {calibrator.kind.value} scores, requested {kind.value}"
        )
    v = uncertainty_matrix(pred, kind, ridge).matrix
    return ConfidenceSet(
        center=pred.mean, shape_matrix=v, q_hat=calibrator.q_hat, ndim=pred.mean.shape[0]
    )


def component_interval_scores(
    theta: np.ndarray, pred: DropoutPrediction, kind: UncertaintyKind, ridge: float | None = None
) -> np.ndarray:
    """Componentwise 1-D scores |theta_j - mean_j| / sqrt(V_jj)."""
    v = uncertainty_matrix(pred, kind, ridge).matrix
    return np.abs(np.asarray(theta, dtype=float) - pred.mean) / np.sqrt(np.diag(v))


def marginal_intervals(
    pred: DropoutPrediction,
    kind: UncertaintyKind,
    calibrators,
    ridge: float | None = None,
) -> np.ndarray:
    """Per-component intervals mean_j +/- q_j * sqrt(V_jj), shape (D, 2)."""
    v = uncertainty_matrix(pred, kind, ridge).matrix
    d = pred.mean.shape[0]
    if len(calibrators) != d:
        raise ValueError(f"need one calibrator per component ({d}), got {len(calibrators)}")
    out = np.empty((d, 2))
    for j, cal in enumerate(calibrators):
        half = cal.q_hat * math.sqrt(float(v[j, j]))
        out[j] = (pred.mean[j] - half, pred.mean[j] + half)
    return out


def coverage_bounds(n_cal: int, delta: float) -> tuple[float, float]:
    """Marginal coverage band [1-delta, 1-delta + 1/(N+1)] of the split
    conformal set under exchangeable continuous scores."""
    if n_cal < 1:
        raise ValueError("calibration size must be at least 1")
    return (1.0 - delta, 1.0 - delta + 1.0 / (n_cal + 1))
