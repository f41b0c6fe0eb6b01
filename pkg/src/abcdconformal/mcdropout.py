"""Monte-Carlo dropout prediction and the uncertainty decomposition.

K stochastic forward passes give the posterior-mean estimate (their
average), the epistemic covariance (their unbiased sample covariance),
and the aleatoric variance (the average of the per-pass predicted
observation variances).  The overall uncertainty is the sum of the
epistemic matrix and the aleatoric diagonal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .nn.network import TrainedModel, _split_head, forward_batch
from .seeding import derive_rng, derive_uint64

__all__ = [
    "UncertaintyKind",
    "DropoutPrediction",
    "UncertaintyMatrix",
    "DegenerateUncertainty",
    "predict_mc",
    "predict_mc_batch",
    "uncertainty_matrix",
]


class UncertaintyKind(enum.Enum):
    EPISTEMIC = "epistemic"
    OVERALL = "overall"


@dataclass(frozen=True)
class DropoutPrediction:
    """Mean and uncertainty decomposition of K stochastic passes."""

    mean: np.ndarray           # (D,)
    epistemic_cov: np.ndarray  # (D, D)
    aleatoric_diag: np.ndarray  # (D,)
    n_passes: int

    def __post_init__(self):
        d = self.mean.shape[0]
        if self.epistemic_cov.shape != (d, d) or self.aleatoric_diag.shape != (d,):
            raise ValueError("inconsistent prediction shapes")
        if self.n_passes < 2:
            raise ValueError("a sample covariance needs at least two passes")
        if np.any(self.aleatoric_diag <= 0.0):
            raise ValueError("aleatoric variances must be positive")

    @property
    def overall_cov(self) -> np.ndarray:
        return self.epistemic_cov + np.diag(self.aleatoric_diag)

    def covariance(self, kind: UncertaintyKind) -> np.ndarray:
        return self.epistemic_cov if kind is UncertaintyKind.EPISTEMIC else self.overall_cov


class DegenerateUncertainty(np.linalg.LinAlgError):
    """Uncertainty matrix is not positive definite even after the ridge."""


@dataclass(frozen=True)
class UncertaintyMatrix:
    """Positive-definite uncertainty with a record of the applied ridge.

    ``degenerate`` marks matrices that needed the ridge to factor,
    which signals collapsed dropout or too few passes.
    """

    matrix: np.ndarray
    ridge: float
    degenerate: bool


def predict_mc(model: TrainedModel, x: np.ndarray, k: int, seed: int) -> DropoutPrediction:
    """K seeded stochastic passes through the network for one sample.

    Pass ``j`` draws its dropout masks from the generator derived from
    (seed, j), so the decomposition is reproducible pass by pass.
    """
    if k < 2:
        raise ValueError("need at least K=2 stochastic passes")
    if not model.has_dropout():
        raise ValueError("model has no dropout layers; epistemic variance undefined")
    x = np.asarray(x, dtype=float)
    if x.shape != tuple(model.spec.input_shape):
        raise ValueError(f"input shape {x.shape} != expected {tuple(model.spec.input_shape)}")
    xb = model.transform_inputs(np.broadcast_to(x, (k,) + x.shape).copy())
    rngs = [derive_rng(seed, j) for j in range(k)]
    out = forward_batch(
        model.spec, model.params, xb, rngs=rngs, temperature=model.dropout_temperature
    )
    mean_std, logvar_std = _split_head(model.spec, out)
    means = model.destandardize_targets(mean_std)          # (K, D)
    aleatorics = model.target_scale**2 * np.exp(logvar_std)  # (K, D)
    return _decompose(means, aleatorics)


def _decompose(means: np.ndarray, aleatorics: np.ndarray) -> DropoutPrediction:
    k = means.shape[0]
    mean = means.mean(axis=0)
    centered = means - mean
    epistemic = centered.T @ centered / (k - 1)
    epistemic = 0.5 * (epistemic + epistemic.T)
    return DropoutPrediction(
        mean=mean,
        epistemic_cov=epistemic,
        aleatoric_diag=aleatorics.mean(axis=0),
        n_passes=k,
    )


def predict_mc_batch(
    model: TrainedModel, xs: np.ndarray, k: int, master_seed: int, stage: int
) -> list[DropoutPrediction]:
    """MC-dropout over a dataset; record ``i`` uses seeds (master, stage, i, pass)."""
    preds = []
    for i in range(xs.shape[0]):
        preds.append(predict_mc(model, xs[i], k, derive_uint64(master_seed, stage, i)))
    return preds


def uncertainty_matrix(
    pred: DropoutPrediction, kind: UncertaintyKind, ridge: float | None = None
) -> UncertaintyMatrix:
    """Chosen covariance plus a stabilizing ridge, checked SPD by Cholesky.

    With ``ridge=None`` a relative default of 1e-9 * trace/D is applied
    before the factorization the conformal score needs.
    """
    raw = pred.covariance(kind)
    d = raw.shape[0]
    if ridge is None:
        ridge = 1e-9 * float(np.trace(raw)) / d
    elif ridge < 0.0:
        raise ValueError("ridge must be nonnegative")
    degenerate = False
    try:
        np.linalg.cholesky(raw)
    except np.linalg.LinAlgError:
        degenerate = True
    matrix = raw + ridge * np.eye(d)
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise DegenerateUncertainty(
            f"{kind.value} uncertainty not positive definite even with ridge {ridge}"
        ) from exc
    return UncertaintyMatrix(matrix=matrix, ridge=float(ridge), degenerate=degenerate)
