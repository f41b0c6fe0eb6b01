"""Gaussian negative log-likelihood loss, reverse-mode gradients, Adam
and the seeded training loop with early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..seeding import derive_rng
from .network import (
    DivergenceError,
    NetworkSpec,
    TrainedModel,
    fit_input_transform,
    fit_target_standardization,
    forward_batch,
    init_params,
)

__all__ = ["TrainConfig", "TrainingDiverged", "loss_and_grad", "train"]


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    ``dropout_reg_weight`` scales the concrete-dropout regularizer: per
    dropout layer the loss gains
    ``w/N * ||W_next||^2 / (1-p) + 2w/N * n_in * (p log p + (1-p) log(1-p))``
    with N the training-set size, following the standard concrete-dropout
    construction.
    """

    epochs: int = 150
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dropout_temperature: float = 0.1
    dropout_reg_weight: float = 1e-6
    patience: int = 25

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch size and patience must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be nonnegative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps <= 0.0 or self.dropout_temperature <= 0.0:
            raise ValueError("eps and dropout temperature must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "dropout_temperature": self.dropout_temperature,
            "dropout_reg_weight": self.dropout_reg_weight,
            "patience": self.patience,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def _nll_and_head_grad(spec: NetworkSpec, out: np.ndarray, targets: np.ndarray):
    """Per-dimension Gaussian NLL, averaged over the batch.

    Heteroscedastic head: 0.5 * (log s2 + (t - m)^2 / s2) summed over
    dimensions.  Point head: unit variance, i.e. 0.5 * squared error.
    """
    b = out.shape[0]
    d = spec.output_dim
    if spec.head == "heteroscedastic":
        mean, logvar = out[:, :d], out[:, d:]
        inv_var = np.exp(-logvar)
        resid = mean - targets
        loss = 0.5 * np.sum(logvar + resid * resid * inv_var) / b
        dmean = resid * inv_var / b
        dlogvar = 0.5 * (1.0 - resid * resid * inv_var) / b
        dout = np.concatenate([dmean, dlogvar], axis=1)
    else:
        resid = out - targets
        loss = 0.5 * np.sum(resid * resid) / b
        dout = resid / b
    return loss, dout


def _dropout_regularizer(spec: NetworkSpec, params, layers, weight: float, n_train: int):
    """Concrete-dropout regularizer value and its parameter gradients."""
    if weight == 0.0:
        return 0.0, None
    wr = weight / n_train
    dr = 2.0 * weight / n_train
    reg = 0.0
    grads = {}
    for i in spec.dropout_indices():
        eta = float(params[i][0][0])
        p = 1.0 / (1.0 + math.exp(-eta))
        keep = 1.0 - p
        n_in = layers[i].in_features
        entropy = p * math.log(p) + keep * math.log(keep)
        reg += dr * n_in * entropy
        deta = dr * n_in * eta * p * keep
        j = spec.next_weighted_layer(i)
        if j is not None:
            w = params[j][0]
            sq = float(np.sum(w * w))
            reg += wr * sq / keep
            deta += wr * sq * p / keep
            grads[(j, 0)] = 2.0 * wr / keep * w
        grads[(i, 0)] = grads.get((i, 0), 0.0) + np.array([deta])
    return reg, grads


def loss_and_grad(
    spec: NetworkSpec,
    params,
    x: np.ndarray,
    targets_std: np.ndarray,
    *,
    rngs=None,
    temperature: float = 0.1,
    dropout_reg_weight: float = 0.0,
    n_train: int = 1,
):
    """Loss and per-parameter gradients for one preprocessed batch.

    ``targets_std`` are standardized parameter vectors (B, D).  ``rngs``
    selects dropout sampling exactly as in ``forward_batch``; passing the
    same generator state reproduces the same masks, which is what the
    finite-difference gradient checks rely on.
    """
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    out, layers, caches = forward_batch(
        spec, params, x, rngs=rngs, temperature=temperature, keep_cache=True
    )
    loss, dout = _nll_and_head_grad(spec, out, targets_std)
    reg, reg_grads = _dropout_regularizer(spec, params, layers, dropout_reg_weight, n_train)
    loss += reg
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    grads = [[np.zeros_like(p) for p in plist] for plist in params]
    grad = dout
    for i in range(len(layers) - 1, -1, -1):
        grad, pgrads = layers[i].backward(grad, params[i], caches[i])
        for j, g in enumerate(pgrads):
            grads[i][j] += g
    if reg_grads:
        for (i, j), g in reg_grads.items():
            grads[i][j] += g
    return loss, grads


def model_loss_and_grad(model: TrainedModel, batch, *, noise_seed: int | None = None):
    """Loss/gradients for a trained model on raw (x, theta) pairs.

    Inputs are preprocessed and targets standardized with the model's
    records; dropout masks are sampled from ``noise_seed`` when given,
    otherwise the pass is deterministic.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = np.stack([np.asarray(b[0], dtype=float) for b in batch])
    theta = np.stack([np.asarray(b[1], dtype=float) for b in batch])
    rngs = np.random.default_rng(noise_seed) if noise_seed is not None else None
    return loss_and_grad(
        model.spec,
        model.params,
        model.transform_inputs(x),
        model.standardize_targets(theta),
        rngs=rngs,
        temperature=model.dropout_temperature,
    )


class Adam:
    def __init__(self, params, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [[np.zeros_like(p) for p in plist] for plist in params]
        self.v = [[np.zeros_like(p) for p in plist] for plist in params]

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, plist in enumerate(params):
            for j, p in enumerate(plist):
                g = grads[i][j]
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * (g * g)
                m_hat = self.m[i][j] / bc1
                v_hat = self.v[i][j] / bc2
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _as_xy(dataset):
    """Accept (X, theta) arrays or any object with x/theta attributes."""
    if isinstance(dataset, tuple):
        x, theta = dataset
    else:
        x, theta = dataset.x, dataset.theta
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[0] != theta.shape[0]:
        raise ValueError("inputs and targets disagree on record count")
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    return x, theta


def train(spec: NetworkSpec, train_set, val_set, cfg: TrainConfig) -> TrainedModel:
    """Seeded minibatch Adam with early stopping on validation NLL.

    Target standardization and the input transform are fitted on the
    training set only.  The returned model carries the parameters of the
    epoch with the lowest validation loss.  Everything is deterministic
    given ``cfg.seed``.
    """
    x_train, theta_train = _as_xy(train_set)
    x_val, theta_val = _as_xy(val_set)
    n_train = x_train.shape[0]
    if x_train.shape[1:] != tuple(spec.input_shape):
        raise ValueError(
            f"training inputs have shape {x_train.shape[1:]}, spec wants {tuple(spec.input_shape)}"
        )

    t_shift, t_scale = fit_target_standardization(theta_train)
    in_shift, in_scale = fit_input_transform(spec.input_transform, x_train)
    model = TrainedModel(
        spec=spec,
        params=init_params(spec, derive_rng(cfg.seed, 0)),
        target_shift=t_shift,
        target_scale=t_scale,
        input_shift=in_shift,
        input_scale=in_scale,
        dropout_temperature=cfg.dropout_temperature,
    )
    xt = model.transform_inputs(x_train)
    yt = model.standardize_targets(theta_train)
    xv = model.transform_inputs(x_val)
    yv = model.standardize_targets(theta_val)

    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    best_loss = math.inf
    best_params = [[p.copy() for p in plist] for plist in model.params]
    best_epoch = -1
    epochs_run = 0
    last_train_loss = math.nan
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, 1, epoch).permutation(n_train)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rng = derive_rng(cfg.seed, 2, epoch, n_batches)
            try:
                loss, grads = loss_and_grad(
                    spec,
                    model.params,
                    xt[idx],
                    yt[idx],
                    rngs=rng,
                    temperature=cfg.dropout_temperature,
                    dropout_reg_weight=cfg.dropout_reg_weight,
                    n_train=n_train,
                )
            except DivergenceError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            opt.step(model.params, grads)
            epoch_loss += loss
            n_batches += 1
        last_train_loss = epoch_loss / n_batches
        epochs_run = epoch + 1
        val_out = forward_batch(spec, model.params, xv, temperature=cfg.dropout_temperature)
        val_loss, _ = _nll_and_head_grad(spec, val_out, yv)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = [[p.copy() for p in plist] for plist in model.params]
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience:
            break

    model.params = best_params
    model.metadata = {
        "seed": cfg.seed,
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "train_loss": float(last_train_loss),
        "val_loss": float(best_loss),
    }
    return model
