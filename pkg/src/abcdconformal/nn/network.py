"""Network description, initialization, forward passes and checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import ndio
from .layers import LayerSpec, build_layer

__all__ = [
    "NetworkSpec",
    "TrainedModel",
    "ShapeError",
    "DivergenceError",
    "init_params",
    "forward",
    "forward_batch",
    "save_model",
    "load_model",
]

_INPUT_TRANSFORMS = ("none", "standardize", "log1p-standardize")


class ShapeError(ValueError):
    """Input or weight shapes do not match the network description."""


class DivergenceError(FloatingPointError):
    """A forward pass or loss produced a non-finite value."""


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus the input/output contract.

    ``output_dim`` is the parameter dimension D.  A heteroscedastic head
    emits 2D values (D means followed by D log-variances of the
    per-dimension observation noise); a point head emits D means.  The
    final layer must be a dense layer of exactly that width.
    ``input_transform`` names the preprocessing fitted on the training
    inputs and stored with the trained model.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    output_dim: int
    head: str = "heteroscedastic"
    input_transform: str = "none"

    def __post_init__(self):
        if self.head not in ("heteroscedastic", "point"):
            raise ValueError(f"unknown head kind {self.head!r}")
        if self.input_transform not in _INPUT_TRANSFORMS:
            raise ValueError(f"unknown input transform {self.input_transform!r}")
        if self.output_dim < 1:
            raise ValueError("output dimension must be >= 1")
        if not self.layers or self.layers[-1].kind != "dense":
            raise ValueError("network must end with a dense output layer")
        if self.layers[-1].units != self.head_width:
            raise ValueError(
                f"output layer has {self.layers[-1].units} units, head needs {self.head_width}"
            )
        self.build()  # validates the shape chain

    @property
    def head_width(self) -> int:
        return 2 * self.output_dim if self.head == "heteroscedastic" else self.output_dim

    def build(self):
        """Instantiate layer objects, chaining shapes from the input."""
        shape = tuple(self.input_shape)
        built = []
        for i, spec in enumerate(self.layers):
            try:
                layer = build_layer(spec, shape)
            except ValueError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from exc
            built.append(layer)
            shape = layer.out_shape
        if shape != (self.head_width,):
            raise ShapeError(f"network output shape {shape} != ({self.head_width},)")
        return built

    def dropout_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.kind == "concrete_dropout"]

    def next_weighted_layer(self, index: int) -> int | None:
        """Index of the first dense/conv layer after ``index`` (for the
        concrete-dropout weight regularizer)."""
        for j in range(index + 1, len(self.layers)):
            if self.layers[j].kind in ("dense", "conv1d", "conv2d"):
                return j
        return None

    def to_dict(self) -> dict:
        return {
            "layers": [s.to_dict() for s in self.layers],
            "input_shape": list(self.input_shape),
            "output_dim": self.output_dim,
            "head": self.head,
            "input_transform": self.input_transform,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            layers=tuple(LayerSpec.from_dict(s) for s in d["layers"]),
            input_shape=tuple(d["input_shape"]),
            output_dim=int(d["output_dim"]),
            head=d["head"],
            input_transform=d.get("input_transform", "none"),
        )


def _activation_after(spec: NetworkSpec, index: int) -> str:
    """Activation tag governing the init of the weighted layer at index."""
    for j in range(index + 1, len(spec.layers)):
        kind = spec.layers[j].kind
        if kind == "activation":
            return spec.layers[j].activation
        if kind in ("dense", "conv1d", "conv2d"):
            break
    return ""


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> list[list[np.ndarray]]:
    """He-uniform before relu, Glorot-uniform otherwise; zero biases."""
    layers = spec.build()
    params = []
    for i, (lspec, layer) in enumerate(zip(spec.layers, layers)):
        if lspec.kind == "dense":
            fan_in, fan_out = layer.in_features, layer.units
        elif lspec.kind == "conv1d":
            fan_in = layer.in_channels * layer.kernel
            fan_out = layer.filters * layer.kernel
        elif lspec.kind == "conv2d":
            w_shape = layer.param_shapes[0]
            fan_in = w_shape[1] * layer.kernel * layer.kernel
            fan_out = layer.filters * layer.kernel * layer.kernel
        elif lspec.kind == "concrete_dropout":
            params.append([layer.init_logit()])
            continue
        else:
            params.append([])
            continue
        if _activation_after(spec, i) == "relu":
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=layer.param_shapes[0])
        b = np.zeros(layer.param_shapes[1])
        params.append([w, b])
    return params


@dataclass
class TrainedModel:
    """Immutable after training; shareable across threads for prediction."""

    spec: NetworkSpec
    params: list[list[np.ndarray]]
    target_shift: np.ndarray
    target_scale: np.ndarray
    input_shift: np.ndarray
    input_scale: np.ndarray
    dropout_temperature: float = 0.1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.target_scale <= 0.0):
            raise ValueError("target standardization scale must be positive")
        for i, p in enumerate(self.dropout_probs()):
            if not 0.0 < p < 1.0:
                raise ValueError(f"dropout probability {p} of layer {i} outside (0, 1)")

    def dropout_probs(self) -> list[float]:
        probs = []
        for i in self.spec.dropout_indices():
            eta = float(self.params[i][0][0])
            probs.append(1.0 / (1.0 + math.exp(-eta)))
        return probs

    def has_dropout(self) -> bool:
        return bool(self.spec.dropout_indices())

    def standardize_targets(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.target_shift) / self.target_scale

    def destandardize_targets(self, z: np.ndarray) -> np.ndarray:
        return self.target_shift + self.target_scale * z

    def transform_inputs(self, x: np.ndarray) -> np.ndarray:
        kind = self.spec.input_transform
        if kind == "none":
            return x
        if kind == "log1p-standardize":
            x = np.log1p(x)
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        return (x - self.input_shift.reshape(bshape)) / self.input_scale.reshape(bshape)


def fit_input_transform(kind: str, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel shift/scale for the given transform, fitted on x (N, C, ...)."""
    n_channels = x.shape[1]
    if kind == "none":
        return np.zeros(n_channels), np.ones(n_channels)
    if kind == "log1p-standardize":
        x = np.log1p(x)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    shift = x.mean(axis=axes)
    scale = x.std(axis=axes)
    scale = np.where(scale > 0.0, scale, 1.0)
    return shift, scale


def fit_target_standardization(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = theta.mean(axis=0)
    scale = theta.std(axis=0)
    if np.any(scale <= 0.0):
        raise ValueError("constant training target; cannot standardize")
    return shift, scale


def forward_batch(
    spec: NetworkSpec,
    params,
    x: np.ndarray,
    *,
    rngs=None,
    temperature: float = 0.1,
    keep_cache: bool = False,
):
    """Run the raw network on a batch (inputs already preprocessed).

    ``rngs`` is None for deterministic mode, a Generator for shared
    batch sampling (training), or a sequence of per-row Generators
    (Monte-Carlo passes).  Returns the head outputs ``(B, head_width)``
    and, when requested, the layer caches for backprop.
    """
    layers = spec.build()
    caches = [] if keep_cache else None
    out = x
    for i, layer in enumerate(layers):
        if spec.layers[i].kind == "concrete_dropout":
            layer.temperature = temperature
            out, cache = layer.forward(out, params[i], rngs=rngs)
        else:
            out, cache = layer.forward(out, params[i])
        if keep_cache:
            caches.append(cache)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite activation in forward pass")
    return (out, layers, caches) if keep_cache else out


def _split_head(spec: NetworkSpec, out: np.ndarray):
    d = spec.output_dim
    if spec.head == "heteroscedastic":
        return out[:, :d], out[:, d:]
    return out, np.zeros_like(out)


def forward(
    model: TrainedModel,
    x: np.ndarray,
    mode: str = "deterministic",
    noise_seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One sample through the network, de-standardized.

    Returns (mean, aleatoric_diag) in original parameter units.
    ``mode`` is "deterministic" (dropout replaced by its expectation) or
    "stochastic" (one concrete-dropout mask per dropout layer, sampled
    from ``noise_seed``).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != tuple(model.spec.input_shape):
        raise ShapeError(f"input shape {x.shape} != expected {tuple(model.spec.input_shape)}")
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"unknown forward mode {mode!r}")
    rngs = None
    if mode == "stochastic":
        if noise_seed is None:
            raise ValueError("stochastic mode requires a noise seed")
        rngs = [np.random.default_rng(noise_seed)]
    xb = model.transform_inputs(x[None, ...])
    out = forward_batch(
        model.spec, model.params, xb, rngs=rngs, temperature=model.dropout_temperature
    )
    mean_std, logvar_std = _split_head(model.spec, out)
    mean = model.destandardize_targets(mean_std[0])
    aleatoric = model.target_scale**2 * np.exp(logvar_std[0])
    return mean, aleatoric


def predict_mean_batch(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    """Deterministic de-standardized mean predictions for a batch (N, ...)."""
    xb = model.transform_inputs(np.asarray(x, dtype=float))
    out = forward_batch(model.spec, model.params, xb, temperature=model.dropout_temperature)
    mean_std, _ = _split_head(model.spec, out)
    return model.destandardize_targets(mean_std)


CHECKPOINT_VERSION = 1


def save_model(path: str | Path, model: TrainedModel, *, extra_header: dict | None = None) -> None:
    header = {
        "kind": "model",
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "dropout_temperature": model.dropout_temperature,
        "metadata": model.metadata,
    }
    if extra_header:
        header.update(extra_header)
    arrays = {
        "target_shift": model.target_shift,
        "target_scale": model.target_scale,
        "input_shift": model.input_shift,
        "input_scale": model.input_scale,
    }
    for i, plist in enumerate(model.params):
        for j, arr in enumerate(plist):
            arrays[f"L{i:03d}P{j}"] = arr
    ndio.write_arrays(path, header, arrays)


def load_model(path: str | Path) -> TrainedModel:
    header, arrays = ndio.read_arrays(path)
    if header.get("kind") != "model":
        raise ndio.FormatError(f"{path}: not a model checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ndio.FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    spec = NetworkSpec.from_dict(header["spec"])
    layers = spec.build()
    params = []
    for i, layer in enumerate(layers):
        plist = []
        for j, shape in enumerate(layer.param_shapes):
            arr = arrays[f"L{i:03d}P{j}"]
            if arr.shape != tuple(shape):
                raise ndio.FormatError(f"{path}: weight L{i}P{j} has shape {arr.shape}, expected {shape}")
            plist.append(arr)
        params.append(plist)
    return TrainedModel(
        spec=spec,
        params=params,
        target_shift=arrays["target_shift"],
        target_scale=arrays["target_scale"],
        input_shift=arrays["input_shift"],
        input_scale=arrays["input_scale"],
        dropout_temperature=header["dropout_temperature"],
        metadata=header.get("metadata", {}),
    )
