"""Layer kinds of the network engine.

Each layer implements ``forward`` returning (output, cache) and
``backward`` mapping the upstream gradient plus cache to the input
gradient and per-parameter gradients.  All activations are float64
batches with the sample axis first: dense features are ``(B, F)``,
1-D feature maps ``(B, C, L)``, 2-D feature maps ``(B, C, H, W)``.
Convolutions use valid padding with stride 1; max-pooling uses
non-overlapping windows and drops the remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LayerSpec",
    "dense",
    "conv1d",
    "conv2d",
    "maxpool",
    "flatten",
    "concrete_dropout",
    "activation",
    "concrete_dropout_mask",
    "build_layer",
]

_KINDS = ("dense", "conv1d", "conv2d", "maxpool", "flatten", "concrete_dropout", "activation")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer."""

    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 0
    pool: int = 2
    activation: str = ""
    init_p: float = 0.1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense layer needs units >= 1")
        if self.kind in ("conv1d", "conv2d"):
            if self.filters < 1:
                raise ValueError("convolution needs filters >= 1")
            if self.kernel < 1:
                raise ValueError("convolution needs kernel size >= 1")
        if self.kind == "maxpool" and self.pool < 1:
            raise ValueError("pool window must be >= 1")
        if self.kind == "activation" and self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.kind == "concrete_dropout" and not 0.0 < self.init_p < 1.0:
            raise ValueError("initial dropout probability must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "units": self.units,
            "filters": self.filters,
            "kernel": self.kernel,
            "pool": self.pool,
            "activation": self.activation,
            "init_p": self.init_p,
        }

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def conv1d(filters: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv1d", filters=filters, kernel=kernel)


def conv2d(filters: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv2d", filters=filters, kernel=kernel)


def maxpool(window: int = 2) -> LayerSpec:
    return LayerSpec("maxpool", pool=window)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def concrete_dropout(init_p: float = 0.1) -> LayerSpec:
    return LayerSpec("concrete_dropout", init_p=init_p)


def activation(name: str) -> LayerSpec:
    return LayerSpec("activation", activation=name)


def concrete_dropout_mask(p, temperature, u):
    """Relaxed dropout keep-mask in (0, 1).

    ``sigmoid((logit(p) + logit(u)) / temperature)`` is a continuous
    relaxation of a Bernoulli(p) drop indicator; the keep-mask is its
    complement.  Differentiable in logit(p), exact Bernoulli in the
    temperature -> 0 limit.
    """
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("dropout probability must lie strictly in (0, 1)")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniform draws must lie strictly in (0, 1)")
    logit_p = np.log(p) - np.log1p(-p)
    drop = _sigmoid((logit_p + np.log(u) - np.log1p(-u)) / temperature)
    return 1.0 - drop


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    def __init__(self, spec: LayerSpec, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"dense layer expects flat input, got shape {in_shape}")
        self.in_features = in_shape[0]
        self.units = spec.units
        self.out_shape = (spec.units,)
        self.param_shapes = [(self.in_features, self.units), (self.units,)]

    def forward(self, x, params):
        w, b = params
        return x @ w + b, x

    def backward(self, grad, params, cache):
        w, _ = params
        x = cache
        dw = x.T @ grad
        db = grad.sum(axis=0)
        return grad @ w.T, [dw, db]


class Conv1d:
    def __init__(self, spec: LayerSpec, in_shape):
        if len(in_shape) != 2:
            raise ValueError(f"conv1d expects (channels, length) input, got {in_shape}")
        c, length = in_shape
        if length < spec.kernel:
            raise ValueError(f"input length {length} shorter than kernel {spec.kernel}")
        self.kernel = spec.kernel
        self.filters = spec.filters
        self.in_channels = c
        self.out_len = length - spec.kernel + 1
        self.out_shape = (spec.filters, self.out_len)
        self.param_shapes = [(spec.filters, c, spec.kernel), (spec.filters,)]

    def forward(self, x, params):
        w, b = params
        lo = self.out_len
        y = np.zeros((x.shape[0], self.filters, lo))
        for dk in range(self.kernel):
            y += np.einsum("fc,bcl->bfl", w[:, :, dk], x[:, :, dk : dk + lo])
        y += b[None, :, None]
        return y, x

    def backward(self, grad, params, cache):
        w, _ = params
        x = cache
        lo = self.out_len
        dx = np.zeros_like(x)
        dw = np.zeros_like(w)
        for dk in range(self.kernel):
            dx[:, :, dk : dk + lo] += np.einsum("fc,bfl->bcl", w[:, :, dk], grad)
            dw[:, :, dk] = np.einsum("bfl,bcl->fc", grad, x[:, :, dk : dk + lo])
        db = grad.sum(axis=(0, 2))
        return dx, [dw, db]


class Conv2d:
    def __init__(self, spec: LayerSpec, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d expects (channels, height, width) input, got {in_shape}")
        c, h, w = in_shape
        if h < spec.kernel or w < spec.kernel:
            raise ValueError(f"input {h}x{w} smaller than kernel {spec.kernel}")
        self.kernel = spec.kernel
        self.filters = spec.filters
        self.out_h = h - spec.kernel + 1
        self.out_w = w - spec.kernel + 1
        self.out_shape = (spec.filters, self.out_h, self.out_w)
        self.param_shapes = [(spec.filters, c, spec.kernel, spec.kernel), (spec.filters,)]

    def forward(self, x, params):
        w, b = params
        oh, ow = self.out_h, self.out_w
        y = np.zeros((x.shape[0], self.filters, oh, ow))
        for di in range(self.kernel):
            for dj in range(self.kernel):
                y += np.einsum("fc,bchw->bfhw", w[:, :, di, dj], x[:, :, di : di + oh, dj : dj + ow])
        y += b[None, :, None, None]
        return y, x

    def backward(self, grad, params, cache):
        w, _ = params
        x = cache
        oh, ow = self.out_h, self.out_w
        dx = np.zeros_like(x)
        dw = np.zeros_like(w)
        for di in range(self.kernel):
            for dj in range(self.kernel):
                dx[:, :, di : di + oh, dj : dj + ow] += np.einsum("fc,bfhw->bchw", w[:, :, di, dj], grad)
                dw[:, :, di, dj] = np.einsum("bfhw,bchw->fc", grad, x[:, :, di : di + oh, dj : dj + ow])
        db = grad.sum(axis=(0, 2, 3))
        return dx, [dw, db]


class MaxPool:
    """Non-overlapping max pooling over the trailing spatial axes."""

    def __init__(self, spec: LayerSpec, in_shape):
        self.window = spec.pool
        if len(in_shape) == 2:
            c, length = in_shape
            self.mode = "1d"
            self.out_l = length // self.window
            if self.out_l < 1:
                raise ValueError("pool window larger than input")
            self.out_shape = (c, self.out_l)
        elif len(in_shape) == 3:
            c, h, w = in_shape
            self.mode = "2d"
            self.out_h, self.out_w = h // self.window, w // self.window
            if self.out_h < 1 or self.out_w < 1:
                raise ValueError("pool window larger than input")
            self.out_shape = (c, self.out_h, self.out_w)
        else:
            raise ValueError(f"maxpool expects a 1-D or 2-D feature map, got {in_shape}")
        self.param_shapes = []

    def forward(self, x, params):
        w = self.window
        if self.mode == "1d":
            b, c, _ = x.shape
            windows = x[:, :, : self.out_l * w].reshape(b, c, self.out_l, w)
            idx = windows.argmax(axis=-1)
            y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        else:
            b, c, _, _ = x.shape
            windows = (
                x[:, :, : self.out_h * w, : self.out_w * w]
                .reshape(b, c, self.out_h, w, self.out_w, w)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(b, c, self.out_h, self.out_w, w * w)
            )
            idx = windows.argmax(axis=-1)
            y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, grad, params, cache):
        in_shape, idx = cache
        w = self.window
        dx = np.zeros(in_shape)
        if self.mode == "1d":
            b, c, _ = in_shape
            dwin = np.zeros((b, c, self.out_l, w))
            np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
            dx[:, :, : self.out_l * w] = dwin.reshape(b, c, self.out_l * w)
        else:
            b, c, _, _ = in_shape
            dwin = np.zeros((b, c, self.out_h, self.out_w, w * w))
            np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
            dwin = dwin.reshape(b, c, self.out_h, self.out_w, w, w).transpose(0, 1, 2, 4, 3, 5)
            dx[:, :, : self.out_h * w, : self.out_w * w] = dwin.reshape(
                b, c, self.out_h * w, self.out_w * w
            )
        return dx, []


class Flatten:
    def __init__(self, spec: LayerSpec, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (int(np.prod(in_shape)),)
        self.param_shapes = []

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), None

    def backward(self, grad, params, cache):
        return grad.reshape((grad.shape[0],) + self.in_shape), []


class Activation:
    def __init__(self, spec: LayerSpec, in_shape):
        self.name = spec.activation
        self.out_shape = tuple(in_shape)
        self.param_shapes = []

    def forward(self, x, params):
        if self.name == "relu":
            y = np.maximum(x, 0.0)
            return y, x
        y = np.tanh(x)
        return y, y

    def backward(self, grad, params, cache):
        if self.name == "relu":
            return grad * (cache > 0.0), []
        return grad * (1.0 - cache * cache), []


class ConcreteDropout:
    """Concrete-dropout scaling with a trainable drop-probability logit.

    Stochastic mode multiplies the input by a relaxed keep-mask divided
    by the keep rate (inverted dropout); deterministic mode is the
    identity, which is the expectation of that scaling.  The logit is
    the layer's single parameter so the drop rate is learned jointly
    with the weights.
    """

    def __init__(self, spec: LayerSpec, in_shape):
        self.out_shape = tuple(in_shape)
        self.in_features = int(np.prod(in_shape))
        self.init_p = spec.init_p
        self.param_shapes = [(1,)]
        self.temperature = 0.1  # overwritten by the training config

    def init_logit(self) -> np.ndarray:
        return np.array([math.log(self.init_p) - math.log1p(-self.init_p)])

    def forward(self, x, params, rngs=None):
        if rngs is None:
            return x, None
        eta = params[0][0]
        p = 1.0 / (1.0 + math.exp(-eta))
        if isinstance(rngs, np.random.Generator):
            u = rngs.random(x.shape)
        else:
            u = np.stack([r.random(x.shape[1:]) for r in rngs])
        # clip keeps logits finite for u returned exactly 0 by the rng
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        drop = _sigmoid((eta + np.log(u) - np.log1p(-u)) / self.temperature)
        mask = 1.0 - drop
        y = x * mask / (1.0 - p)
        return y, (x, drop, p)

    def backward(self, grad, params, cache):
        if cache is None:
            return grad, [np.zeros(1)]
        x, drop, p = cache
        keep = 1.0 - p
        mask = 1.0 - drop
        dx = grad * mask / keep
        # d mask/d eta = -z(1-z)/t; d keep^-1/d eta = p/keep
        dmask_deta = -drop * (1.0 - drop) / self.temperature
        dy_deta = x * (dmask_deta + mask * p) / keep
        deta = float(np.sum(grad * dy_deta))
        return dx, [np.array([deta])]


_BUILDERS = {
    "dense": Dense,
    "conv1d": Conv1d,
    "conv2d": Conv2d,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "activation": Activation,
    "concrete_dropout": ConcreteDropout,
}


def build_layer(spec: LayerSpec, in_shape):
    return _BUILDERS[spec.kind](spec, in_shape)
