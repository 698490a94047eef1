"""Small differentiable models with exact gradients and Jacobians.

Parameters of every model live in one flat float64 vector. The layout is
layer-major; inside a layer the weight block (row-major) comes before the
bias block. Dense weights have shape ``(out, in)``, convolution weights
``(out_channels, in_channels, k, k)``.

All derivatives are computed by hand-written reverse-mode sweeps. Input and
parameter Jacobians use one sweep per output logit, which is cheap because the
number of classes is small compared to the input and parameter dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("ce", "mse")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    # relu'(0) := 0
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


@dataclass(frozen=True)
class Dense:
    """Fully connected layer ``act(W a + b)``."""

    n_in: int
    n_out: int
    activation: str = "relu"
    bias: bool = True

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("dense layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_size(self) -> int:
        return self.n_in

    @property
    def out_size(self) -> int:
        return self.n_out

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.n_out, self.n_in)

    @property
    def bias_size(self) -> int:
        return self.n_out if self.bias else 0

    @property
    def param_count(self) -> int:
        return self.n_in * self.n_out + self.bias_size

    def fan_in(self) -> int:
        return self.n_in

    def forward(self, w, b, a):
        z = a @ w.T
        if b is not None:
            z = z + b
        return _act(self.activation, z), (a, z)

    def backward(self, w, g_out, cache, per_sample):
        a, z = cache
        gz = g_out * _act_grad(self.activation, z)
        g_in = gz @ w
        if per_sample:
            gw = np.einsum("bo,bi->boi", gz, a).reshape(len(a), -1)
            gb = gz if self.bias else None
        else:
            gw = (gz.T @ a).ravel()
            gb = gz.sum(axis=0) if self.bias else None
        return g_in, gw, gb

    def to_dict(self) -> dict:
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "activation": self.activation, "bias": self.bias}


@dataclass(frozen=True)
class ConvPool:
    """Valid 2-D convolution (stride 1), activation, then average pooling.

    Inputs are flat vectors holding a ``(C, H, W)`` image in C order; pooling
    windows are non-overlapping and trailing rows/columns that do not fill a
    full window are dropped.
    """

    in_shape: tuple[int, int, int]
    channels: int
    kernel: int = 3
    activation: str = "relu"
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(s) for s in self.in_shape))
        c, h, w = self.in_shape
        if min(c, h, w, self.channels, self.kernel, self.pool) < 1:
            raise ValueError("conv sizes must be positive")
        if self.kernel > min(h, w):
            raise ValueError("kernel larger than the image")
        if self.conv_hw[0] < self.pool or self.conv_hw[1] < self.pool:
            raise ValueError("pooling window larger than the conv output")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def conv_hw(self) -> tuple[int, int]:
        _, h, w = self.in_shape
        return h - self.kernel + 1, w - self.kernel + 1

    @property
    def pooled_hw(self) -> tuple[int, int]:
        ho, wo = self.conv_hw
        return ho // self.pool, wo // self.pool

    @property
    def in_size(self) -> int:
        c, h, w = self.in_shape
        return c * h * w

    @property
    def out_size(self) -> int:
        hp, wp = self.pooled_hw
        return self.channels * hp * wp

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.channels, self.in_shape[0], self.kernel, self.kernel)

    @property
    def bias_size(self) -> int:
        return self.channels

    @property
    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + self.channels

    def fan_in(self) -> int:
        return self.in_shape[0] * self.kernel * self.kernel

    def _cols(self, x):
        k = self.kernel
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        bsz, c, ho, wo = win.shape[:4]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, ho * wo, c * k * k)

    def forward(self, w, b, a):
        bsz = a.shape[0]
        x = a.reshape(bsz, *self.in_shape)
        cols = self._cols(x)
        wm = w.reshape(self.channels, -1)
        z = cols @ wm.T + b  # (B, L, O)
        ho, wo = self.conv_hw
        hp, wp = self.pooled_hw
        p = self.pool
        h = _act(self.activation, z)
        h = h.transpose(0, 2, 1).reshape(bsz, self.channels, ho, wo)
        h = h[:, :, : hp * p, : wp * p].reshape(bsz, self.channels, hp, p, wp, p)
        out = h.mean(axis=(3, 5)).reshape(bsz, -1)
        return out, (cols, z)

    def backward(self, w, g_out, cache, per_sample):
        cols, z = cache
        bsz = g_out.shape[0]
        ho, wo = self.conv_hw
        hp, wp = self.pooled_hw
        p, k, o = self.pool, self.kernel, self.channels
        c = self.in_shape[0]
        g = g_out.reshape(bsz, o, hp, 1, wp, 1) / (p * p)
        g = np.broadcast_to(g, (bsz, o, hp, p, wp, p)).reshape(bsz, o, hp * p, wp * p)
        gh = np.zeros((bsz, o, ho, wo))
        gh[:, :, : hp * p, : wp * p] = g
        gh = gh.reshape(bsz, o, ho * wo).transpose(0, 2, 1)  # (B, L, O)
        gz = gh * _act_grad(self.activation, z)
        if per_sample:
            gw = np.einsum("blo,blk->bok", gz, cols).reshape(bsz, -1)
            gb = gz.sum(axis=1)
        else:
            gw = np.einsum("blo,blk->ok", gz, cols).ravel()
            gb = gz.sum(axis=(0, 1))
        gcols = (gz @ w.reshape(o, -1)).reshape(bsz, ho, wo, c, k, k)
        gx = np.zeros((bsz, *self.in_shape))
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gx.reshape(bsz, -1), gw, gb

    def to_dict(self) -> dict:
        return {"type": "conv", "in_shape": list(self.in_shape), "channels": self.channels,
                "kernel": self.kernel, "activation": self.activation, "pool": self.pool}


Layer = Union[Dense, ConvPool]


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("type")
    if kind == "dense":
        return Dense(**d)
    if kind == "conv":
        d["in_shape"] = tuple(d["in_shape"])
        return ConvPool(**d)
    raise ValueError(f"unknown layer type {kind!r}")


@dataclass(frozen=True)
class Model:
    """An immutable stack of layers mapping R^n to R^c."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("a model needs at least one layer")
        conv = [l for l in layers if isinstance(l, ConvPool)]
        if len(conv) > 1 or (conv and not isinstance(layers[0], ConvPool)):
            raise ValueError("at most one conv block, and only as the first layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_size != nxt.in_size:
                raise ValueError(
                    f"layer size mismatch: {prev.out_size} -> {nxt.in_size}")

    @classmethod
    def mlp(cls, n_in: int, hidden: Sequence[int], n_out: int,
            activation: str = "relu", bias: bool = True) -> "Model":
        sizes = [n_in, *hidden, n_out]
        layers = []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(Dense(a, b, "identity" if last else activation, bias))
        return cls(tuple(layers))

    @classmethod
    def linear(cls, n_in: int, n_out: int = 1, bias: bool = True) -> "Model":
        return cls((Dense(n_in, n_out, "identity", bias),))

    @classmethod
    def convnet(cls, image_shape: Sequence[int], channels: int, hidden: Sequence[int],
                n_out: int, kernel: int = 3, activation: str = "relu") -> "Model":
        conv = ConvPool(tuple(image_shape), channels, kernel, activation)
        rest = cls.mlp(conv.out_size, hidden, n_out, activation).layers
        return cls((conv, *rest))

    @property
    def n_inputs(self) -> int:
        return self.layers[0].in_size

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].out_size

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Split a flat parameter vector into per-layer ``(weight, bias)`` views."""
        params = np.asarray(params)
        if params.shape != (self.param_count,):
            raise ValueError(
                f"expected {self.param_count} parameters, got shape {params.shape}")
        out, i = [], 0
        for layer in self.layers:
            nw = int(np.prod(layer.weight_shape))
            w = params[i:i + nw].reshape(layer.weight_shape)
            i += nw
            b = None
            if layer.bias_size:
                b = params[i:i + layer.bias_size]
                i += layer.bias_size
            out.append((w, b))
        return out

    def flatten(self, blocks) -> np.ndarray:
        parts = []
        for layer, (w, b) in zip(self.layers, blocks, strict=True):
            parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
            if layer.bias_size:
                parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
        flat = np.concatenate(parts)
        if flat.shape != (self.param_count,):
            raise ValueError("blocks do not match the architecture")
        return flat

    def init_params(self, seed: int = 0) -> np.ndarray:
        """He-style (relu) or Glorot-style (otherwise) normal init, zero biases."""
        rng = np.random.default_rng(seed)
        blocks = []
        for layer in self.layers:
            gain = 2.0 if layer.activation == "relu" else 1.0
            std = np.sqrt(gain / layer.fan_in())
            w = rng.normal(0.0, std, size=layer.weight_shape)
            b = np.zeros(layer.bias_size) if layer.bias_size else None
            blocks.append((w, b))
        return self.flatten(blocks)

    def to_dict(self) -> dict:
        return {"layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        return cls(tuple(layer_from_dict(l) for l in d["layers"]))


def _check_params(model: Model, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (model.param_count,):
        raise ValueError(
            f"expected {model.param_count} parameters, got shape {params.shape}")
    return params


def _check_inputs(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs of length {model.n_inputs}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise ValueError("non-finite input")
    return x2, single


def _forward_cache(model: Model, params: np.ndarray, x: np.ndarray):
    blocks = model.unflatten(params)
    caches = []
    a = x
    for layer, (w, b) in zip(model.layers, blocks):
        a, cache = layer.forward(w, b, a)
        caches.append(cache)
    return a, caches, blocks


def _backward(model: Model, blocks, caches, g: np.ndarray, per_sample: bool):
    """Propagate output cotangents ``g`` (B, c); returns (input grads, param grads)."""
    pieces = []
    for layer, (w, _), cache in zip(reversed(model.layers), reversed(blocks), reversed(caches)):
        g, gw, gb = layer.backward(w, g, cache, per_sample)
        pieces.append((gw, gb))
    flat = []
    for gw, gb in reversed(pieces):
        flat.append(gw)
        if gb is not None:
            flat.append(gb)
    return g, np.concatenate(flat, axis=-1)


def forward(model: Model, params, x) -> np.ndarray:
    """Logits for one input ``(n,)`` or a batch ``(B, n)``."""
    params = _check_params(model, params)
    x2, single = _check_inputs(model, x)
    out, _, _ = _forward_cache(model, params, x2)
    return out[0] if single else out


def _onehot(y, c: int, batch: int) -> np.ndarray:
    """Integer labels become one-hot rows; float arrays are taken as targets."""
    y = np.asarray(y)
    if np.issubdtype(y.dtype, np.integer) or y.dtype == bool:
        labels = np.atleast_1d(y).astype(np.int64)
        if labels.shape != (batch,):
            raise ValueError("label count does not match the batch")
        if np.any(labels < 0) or np.any(labels >= c):
            raise ValueError(f"class label out of range [0, {c})")
        out = np.zeros((batch, c))
        out[np.arange(batch), labels] = 1.0
        return out
    t = np.asarray(y, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != (batch, c):
        raise ValueError(f"target shape {y.shape} does not match {(batch, c)}")
    return t


def per_sample_loss(logits, y, kind: str = "ce") -> np.ndarray:
    """Loss of each row of ``logits`` (B, c) against labels or targets."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    b, c = logits.shape
    t = _onehot(y, c, b)
    if kind == "ce":
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -(t * logsm).sum(axis=1)
    if kind == "mse":
        return ((logits - t) ** 2).mean(axis=1)
    raise ValueError(f"unknown loss {kind!r}")


def loss(logits, y, kind: str = "ce") -> float:
    """Mean cross-entropy (softmax) or mean squared error over the batch."""
    return float(per_sample_loss(logits, y, kind).mean())


def loss_grad_logits(logits: np.ndarray, y, kind: str = "ce") -> np.ndarray:
    """Gradient of per-sample loss with respect to each row of logits."""
    logits = np.atleast_2d(logits)
    b, c = logits.shape
    t = _onehot(y, c, b)
    if kind == "ce":
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        return p - t
    if kind == "mse":
        return 2.0 * (logits - t) / c
    raise ValueError(f"unknown loss {kind!r}")


def risk(model: Model, params, x, y, kind: str = "ce") -> float:
    """Empirical risk: mean loss over the batch."""
    return loss(forward(model, params, x), y, kind)


def grad_params(model: Model, params, x, y, kind: str = "ce") -> np.ndarray:
    """Gradient of the mean loss over a batch with respect to the flat parameters."""
    params = _check_params(model, params)
    x2, _ = _check_inputs(model, x)
    if len(x2) == 0:
        raise ValueError("empty batch")
    out, caches, blocks = _forward_cache(model, params, x2)
    g = loss_grad_logits(out, y, kind) / len(x2)
    _, gp = _backward(model, blocks, caches, g, per_sample=False)
    return gp


def risk_and_grad(model: Model, params, x, y, kind: str = "ce") -> tuple[float, np.ndarray]:
    params = _check_params(model, params)
    x2, _ = _check_inputs(model, x)
    out, caches, blocks = _forward_cache(model, params, x2)
    value = loss(out, y, kind)
    g = loss_grad_logits(out, y, kind) / len(x2)
    _, gp = _backward(model, blocks, caches, g, per_sample=False)
    return value, gp


def grad_inputs(model: Model, params, x, y, kind: str = "ce") -> np.ndarray:
    """Per-sample gradient of each sample's own loss with respect to its input."""
    params = _check_params(model, params)
    x2, single = _check_inputs(model, x)
    out, caches, blocks = _forward_cache(model, params, x2)
    g = loss_grad_logits(out, y, kind)
    gx, _ = _backward(model, blocks, caches, g, per_sample=True)
    return gx[0] if single else gx


def _jacobians(model: Model, params, x):
    params = _check_params(model, params)
    x2, single = _check_inputs(model, x)
    if not single:
        raise ValueError("jacobians are evaluated at a single input vector")
    c = model.n_outputs
    xs = np.repeat(x2, c, axis=0)
    _, caches, blocks = _forward_cache(model, params, xs)
    return _backward(model, blocks, caches, np.eye(c), per_sample=True)


def jacobian_input(model: Model, params, x) -> np.ndarray:
    """``c x n`` matrix of d logits / d input at ``x``."""
    return _jacobians(model, params, x)[0]


def jacobian_params(model: Model, params, x) -> np.ndarray:
    """``c x p`` matrix of d logits / d parameters at ``x``."""
    return _jacobians(model, params, x)[1]


@dataclass(frozen=True)
class JacobianPair:
    jx: np.ndarray
    jtheta: np.ndarray
    point: object = None


def jacobian_pair(model: Model, params, x, point=None) -> JacobianPair:
    jx, jt = _jacobians(model, params, x)
    return JacobianPair(jx, jt, point)


class EmpiricalRisk:
    """The empirical risk of a fixed model and dataset, as a function of parameters.

    Flatness estimators only need ``risk(theta)`` and ``risk.grad(theta)``, so
    any object with those two methods can stand in for this class.
    """

    def __init__(self, model: Model, x, y, kind: str = "ce"):
        self.model = model
        self.x, _ = _check_inputs(model, x)
        self.y = np.asarray(y)
        self.kind = kind

    def __call__(self, params) -> float:
        return risk(self.model, params, self.x, self.y, self.kind)

    def grad(self, params) -> np.ndarray:
        return grad_params(self.model, params, self.x, self.y, self.kind)
