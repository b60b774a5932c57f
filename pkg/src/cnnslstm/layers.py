"""1-D convolution, 1-D pooling, fully-connected layers and activations.

Feature maps are float64 arrays laid out ``[channel][position]``. Every
operation also accepts a leading batch axis, ``(batch, channel, position)``,
which is how the models call them. Kernels are stored
``[out_channel][in_channel][tap]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .numerics import DTYPE, Param, Rng, init_params


def out_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    """Sliding-window output length ``floor((L + 2 pad - K) / S) + 1``."""
    return (length + 2 * padding - kernel_size) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_size, self.stride) < 1:
            raise ConfigError(f"invalid convolution spec {self}")
        if self.padding < 0:
            raise ConfigError(f"negative padding in {self}")

    def out_length(self, length: int) -> int:
        return out_length(length, self.kernel_size, self.stride, self.padding)


@dataclass(frozen=True)
class PoolSpec:
    kernel_size: int
    stride: int
    padding: int = 0
    function: str = "max"

    def __post_init__(self):
        if self.function not in ("max", "average"):
            raise ConfigError(f"pooling function must be 'max' or 'average', got {self.function!r}")
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid pooling spec {self}")
        # a window made only of padding has no statistic
        if self.padding >= self.kernel_size:
            raise ConfigError(f"pooling padding must be smaller than the kernel: {self}")

    def out_length(self, length: int) -> int:
        return out_length(length, self.kernel_size, self.stride, self.padding)


def _batched(x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (channels, length) or (batch, channels, length), got {x.shape}")
    return x, False


def _values(p):
    return p.values if isinstance(p, Param) else np.asarray(p, dtype=DTYPE)


def _tap(xp, m, stride, n_out):
    """Columns ``m, m + S, ..., m + (n_out - 1) S`` of a padded input."""
    return xp[..., m: m + stride * (n_out - 1) + 1: stride]


@dataclass
class ConvCache:
    padded: np.ndarray
    in_length: int
    squeeze: bool


def conv1d_forward(x, kernels, bias, spec: ConvSpec):
    """``v[p, i] = sum_n sum_m k[p, n, m] * u_pad[n, i S + m] + b[p]``.

    Returns:
        ``(output, cache)``; pass the cache to :func:`conv1d_backward`.
    """
    x, squeeze = _batched(x)
    k = _values(kernels)
    b = _values(bias)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if k.shape != (spec.out_channels, spec.in_channels, spec.kernel_size):
        raise ShapeError(f"kernel shape {k.shape} does not match {spec}")
    length = x.shape[2]
    n_out = spec.out_length(length)
    if n_out < 1:
        raise ConfigError(f"convolution {spec} leaves no output for input length {length}")
    pad = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    out = np.zeros((x.shape[0], spec.out_channels, n_out), dtype=DTYPE)
    for m in range(spec.kernel_size):
        out += np.matmul(k[:, :, m], _tap(xp, m, spec.stride, n_out))
    out += b[None, :, None]
    cache = ConvCache(xp, length, squeeze)
    return (out[0] if squeeze else out), cache


def conv1d_backward(grad_out, cache: ConvCache | None, kernels, bias, spec: ConvSpec):
    """Accumulates kernel/bias gradients and returns the input gradient."""
    if cache is None:
        raise StateError("conv1d_backward called without a forward cache")
    g, _ = _batched(grad_out)
    xp = cache.padded
    k = _values(kernels)
    n_out = g.shape[2]
    if g.shape[0] != xp.shape[0] or g.shape[1] != spec.out_channels:
        raise ShapeError(f"conv output gradient shape {g.shape} does not match forward")
    dxp = np.zeros_like(xp)
    dk = np.empty_like(k)
    for m in range(spec.kernel_size):
        tap = _tap(xp, m, spec.stride, n_out)
        dk[:, :, m] = np.tensordot(g, tap, axes=([0, 2], [0, 2]))
        _tap(dxp, m, spec.stride, n_out)[...] += np.matmul(k[:, :, m].T, g)
    if isinstance(kernels, Param):
        kernels.grad += dk
    if isinstance(bias, Param):
        bias.grad += g.sum(axis=(0, 2))
    pad = spec.padding
    dx = dxp[:, :, pad: pad + cache.in_length]
    return dx[0] if cache.squeeze else dx


@dataclass
class PoolCache:
    in_shape: tuple
    argmax: np.ndarray | None
    counts: np.ndarray | None
    squeeze: bool


def pool1d_forward(x, spec: PoolSpec):
    """Max or average pooling per channel; padded positions never count.

    Max pooling treats padding as absent (``-inf``); average pooling divides
    by the number of in-bounds positions of each window.
    """
    x, squeeze = _batched(x)
    length = x.shape[2]
    n_out = spec.out_length(length)
    if n_out < 1:
        raise ConfigError(f"pooling {spec} leaves no output for input length {length}")
    pad = spec.padding
    if spec.function == "max":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)), constant_values=-np.inf) if pad else x
        taps = np.stack([_tap(xp, m, spec.stride, n_out) for m in range(spec.kernel_size)])
        argmax = np.argmax(taps, axis=0)
        out = np.take_along_axis(taps, argmax[None], axis=0)[0]
        cache = PoolCache(x.shape, argmax, None, squeeze)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
        out = np.zeros((x.shape[0], x.shape[1], n_out), dtype=DTYPE)
        for m in range(spec.kernel_size):
            out += _tap(xp, m, spec.stride, n_out)
        starts = np.arange(n_out) * spec.stride - pad
        counts = (np.minimum(starts + spec.kernel_size, length) - np.maximum(starts, 0)).astype(DTYPE)
        out /= counts
        cache = PoolCache(x.shape, None, counts, squeeze)
    return (out[0] if squeeze else out), cache


def pool1d_backward(grad_out, cache: PoolCache | None, spec: PoolSpec):
    """Routes max-pool gradients to the first maximal element of each window;
    spreads average-pool gradients evenly over in-bounds positions."""
    if cache is None:
        raise StateError("pool1d_backward called without a forward cache")
    g, _ = _batched(grad_out)
    batch, channels, length = cache.in_shape
    n_out = g.shape[2]
    pad = spec.padding
    dxp = np.zeros((batch, channels, length + 2 * pad), dtype=DTYPE)
    if spec.function == "max":
        for m in range(spec.kernel_size):
            _tap(dxp, m, spec.stride, n_out)[...] += np.where(cache.argmax == m, g, 0.0)
    else:
        share = g / cache.counts
        for m in range(spec.kernel_size):
            _tap(dxp, m, spec.stride, n_out)[...] += share
    dx = dxp[:, :, pad: pad + length]
    return dx[0] if cache.squeeze else dx


def dense_forward(x, W, b):
    """``out = W x + b`` for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=DTYPE)
    w = _values(W)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense input length {x.shape[-1]} != weight columns {w.shape[1]}")
    return x @ w.T + _values(b)


def dense_backward(grad_out, x, W, b):
    """Accumulates ``dW``/``db`` and returns ``W^T grad``."""
    g = np.asarray(grad_out, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    w = _values(W)
    if g.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense output gradient length {g.shape[-1]} != weight rows {w.shape[0]}")
    g2 = g.reshape(-1, w.shape[0])
    if isinstance(W, Param):
        W.grad += g2.T @ x.reshape(-1, w.shape[1])
    if isinstance(b, Param):
        b.grad += g2.sum(axis=0)
    return g @ w


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * np.asarray(x, dtype=DTYPE)) + 1.0)


ACTIVATIONS = ("relu", "sigmoid", "tanh")


def activation(kind: str, x):
    x = np.asarray(x, dtype=DTYPE)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(kind: str, grad_out, x, y=None):
    """Gradient through an activation given its input ``x`` (and output ``y``).

    ``relu'(0)`` is taken as 0.
    """
    g = np.asarray(grad_out, dtype=DTYPE)
    if kind == "relu":
        return np.where(np.asarray(x) > 0.0, g, 0.0)
    if y is None:
        y = activation(kind, x)
    if kind == "sigmoid":
        return g * y * (1.0 - y)
    if kind == "tanh":
        return g * (1.0 - y * y)
    raise ConfigError(f"unknown activation {kind!r}")


class Layer:
    """Stateful wrapper: ``forward`` caches what ``backward`` needs."""

    def params(self):
        return []

    def forward(self, x, train: bool = True):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def kink_signature(self):
        """Discrete branch choices made on the last forward pass (relu masks,
        max-pool argmaxes). Finite-difference checks skip cases where a
        perturbation changes them."""
        return None


class Conv1d(Layer):
    def __init__(self, spec: ConvSpec, rng: Rng, name: str = "conv"):
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_size
        fan_out = spec.out_channels * spec.kernel_size
        self.kernels = init_params((spec.out_channels, spec.in_channels, spec.kernel_size),
                                   fan_in, fan_out, rng, name=f"{name}.kernels")
        self.bias = init_params((spec.out_channels,), fan_in, fan_out, rng, bias=True,
                                name=f"{name}.bias")
        self._cache = None

    def params(self):
        return [self.kernels, self.bias]

    def forward(self, x, train=True):
        out, cache = conv1d_forward(x, self.kernels, self.bias, self.spec)
        self._cache = cache if train else None
        return out

    def backward(self, grad):
        dx = conv1d_backward(grad, self._cache, self.kernels, self.bias, self.spec)
        self._cache = None
        return dx


class Pool1d(Layer):
    def __init__(self, spec: PoolSpec):
        self.spec = spec
        self._cache = None
        self._last_argmax = None

    def forward(self, x, train=True):
        out, cache = pool1d_forward(x, self.spec)
        self._cache = cache if train else None
        self._last_argmax = cache.argmax
        return out

    def backward(self, grad):
        dx = pool1d_backward(grad, self._cache, self.spec)
        self._cache = None
        return dx

    def kink_signature(self):
        return self._last_argmax


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: Rng, name: str = "dense"):
        self.W = init_params((out_features, in_features), in_features, out_features, rng,
                             name=f"{name}.W")
        self.b = init_params((out_features,), in_features, out_features, rng, bias=True,
                             name=f"{name}.b")
        self._x = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x, train=True):
        self._x = np.asarray(x, dtype=DTYPE) if train else None
        return dense_forward(x, self.W, self.b)

    def backward(self, grad):
        if self._x is None:
            raise StateError("dense backward called without a forward cache")
        dx = dense_backward(grad, self._x, self.W, self.b)
        self._x = None
        return dx


class Activation(Layer):
    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {kind!r}")
        self.kind = kind
        self._x = None
        self._y = None
        self._mask = None

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=DTYPE)
        y = activation(self.kind, x)
        if self.kind == "relu":
            self._mask = x > 0.0
        self._x, self._y = (x, y) if train else (None, None)
        return y

    def backward(self, grad):
        if self._x is None:
            raise StateError(f"{self.kind} backward called without a forward cache")
        dx = activation_backward(self.kind, grad, self._x, self._y)
        self._x = self._y = None
        return dx

    def kink_signature(self):
        return self._mask if self.kind == "relu" else None


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def kink_signature(self):
        return [layer.kink_signature() for layer in self.layers]
