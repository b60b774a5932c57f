"""Seeded randomness, learnable parameters, MSE loss and the Adam optimizer.

Everything here is float64. Randomness flows through :class:`Rng`, a thin
wrapper around numpy's PCG64 bit generator, whose output stream is fixed for
a given seed independent of platform.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float64

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Rng:
    """Deterministic random stream (PCG64) keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, size=None) -> np.ndarray:
        """Draws from the half-open interval ``[low, high)``."""
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def exponential(self, scale=1.0, size=None) -> np.ndarray:
        return self._gen.exponential(scale, size)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def child(self, index: int) -> "Rng":
        """Independent stream for trial ``index``: seed XOR index."""
        return Rng(self.seed ^ int(index))


class Param:
    """A learnable tensor with its gradient accumulator and Adam moments."""

    def __init__(self, values, name: str = ""):
        self.values = np.array(values, dtype=DTYPE)
        self.name = name
        self.grad = np.zeros_like(self.values)
        self.m = np.zeros_like(self.values)
        self.v = np.zeros_like(self.values)
        self.step_count = 0

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def reset_optimizer(self) -> None:
        self.m.fill(0.0)
        self.v.fill(0.0)
        self.step_count = 0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.values.shape})"


def init_params(shape, fan_in: int, fan_out: int, rng: Rng, bias: bool = False,
                name: str = "") -> Param:
    """Glorot-uniform initialisation; biases start at zero.

    Weights are drawn from ``U[-a, a)`` with ``a = sqrt(6 / (fan_in + fan_out))``.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    if bias:
        return Param(np.zeros(shape, dtype=DTYPE), name)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Param(rng.uniform(-limit, limit, size=shape), name)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``.

    Returns:
        ``(loss, grad)`` where ``grad = 2 (pred - target) / L``.
    """
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss on empty input")
    diff = pred - target
    n = diff.size
    return float(np.dot(diff.ravel(), diff.ravel()) / n), (2.0 / n) * diff


def adam_step(params, lr: float = ADAM_LR, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> None:
    """Applies one bias-corrected Adam update to every parameter in place.

    Gradients are left untouched; the caller clears them. All gradients are
    validated before any value is modified, so a failing call leaves the
    parameters as they were.
    """
    if lr <= 0 or eps <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1):
        raise ValueError("invalid Adam hyperparameters")
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name or p!r}")
    for p in params:
        p.step_count += 1
        t = p.step_count
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p.m / (1.0 - beta1**t)
        v_hat = p.v / (1.0 - beta2**t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Holds Adam hyperparameters; state lives on each :class:`Param`."""

    def __init__(self, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params) -> None:
        adam_step(params, self.lr, self.beta1, self.beta2, self.eps)
