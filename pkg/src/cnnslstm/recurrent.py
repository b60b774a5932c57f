"""Single-layer LSTM with backpropagation through time, and the linear head.

Gate order inside stacked arrays is always input, forget, output, cell input.
The sixteen weight and bias tensors are kept as separate parameters, one per
gate and source (input vector or previous hidden state); they are stacked
only for the duration of a forward or backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError
from .layers import Layer, dense_backward, dense_forward, sigmoid
from .numerics import DTYPE, Param, Rng, init_params

GATES = ("i", "f", "o", "c")


class LstmCellParams:
    """Weights ``W_i*`` (hidden x input), ``W_h*`` (hidden x hidden) and
    biases ``b_i*``, ``b_h*`` for each of the four gates."""

    def __init__(self, input_size: int, hidden_size: int, rng: Rng | None = None,
                 name: str = "lstm"):
        self.input_size = input_size
        self.hidden_size = hidden_size
        H, N = hidden_size, input_size
        self.tensors = {}
        for g in GATES:
            if rng is None:
                self.tensors[f"W_i{g}"] = Param(np.zeros((H, N)), f"{name}.W_i{g}")
            else:
                self.tensors[f"W_i{g}"] = init_params((H, N), N, H, rng, name=f"{name}.W_i{g}")
        for g in GATES:
            if rng is None:
                self.tensors[f"W_h{g}"] = Param(np.zeros((H, H)), f"{name}.W_h{g}")
            else:
                self.tensors[f"W_h{g}"] = init_params((H, H), H, H, rng, name=f"{name}.W_h{g}")
        for src in ("i", "h"):
            for g in GATES:
                self.tensors[f"b_{src}{g}"] = Param(np.zeros(H), f"{name}.b_{src}{g}")

    def __getitem__(self, key) -> Param:
        return self.tensors[key]

    def params(self):
        return list(self.tensors.values())

    def stacked(self):
        """``(W_x [4H, N], W_h [4H, H], b [4H])`` with both bias sets summed."""
        t = self.tensors
        wx = np.concatenate([t[f"W_i{g}"].values for g in GATES])
        wh = np.concatenate([t[f"W_h{g}"].values for g in GATES])
        b = np.concatenate([t[f"b_i{g}"].values + t[f"b_h{g}"].values for g in GATES])
        return wx, wh, b

    def accumulate(self, d_wx, d_wh, d_b) -> None:
        H = self.hidden_size
        for k, g in enumerate(GATES):
            rows = slice(k * H, (k + 1) * H)
            self.tensors[f"W_i{g}"].grad += d_wx[rows]
            self.tensors[f"W_h{g}"].grad += d_wh[rows]
            self.tensors[f"b_i{g}"].grad += d_b[rows]
            self.tensors[f"b_h{g}"].grad += d_b[rows]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None):
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


@dataclass
class StepCache:
    x: np.ndarray
    prev: LstmState
    gi: np.ndarray
    gf: np.ndarray
    go: np.ndarray
    gc: np.ndarray
    tanh_c: np.ndarray


def lstm_step(x, prev: LstmState, params: LstmCellParams):
    """One application of the LSTM block.

    Returns:
        ``(new_state, cache)``. ``x`` may be a vector or a ``(batch, input)``
        matrix; ``prev`` must match.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"LSTM input length {x.shape[-1]} != input_size {params.input_size}")
    if prev.h.shape[-1] != params.hidden_size:
        raise ShapeError(f"LSTM state length {prev.h.shape[-1]} != hidden_size {params.hidden_size}")
    wx, wh, b = params.stacked()
    z = x @ wx.T + prev.h @ wh.T + b
    H = params.hidden_size
    gi = sigmoid(z[..., :H])
    gf = sigmoid(z[..., H:2 * H])
    go = sigmoid(z[..., 2 * H:3 * H])
    gc = np.tanh(z[..., 3 * H:])
    c = gf * prev.c + gi * gc
    tanh_c = np.tanh(c)
    h = go * tanh_c
    return LstmState(h, c), StepCache(x, prev, gi, gf, go, gc, tanh_c)


@dataclass
class SequenceCache:
    xs: np.ndarray       # (T, B, N)
    gates: np.ndarray    # (T, B, 4H) activated gate values
    c: np.ndarray        # (T + 1, B, H), c[0] = 0
    h: np.ndarray        # (T + 1, B, H), h[0] = 0
    tanh_c: np.ndarray   # (T, B, H)
    squeeze: bool


def lstm_forward(sequence, params: LstmCellParams, train: bool = True):
    """Runs the block over ``s = 1..T`` from a zero state.

    Args:
        sequence: ``(input_size, T)`` or ``(batch, input_size, T)``.
        params: cell parameters.
        train: keep the per-step cache needed by :func:`lstm_backward`.

    Returns:
        ``(h_T, cache)``; cache is ``None`` when ``train`` is false.
    """
    seq = np.asarray(sequence, dtype=DTYPE)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] != params.input_size:
        raise ShapeError(f"LSTM sequence shape {np.shape(sequence)} incompatible with "
                         f"input_size {params.input_size}")
    B, _, T = seq.shape
    if T < 1:
        raise ShapeError("LSTM sequence must have at least one step")
    H = params.hidden_size
    wx, wh, b = params.stacked()
    xs = np.ascontiguousarray(seq.transpose(2, 0, 1))
    wx_t, wh_t = wx.T, wh.T
    h = np.zeros((B, H), dtype=DTYPE)
    c = np.zeros((B, H), dtype=DTYPE)
    if train:
        gates = np.empty((T, B, 4 * H), dtype=DTYPE)
        cs = np.zeros((T + 1, B, H), dtype=DTYPE)
        hs = np.zeros((T + 1, B, H), dtype=DTYPE)
        tcs = np.empty((T, B, H), dtype=DTYPE)
    for s in range(T):
        z = xs[s] @ wx_t
        z += h @ wh_t
        z += b
        z[:, :3 * H] *= 0.5
        a = np.tanh(z)
        a[:, :3 * H] += 1.0
        a[:, :3 * H] *= 0.5
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        h = a[:, 2 * H:3 * H] * tc
        if train:
            gates[s] = a
            cs[s + 1] = c
            hs[s + 1] = h
            tcs[s] = tc
    cache = SequenceCache(xs, gates, cs, hs, tcs, squeeze) if train else None
    return (h[0] if squeeze else h), cache


def lstm_backward(dh_T, cache: SequenceCache | None, params: LstmCellParams):
    """Backpropagation through all ``T`` steps.

    Accumulates into all sixteen parameter tensors and returns the gradient
    with respect to the input sequence, shaped like the forward input.
    """
    if cache is None:
        raise StateError("lstm_backward called without a forward cache")
    dh = np.array(dh_T, dtype=DTYPE)
    if cache.squeeze:
        dh = dh[None]
    T, B, _ = cache.xs.shape
    H = params.hidden_size
    if dh.shape != (B, H):
        raise ShapeError(f"final-state gradient shape {dh.shape} != {(B, H)}")
    wx, wh, _ = params.stacked()
    dz = np.empty((T, B, 4 * H), dtype=DTYPE)
    dc = np.zeros((B, H), dtype=DTYPE)
    for s in range(T - 1, -1, -1):
        a = cache.gates[s]
        gi, gf, go, gc = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = cache.tanh_c[s]
        dc += dh * go * (1.0 - tc * tc)
        d = dz[s]
        d[:, :H] = dc * gc * gi * (1.0 - gi)
        d[:, H:2 * H] = dc * cache.c[s] * gf * (1.0 - gf)
        d[:, 2 * H:3 * H] = dh * tc * go * (1.0 - go)
        d[:, 3 * H:] = dc * gi * (1.0 - gc * gc)
        dc *= gf
        dh = d @ wh
    flat = dz.reshape(T * B, 4 * H)
    d_wx = flat.T @ cache.xs.reshape(T * B, -1)
    d_wh = flat.T @ cache.h[:T].reshape(T * B, H)
    params.accumulate(d_wx, d_wh, flat.sum(axis=0))
    dx = (dz @ wx).transpose(1, 2, 0)
    return dx[0] if cache.squeeze else dx


def output_head(h, W_out, b_out):
    """``y = W_out h + b_out`` with ``W_out`` of shape ``(1, hidden)``."""
    w = W_out.values if isinstance(W_out, Param) else np.asarray(W_out)
    if w.ndim != 2 or w.shape[0] != 1:
        raise ShapeError(f"output head weight must be (1, hidden), got {w.shape}")
    return dense_forward(h, W_out, b_out)[..., 0]


class Lstm(Layer):
    """Many-to-one LSTM layer: ``(batch, input_size, T) -> (batch, hidden)``."""

    def __init__(self, input_size: int, hidden_size: int, rng: Rng, name: str = "lstm"):
        self.cell = LstmCellParams(input_size, hidden_size, rng, name)
        self._cache = None

    @property
    def input_size(self):
        return self.cell.input_size

    @property
    def hidden_size(self):
        return self.cell.hidden_size

    def params(self):
        return self.cell.params()

    def forward(self, x, train=True):
        h, self._cache = lstm_forward(x, self.cell, train)
        return h

    def backward(self, grad):
        dx = lstm_backward(grad, self._cache, self.cell)
        self._cache = None
        return dx


def output_head_backward(grad_y, h, W_out, b_out):
    """Accumulates head gradients; returns ``dL/dh``."""
    g = np.asarray(grad_y, dtype=DTYPE)[..., None]
    return dense_backward(g, h, W_out, b_out)
