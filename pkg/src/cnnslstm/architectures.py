"""The five benchmark models and the declarative spec that builds them.

==========  =========================================================
kind        structure
==========  =========================================================
cnn         3 x (conv, relu, max-pool) -> flatten -> FC256 -> FC128 -> FC1
lstmwhour   LSTM over the long hourly window -> linear head
lstmwdph    LSTM over stacked [short hourly; daily] rows -> linear head
cnnplstm    CNN branch (conv/pool stack + FC128) on the long window and an
            LSTM branch on the short window, concatenated -> FC64 -> FC1
cnnslstm    3 x (conv, relu) on the long window, feature map stacked under
            the short hourly window -> LSTM -> linear head
==========  =========================================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (Activation, Conv1d, ConvSpec, Dense, Flatten, Pool1d, PoolSpec,
                     Sequential, out_length)
from .numerics import DTYPE, Rng
from .recurrent import Lstm

KINDS = ("cnn", "lstmwhour", "lstmwdph", "cnnplstm", "cnnslstm")

DISPLAY_NAMES = {
    "cnn": "1D-CNN",
    "lstmwhour": "LSTMwHour",
    "lstmwdph": "LSTMwDpH",
    "cnnplstm": "CNNpLSTM",
    "cnnslstm": "CNNsLSTM",
}

# (kernel, stride, padding)
POOLED_CONV = ((6, 3, 3), (4, 2, 2), (4, 4, 2))
POOLED_POOL = ((4, 2, 2), (4, 2, 2), (4, 2, 2))
SERIAL_CONV = ((6, 3, 3), (4, 2, 2), (4, 4, 0))

# window name -> spec attribute holding its length
WINDOWS = {"long": "long_len", "short": "short_len", "daily": "daily_len"}

USES = {
    "cnn": ("long",),
    "lstmwhour": ("long",),
    "lstmwdph": ("short", "daily"),
    "cnnplstm": ("long", "short"),
    "cnnslstm": ("long", "short"),
}


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one model.

    ``conv`` and ``pool`` default to the layer tables for the given kind;
    pass explicit ``(kernel, stride, padding)`` tuples to miniaturise.
    ``align`` controls what happens when a serial model's feature-map length
    differs from ``short_len``: ``"strict"`` refuses to build, ``"zero_pad"``
    left-pads the shorter of the two so both end at the target hour.
    """

    kind: str
    n_vars: int
    nchf: int = 8
    long_len: int = 5040
    short_len: int = 210
    daily_len: int = 210
    hidden_size: int = 30
    conv: tuple | None = None
    pool: tuple | None = None
    pool_function: str = "max"
    cnn_fc: tuple = (256, 128)
    branch_fc: int = 128
    fusion_fc: tuple = (64,)
    align: str = "strict"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.conv is None and self.kind in ("cnn", "cnnplstm", "cnnslstm"):
            default = SERIAL_CONV if self.kind == "cnnslstm" else POOLED_CONV
            object.__setattr__(self, "conv", default)
        if self.pool is None and self.kind in ("cnn", "cnnplstm"):
            object.__setattr__(self, "pool", POOLED_POOL)
        for name in ("conv", "pool", "cnn_fc", "fusion_fc"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(
                    tuple(int(v) for v in item) if isinstance(item, (list, tuple)) else int(item)
                    for item in value))
        self.validate()

    @property
    def input_channels(self) -> int:
        return self.n_vars

    def uses(self, window: str) -> bool:
        return window in USES[self.kind]

    def conv_specs(self):
        """Conv layers with channel counts nchf, 2 nchf, 4 nchf, ..."""
        specs = []
        channels = self.n_vars
        for i, (k, s, p) in enumerate(self.conv or ()):
            out = self.nchf * 2**i
            specs.append(ConvSpec(channels, out, k, s, p))
            channels = out
        return specs

    def pool_specs(self):
        return [PoolSpec(k, s, p, self.pool_function) for k, s, p in (self.pool or ())]

    def cnn_lengths(self):
        """Feature-map lengths after every conv (and pool) layer on ``long_len``."""
        lengths = []
        length = self.long_len
        pools = self.pool or ()
        for i, (k, s, p) in enumerate(self.conv or ()):
            length = out_length(length, k, s, p)
            lengths.append(length)
            if i < len(pools):
                pk, ps, pp = pools[i]
                length = out_length(length, pk, ps, pp)
                lengths.append(length)
        return lengths

    @property
    def feature_channels(self) -> int:
        return self.nchf * 2 ** (len(self.conv) - 1) if self.conv else 0

    @property
    def lstm_input_size(self) -> int:
        if self.kind == "lstmwdph":
            return 2 * self.n_vars
        if self.kind == "cnnslstm":
            return self.n_vars + self.feature_channels
        return self.n_vars

    @property
    def lstm_steps(self) -> int:
        if self.kind == "lstmwhour":
            return self.long_len
        if self.kind == "cnnslstm":
            return max(self.short_len, self.cnn_lengths()[-1])
        return self.short_len

    def validate(self) -> None:
        for name in ("n_vars", "nchf", "long_len", "short_len", "daily_len", "hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.align not in ("strict", "zero_pad"):
            raise ConfigError(f"align must be 'strict' or 'zero_pad', got {self.align!r}")
        if self.kind in ("cnn", "cnnplstm", "cnnslstm"):
            if not self.conv:
                raise ConfigError(f"{self.kind} needs at least one convolution layer")
            if self.kind != "cnnslstm" and len(self.pool or ()) != len(self.conv):
                raise ConfigError(f"{self.kind} needs one pooling layer per convolution layer")
            # the layer-spec constructors do per-layer validation
            self.conv_specs()
            self.pool_specs()
            lengths = self.cnn_lengths()
            if min(lengths) < 1:
                raise ConfigError(f"CNN stack on long_len={self.long_len} collapses: lengths {lengths}")
        if self.kind == "cnnslstm":
            final = self.cnn_lengths()[-1]
            if final != self.short_len and self.align == "strict":
                raise ConfigError(
                    f"serial coupling needs the feature-map length to equal short_len: "
                    f"conv stack gives {final}, short_len is {self.short_len} "
                    f"(internal lengths {self.cnn_lengths()})")
        if self.kind == "lstmwdph" and self.daily_len != self.short_len:
            raise ConfigError(
                f"lstmwdph stacks hourly and daily rows step by step; "
                f"short_len ({self.short_len}) must equal daily_len ({self.daily_len})")
        if self.kind in ("cnnplstm", "cnnslstm", "lstmwhour", "cnn") and self.short_len > self.long_len:
            raise ConfigError("short_len must not exceed long_len")

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("conv", "pool", "cnn_fc", "fusion_fc"):
            if d[name] is not None:
                d[name] = [list(v) if isinstance(v, tuple) else v for v in d[name]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class AssembledInput:
    """Input windows for a batch, each ``(batch, n_vars, length)``; all end at
    the same target hour. Windows a model does not use may be ``None``."""

    long: np.ndarray | None = None
    short: np.ndarray | None = None
    daily: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        for w in (self.long, self.short, self.daily):
            if w is not None:
                return w.shape[0]
        return 0


class Model:
    """Base class: a list of named parameters plus forward/backward."""

    spec: ModelSpec

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._layers = {}

    def params(self):
        return [p for layer in self._layers.values() for p in layer.params()]

    def named_params(self):
        return [(p.name, p) for p in self.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def kink_signature(self):
        return [layer.kink_signature() for layer in self._layers.values()]

    def _check(self, inp: AssembledInput):
        for window in USES[self.spec.kind]:
            arr = getattr(inp, window)
            if arr is None:
                raise ShapeError(f"{self.spec.kind} needs the {window!r} window")
            expected = (self.spec.n_vars, getattr(self.spec, WINDOWS[window]))
            if arr.ndim != 3 or arr.shape[1:] != expected:
                raise ShapeError(f"{window!r} window has shape {arr.shape}, "
                                 f"expected (batch, {expected[0]}, {expected[1]})")

    def forward(self, inp: AssembledInput, train: bool = True) -> np.ndarray:
        """One scalar (normalised flow) per sample, shape ``(batch,)``."""
        self._check(inp)
        return self._forward(inp, train)

    def backward(self, grad_y) -> dict:
        """Backpropagates ``dL/dy`` (shape ``(batch,)``); accumulates parameter
        gradients and returns input-window gradients by name."""
        return self._backward(np.asarray(grad_y, dtype=DTYPE).reshape(-1, 1))

    def _forward(self, inp, train):
        raise NotImplementedError

    def _backward(self, g):
        raise NotImplementedError


def _conv_stack(spec: ModelSpec, rng: Rng, pooled: bool) -> Sequential:
    layers = []
    pools = spec.pool_specs() if pooled else []
    for i, cs in enumerate(spec.conv_specs()):
        layers.append(Conv1d(cs, rng, name=f"conv{i + 1}"))
        layers.append(Activation("relu"))
        if pooled:
            layers.append(Pool1d(pools[i]))
    return Sequential(layers)


def _mlp(sizes, rng: Rng, prefix: str, final_activation: bool) -> Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(Dense(sizes[i], sizes[i + 1], rng, name=f"{prefix}{i + 1}"))
        if final_activation or i < len(sizes) - 2:
            layers.append(Activation("relu"))
    return Sequential(layers)


class CnnOnly(Model):
    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        self._layers["cnn"] = _conv_stack(spec, rng, pooled=True)
        flat = spec.feature_channels * spec.cnn_lengths()[-1]
        self.flat_size = flat
        self._layers["flatten"] = Flatten()
        self._layers["fc"] = _mlp((flat, *spec.cnn_fc, 1), rng, "fc", final_activation=False)

    def _forward(self, inp, train):
        x = self._layers["cnn"].forward(inp.long, train)
        x = self._layers["flatten"].forward(x, train)
        return self._layers["fc"].forward(x, train)[:, 0]

    def _backward(self, g):
        g = self._layers["fc"].backward(g)
        g = self._layers["flatten"].backward(g)
        return {"long": self._layers["cnn"].backward(g)}


class LstmModel(Model):
    """LSTM over the long hourly window (``lstmwhour``) or over stacked
    short-hourly and daily rows (``lstmwdph``)."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        self._layers["lstm"] = Lstm(spec.lstm_input_size, spec.hidden_size, rng)
        self._layers["head"] = Dense(spec.hidden_size, 1, rng, name="head")

    def _sequence(self, inp):
        if self.spec.kind == "lstmwhour":
            return inp.long
        return np.concatenate([inp.short, inp.daily], axis=1)

    def _forward(self, inp, train):
        h = self._layers["lstm"].forward(self._sequence(inp), train)
        return self._layers["head"].forward(h, train)[:, 0]

    def _backward(self, g):
        dh = self._layers["head"].backward(g)
        dx = self._layers["lstm"].backward(dh)
        if self.spec.kind == "lstmwhour":
            return {"long": dx}
        n = self.spec.n_vars
        return {"short": dx[:, :n], "daily": dx[:, n:]}


class CnnSerialLstm(Model):
    """Serial coupling: the CNN feature map joins the short window as extra
    input rows of the LSTM."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        self._layers["cnn"] = _conv_stack(spec, rng, pooled=False)
        self._layers["lstm"] = Lstm(spec.lstm_input_size, spec.hidden_size, rng)
        self._layers["head"] = Dense(spec.hidden_size, 1, rng, name="head")
        self.feature_len = spec.cnn_lengths()[-1]
        self.steps = spec.lstm_steps

    def _forward(self, inp, train):
        v = self._layers["cnn"].forward(inp.long, train)
        short = inp.short
        T = self.steps
        if v.shape[2] < T:
            v = np.pad(v, ((0, 0), (0, 0), (T - v.shape[2], 0)))
        if short.shape[2] < T:
            short = np.pad(short, ((0, 0), (0, 0), (T - short.shape[2], 0)))
        seq = np.concatenate([short, v], axis=1)
        h = self._layers["lstm"].forward(seq, train)
        return self._layers["head"].forward(h, train)[:, 0]

    def _backward(self, g):
        dh = self._layers["head"].backward(g)
        dseq = self._layers["lstm"].backward(dh)
        n = self.spec.n_vars
        d_short = dseq[:, :n, self.steps - self.spec.short_len:]
        d_v = dseq[:, n:, self.steps - self.feature_len:]
        d_long = self._layers["cnn"].backward(np.ascontiguousarray(d_v))
        return {"long": d_long, "short": d_short}


class CnnParallelLstm(Model):
    """Parallel coupling: CNN and LSTM branches run independently and their
    outputs are concatenated into a fully-connected head."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec)
        self._layers["cnn"] = _conv_stack(spec, rng, pooled=True)
        self._layers["flatten"] = Flatten()
        flat = spec.feature_channels * spec.cnn_lengths()[-1]
        self.flat_size = flat
        self._layers["cnn_fc"] = _mlp((flat, spec.branch_fc), rng, "cnn_fc", final_activation=True)
        self._layers["lstm"] = Lstm(spec.n_vars, spec.hidden_size, rng)
        fused = spec.branch_fc + spec.hidden_size
        self._layers["fusion"] = _mlp((fused, *spec.fusion_fc, 1), rng, "fusion",
                                      final_activation=False)

    def _forward(self, inp, train):
        a = self._layers["cnn"].forward(inp.long, train)
        a = self._layers["flatten"].forward(a, train)
        a = self._layers["cnn_fc"].forward(a, train)
        h = self._layers["lstm"].forward(inp.short, train)
        z = np.concatenate([a, h], axis=1)
        return self._layers["fusion"].forward(z, train)[:, 0]

    def _backward(self, g):
        dz = self._layers["fusion"].backward(g)
        k = self.spec.branch_fc
        da = self._layers["cnn_fc"].backward(dz[:, :k])
        da = self._layers["flatten"].backward(da)
        d_long = self._layers["cnn"].backward(da)
        d_short = self._layers["lstm"].backward(np.ascontiguousarray(dz[:, k:]))
        return {"long": d_long, "short": d_short}


_CLASSES = {
    "cnn": CnnOnly,
    "lstmwhour": LstmModel,
    "lstmwdph": LstmModel,
    "cnnplstm": CnnParallelLstm,
    "cnnslstm": CnnSerialLstm,
}


def build_model(spec: ModelSpec, rng: Rng) -> Model:
    """Instantiates ``spec`` with parameters drawn from ``rng``."""
    spec.validate()
    return _CLASSES[spec.kind](spec, rng)


def miniature_spec(kind: str, n_vars: int, long_len: int = 240, short_len: int = 24,
                   hidden_size: int = 16, nchf: int = 4, **overrides) -> ModelSpec:
    """A small spec for tests and gradient checks.

    Pooled stacks keep the default kernels/strides; the serial stack's strides
    are chosen so the feature map length equals ``short_len``.
    """
    kw = dict(kind=kind, n_vars=n_vars, nchf=nchf, long_len=long_len, short_len=short_len,
              daily_len=short_len, hidden_size=hidden_size)
    if kind == "cnnslstm" and "conv" not in overrides:
        kw["conv"] = serial_stack_for(long_len, short_len)
    if kind in ("cnn", "cnnplstm"):
        kw["cnn_fc"] = (32, 16)
        kw["branch_fc"] = 16
        kw["fusion_fc"] = (8,)
    kw.update(overrides)
    return ModelSpec(**kw)


def serial_stack_for(long_len: int, short_len: int):
    """Three conv layers mapping ``long_len`` to exactly ``short_len``.

    Tries the default stack first, then searches small kernels and strides,
    preferring the overall stride pattern closest to it.
    """
    if _stack_len(long_len, SERIAL_CONV) == short_len:
        return SERIAL_CONV
    best = None
    for s1 in range(1, 5):
        for s2 in range(1, 5):
            for s3 in range(1, 7):
                for k1, k2, k3 in ((6, 4, 4), (6, 4, 3), (5, 4, 4), (6, 3, 3), (4, 4, 4),
                                   (6, 4, 2), (6, 4, 5), (6, 4, 6), (3, 3, 3), (2, 2, 2)):
                    for p1 in (k1 // 2, 0):
                        for p2 in (k2 // 2, 0):
                            for p3 in (0, k3 // 2):
                                stack = ((k1, s1, p1), (k2, s2, p2), (k3, s3, p3))
                                if _stack_len(long_len, stack) != short_len:
                                    continue
                                score = (abs(s1 - 3) + abs(s2 - 2) + abs(s3 - 4)
                                         + 0.5 * ((p1 == 0) + (p2 == 0) + (p3 != 0)))
                                if best is None or score < best[0]:
                                    best = (score, stack)
    if best is None:
        raise ConfigError(f"no three-layer conv stack maps {long_len} to {short_len}")
    return best[1]


def _stack_len(length, stack):
    for k, s, p in stack:
        length = out_length(length, k, s, p)
        if length < 1:
            return -1
    return length
