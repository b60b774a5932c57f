"""Finite-difference verification of every hand-written backward pass.

Each check draws a random small instance, forms the scalar loss
``sum(w * output)`` for a random weight ``w``, and compares, for every
parameter tensor and every input, the backprop directional derivative along
a random direction ``d`` with the central difference
``(L(x + h d) - L(x - h d)) / 2h``. Instances where the perturbation flips a
relu mask or a max-pool argmax are skipped and counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .architectures import KINDS, AssembledInput, build_model, miniature_spec
from .layers import (ConvSpec, PoolSpec, activation, activation_backward,
                     conv1d_backward, conv1d_forward, dense_backward, dense_forward,
                     pool1d_backward, pool1d_forward)
from .numerics import Param, Rng
from .recurrent import LstmCellParams, lstm_backward, lstm_forward, output_head, \
    output_head_backward

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    component: str
    max_rel_err: float
    trials: int
    skipped: int
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.trials > 0 and self.max_rel_err < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < 1e-12:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


def _same(a, b) -> bool:
    if isinstance(a, list):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def directional_errors(loss, tensors, rng: Rng, h: float = STEP, signature=None, corrupt=1.0):
    """Relative errors for each ``(label, array, analytic_grad)``.

    ``loss()`` must recompute the scalar from the arrays' current contents.
    Returns ``None`` if a perturbation changed ``signature()``.
    """
    base_sig = signature() if signature else None
    errors = {}
    for label, arr, grad in tensors:
        d = rng.normal(size=arr.shape)
        saved = arr.copy()
        arr += h * d
        lp = loss()
        sp = signature() if signature else None
        arr[...] = saved - h * d
        lm = loss()
        sm = signature() if signature else None
        arr[...] = saved
        if signature and not (_same(base_sig, sp) and _same(base_sig, sm)):
            return None
        numeric = (lp - lm) / (2.0 * h)
        analytic = float(np.sum(grad * d)) * corrupt
        errors[label] = relative_error(analytic, numeric)
    return errors


def _run(component, n_trials, seed, one_trial, corrupt):
    rng = Rng(seed)
    worst = 0.0
    done = skipped = 0
    t0 = time.perf_counter()
    attempts = 0
    while done < n_trials and attempts < 5 * n_trials:
        attempts += 1
        errs = one_trial(rng, 1.1 if corrupt == component else 1.0)
        if errs is None:
            skipped += 1
            continue
        done += 1
        worst = max(worst, max(errs.values()))
    return CheckResult(component, worst, done, skipped, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# per-layer checks


def _conv_trial(rng, corrupt):
    n, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k, s, pad = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(0, 4))
    length = int(rng.integers(max(k - 2 * pad, 1), 14))
    spec = ConvSpec(n, p, k, s, pad)
    x = rng.normal(size=(2, n, length))
    kern = Param(rng.normal(size=(p, n, k)))
    bias = Param(rng.normal(size=p))
    out, cache = conv1d_forward(x, kern, bias, spec)
    w = rng.normal(size=out.shape)
    dx = conv1d_backward(w, cache, kern, bias, spec)

    def loss():
        return float(np.sum(w * conv1d_forward(x, kern.values, bias.values, spec)[0]))

    return directional_errors(loss, [("input", x, dx), ("kernels", kern.values, kern.grad),
                                     ("bias", bias.values, bias.grad)], rng, corrupt=corrupt)


def _pool_trial(function):
    def trial(rng, corrupt):
        k = int(rng.integers(1, 6))
        s, pad = int(rng.integers(1, 4)), int(rng.integers(0, k))
        length = int(rng.integers(max(k - 2 * pad, 1), 14))
        spec = PoolSpec(k, s, pad, function)
        x = rng.normal(size=(2, int(rng.integers(1, 4)), length))
        out, cache = pool1d_forward(x, spec)
        w = rng.normal(size=out.shape)
        dx = pool1d_backward(w, cache, spec)

        def loss():
            return float(np.sum(w * pool1d_forward(x, spec)[0]))

        def sig():
            return pool1d_forward(x, spec)[1].argmax

        return directional_errors(loss, [("input", x, dx)], rng,
                                  signature=sig if function == "max" else None, corrupt=corrupt)
    return trial


def _dense_trial(rng, corrupt):
    n_in, n_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    x = rng.normal(size=(3, n_in))
    W = Param(rng.normal(size=(n_out, n_in)))
    b = Param(rng.normal(size=n_out))
    w = rng.normal(size=(3, n_out))
    dx = dense_backward(w, x, W, b)

    def loss():
        return float(np.sum(w * dense_forward(x, W.values, b.values)))

    return directional_errors(loss, [("input", x, dx), ("W", W.values, W.grad),
                                     ("b", b.values, b.grad)], rng, corrupt=corrupt)


def _activation_trial(kind):
    def trial(rng, corrupt):
        x = rng.normal(size=(3, 7))
        w = rng.normal(size=x.shape)
        dx = activation_backward(kind, w, x)

        def loss():
            return float(np.sum(w * activation(kind, x)))

        sig = (lambda: x > 0) if kind == "relu" else None
        return directional_errors(loss, [("input", x, dx)], rng, signature=sig, corrupt=corrupt)
    return trial


def _lstm_trial(rng, corrupt, T=5, n_in=3, hidden=4):
    cell = LstmCellParams(n_in, hidden, rng)
    for p in cell.params():
        p.values[...] = rng.normal(scale=0.5, size=p.shape)
    x = rng.normal(size=(2, n_in, T))
    h, cache = lstm_forward(x, cell)
    w = rng.normal(size=h.shape)
    dx = lstm_backward(w, cache, cell)

    def loss():
        return float(np.sum(w * lstm_forward(x, cell, train=False)[0]))

    tensors = [("input", x, dx)] + [(p.name, p.values, p.grad) for p in cell.params()]
    return directional_errors(loss, tensors, rng, corrupt=corrupt)


def _head_trial(rng, corrupt):
    hidden = int(rng.integers(1, 8))
    h = rng.normal(size=(3, hidden))
    W = Param(rng.normal(size=(1, hidden)))
    b = Param(rng.normal(size=1))
    w = rng.normal(size=3)
    dh = output_head_backward(w, h, W, b)

    def loss():
        return float(np.sum(w * output_head(h, W.values, b.values)))

    return directional_errors(loss, [("h", h, dh), ("W_out", W.values, W.grad),
                                     ("b_out", b.values, b.grad)], rng, corrupt=corrupt)


# ---------------------------------------------------------------------------
# end-to-end checks


def gradcheck_spec(kind: str, n_vars: int = 2):
    """Miniature spec used for end-to-end checks (T=24, I=6, hidden 3)."""
    return miniature_spec(kind, n_vars, long_len=24, short_len=6, hidden_size=3, nchf=2)


def _model_trial(kind):
    spec = gradcheck_spec(kind)

    def trial(rng, corrupt):
        model = build_model(spec, rng)
        for p in model.params():
            # nonzero biases so relu kinks are not systematically hit at 0
            p.values[...] = rng.normal(scale=0.5, size=p.shape)
        B = 2
        inp = AssembledInput(
            long=rng.normal(size=(B, spec.n_vars, spec.long_len)) if spec.uses("long") else None,
            short=rng.normal(size=(B, spec.n_vars, spec.short_len)) if spec.uses("short") else None,
            daily=rng.normal(size=(B, spec.n_vars, spec.daily_len)) if spec.uses("daily") else None,
        )
        model.zero_grad()
        y = model.forward(inp, train=True)
        w = rng.normal(size=y.shape)
        grads = model.backward(w)

        def loss():
            return float(np.sum(w * model.forward(inp, train=False)))

        def sig():
            return model.kink_signature()

        loss()
        tensors = [(f"input.{k}", getattr(inp, k), g) for k, g in grads.items()]
        tensors += [(p.name, p.values, p.grad) for p in model.params()]
        return directional_errors(loss, tensors, rng, signature=sig, corrupt=corrupt)
    return trial


LAYER_CHECKS = {
    "conv1d": _conv_trial,
    "pool1d.max": _pool_trial("max"),
    "pool1d.average": _pool_trial("average"),
    "dense": _dense_trial,
    "relu": _activation_trial("relu"),
    "sigmoid": _activation_trial("sigmoid"),
    "tanh": _activation_trial("tanh"),
    "lstm": _lstm_trial,
    "output_head": _head_trial,
}


def run_checks(components=None, archs=None, n_trials: int = 100, seed: int = 0,
               corrupt: str | None = None) -> list:
    """Runs the named layer checks and end-to-end architecture checks.

    ``corrupt`` names one component whose analytic gradient is scaled by 1.1
    before comparison, as a negative control.
    """
    components = list(LAYER_CHECKS) if components is None else list(components)
    archs = list(KINDS) if archs is None else list(archs)
    results = []
    for i, name in enumerate(components):
        results.append(_run(name, n_trials, seed + i, LAYER_CHECKS[name], corrupt))
    for i, kind in enumerate(archs):
        results.append(_run(f"model.{kind}", n_trials, seed + 100 + i, _model_trial(kind), corrupt))
    return results


def format_table(results) -> str:
    lines = [f"{'component':<18} {'max_rel_err':>12} {'trials':>7} {'skipped':>8} {'time_s':>7}  status"]
    for r in results:
        lines.append(f"{r.component:<18} {r.max_rel_err:>12.3e} {r.trials:>7d} {r.skipped:>8d} "
                     f"{r.seconds:>7.2f}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
