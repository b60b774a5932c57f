"""Mini-batch training with early stopping, multi-trial runs and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .architectures import ModelSpec, build_model
from .data import NormStats, WindowSet
from .errors import (ConfigError, CorruptionError, FormatError, NumericError, ShapeError,
                     TrainingAbort)
from .numerics import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ADAM_LR, DTYPE, Rng, adam_step, mse_loss

log = logging.getLogger(__name__)

MAGIC = b"CNNSLSTM"
FORMAT_VERSION = 1
# decorrelates the batch-order stream from the initialisation stream
SHUFFLE_SALT = 0x9E3779B97F4A7C15
IMPROVEMENT_RTOL = 1e-12


@dataclass
class TrainConfig:
    batch_size: int = 512
    patience: int = 30
    max_epochs: int = 500
    n_trials: int = 5
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    base_seed: int = 0
    eval_batch_size: int = 1024

    def validate(self) -> None:
        for name in ("batch_size", "patience", "max_epochs", "n_trials", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0 or self.eps <= 0 or not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("invalid Adam settings")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: list  # [(name, ndarray)] in model declaration order
    norm_stats: NormStats | None = None
    best_val_loss: float = float("nan")
    epoch_of_best: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def header(self) -> dict:
        return {
            "format_version": self.format_version,
            "spec": self.spec.to_dict(),
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
            "best_val_loss": self.best_val_loss,
            "epoch_of_best": self.epoch_of_best,
            "seed": self.seed,
            "meta": self.meta,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrialResult:
    trial: int
    seed: int
    checkpoint: Checkpoint | None
    history: list
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.checkpoint is not None


@dataclass
class TrialSet:
    results: list
    best: int

    @property
    def best_result(self) -> TrialResult:
        return self.results[self.best]

    def successful(self):
        return [r for r in self.results if r.ok]


def predict(model, windows: WindowSet, batch_size: int = 1024) -> np.ndarray:
    """Normalised predictions for every sample, in inference mode."""
    out = np.empty(len(windows), dtype=DTYPE)
    for lo in range(0, len(windows), batch_size):
        pos = np.arange(lo, min(lo + batch_size, len(windows)))
        inp, _ = windows.batch(pos)
        out[pos] = model.forward(inp, train=False)
    return out


def evaluate_loss(model, windows: WindowSet, batch_size: int = 1024) -> float:
    pred = predict(model, windows, batch_size)
    return mse_loss(pred, windows.y)[0]


def epoch_batches(n: int, batch_size: int, rng: Rng):
    """Shuffled partition of ``range(n)``; the last batch may be short."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _improves(value: float, best: float) -> bool:
    if not np.isfinite(best):
        return True
    return value < best - IMPROVEMENT_RTOL * abs(best)


def train_one_trial(model, train: WindowSet, val: WindowSet, config: TrainConfig, seed: int,
                    norm_stats: NormStats | None = None, trial: int = 0):
    """Trains ``model`` in place and returns ``(checkpoint, history)``.

    One Adam update per mini-batch on the batch-mean squared error. After
    each epoch the validation loss is computed; training stops once
    ``patience`` consecutive epochs bring no new minimum (or at
    ``max_epochs``), and the parameters of the best epoch are restored.
    """
    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be nonempty")
    rng = Rng(seed ^ SHUFFLE_SALT)
    params = model.params()
    best_loss = float("inf")
    best_epoch = 0
    best_values = [p.values.copy() for p in params]
    history = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for b, batch in enumerate(epoch_batches(len(train), config.batch_size, rng)):
            inp, y = train.batch(batch)
            model.zero_grad()
            pred = model.forward(inp, train=True)
            loss, grad = mse_loss(pred, y)
            if not np.isfinite(loss):
                raise TrainingAbort(f"trial {trial}: non-finite training loss at epoch {epoch}, "
                                    f"batch {b}", epoch, b)
            model.backward(grad)
            try:
                adam_step(params, config.lr, config.beta1, config.beta2, config.eps)
            except NumericError as exc:
                raise TrainingAbort(f"trial {trial}: {exc} at epoch {epoch}, batch {b}",
                                    epoch, b) from exc
            total += loss * len(batch)
        model.zero_grad()
        train_loss = total / len(train)
        val_loss = evaluate_loss(model, val, config.eval_batch_size)
        if not np.isfinite(val_loss):
            raise TrainingAbort(f"trial {trial}: non-finite validation loss at epoch {epoch}",
                                epoch, None)
        history.append(EpochRecord(epoch, train_loss, val_loss))
        if _improves(val_loss, best_loss):
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_values = [p.values.copy() for p in params]
        else:
            stale += 1
        log.info("trial %d epoch %d train %.6g val %.6g%s", trial, epoch, train_loss, val_loss,
                 " *" if stale == 0 else "")
        if stale >= config.patience:
            break
    for p, v in zip(params, best_values):
        p.values[...] = v
    ckpt = Checkpoint(
        spec=getattr(model, "spec", None),
        params=[(p.name, p.values.copy()) for p in params],
        norm_stats=norm_stats,
        best_val_loss=float(best_loss),
        epoch_of_best=best_epoch,
        seed=int(seed),
    )
    return ckpt, history


def trial_seed(base_seed: int, trial: int) -> int:
    return int(base_seed) ^ int(trial)


def _run_one(args):
    spec, train, val, config, norm_stats, k = args
    seed = trial_seed(config.base_seed, k)
    try:
        model = build_model(spec, Rng(seed))
        ckpt, history = train_one_trial(model, train, val, config, seed, norm_stats, trial=k)
        ckpt.meta["trial"] = k
        return TrialResult(k, seed, ckpt, history)
    except TrainingAbort as exc:
        log.warning("trial %d aborted: %s", k, exc)
        return TrialResult(k, seed, None, [], str(exc))


def run_trials(spec: ModelSpec, train: WindowSet, val: WindowSet, config: TrainConfig,
               norm_stats: NormStats | None = None, parallel: int = 1) -> TrialSet:
    """Trains ``n_trials`` independently seeded models (seed = base XOR k)
    and marks the one with the lowest validation loss as best."""
    config.validate()
    jobs = [(spec, train, val, config, norm_stats, k) for k in range(config.n_trials)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    survivors = [r for r in results if r.ok]
    if not survivors:
        raise TrainingAbort("every trial aborted: " + "; ".join(r.error for r in results))
    best = min(survivors, key=lambda r: (r.checkpoint.best_val_loss, r.trial)).trial
    return TrialSet(results, best)


def write_loss_log(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "epoch", "train_loss", "val_loss"])
        for r in results:
            for rec in r.history:
                w.writerow([r.trial, rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])


# ---------------------------------------------------------------------------
# checkpoint files


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Layout (little-endian): magic, u32 version, u64 header length, UTF-8
    JSON header, u32 tensor count, per tensor (u32 name length, name, u32
    ndim, u64 dims), u64 value count, float64 payload."""
    header = json.dumps(ckpt.header(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    total = 0
    for name, values in ckpt.params:
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", values.ndim) + struct.pack(f"<{values.ndim}Q", *values.shape))
        total += values.size
    parts.append(struct.pack("<Q", total))
    parts.extend(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in ckpt.params)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(f"checkpoint truncated at byte {len(self.data)} "
                                  f"(needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> Checkpoint:
    """Reads a checkpoint; with ``expected_spec`` also checks tensor shapes
    against a model built from that spec."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header") from exc
    (count,) = r.unpack("<I")
    manifest = []
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        manifest.append((name, tuple(shape)))
    (total,) = r.unpack("<Q")
    if total != sum(int(np.prod(s)) for _, s in manifest):
        raise CorruptionError(f"{path}: payload count {total} disagrees with tensor manifest")
    payload = np.frombuffer(r.take(8 * total), dtype="<f8").astype(DTYPE)
    if r.pos != len(r.data):
        raise CorruptionError(f"{path}: {len(r.data) - r.pos} unexpected trailing bytes")
    params = []
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        params.append((name, payload[offset:offset + size].reshape(shape).copy()))
        offset += size
    spec = ModelSpec.from_dict(header["spec"])
    stats = header.get("norm_stats")
    ckpt = Checkpoint(spec, params, NormStats.from_dict(stats) if stats else None,
                      header["best_val_loss"], header["epoch_of_best"], header["seed"],
                      header.get("meta", {}), version)
    if expected_spec is not None:
        check_compatible(ckpt, build_model(expected_spec, Rng(0)))
    return ckpt


def check_compatible(ckpt: Checkpoint, model) -> None:
    expected = [(p.name, p.shape) for p in model.params()]
    got = [(n, v.shape) for n, v in ckpt.params]
    for (en, es), (gn, gs) in zip(expected, got):
        if en != gn or es != gs:
            raise ShapeError(f"checkpoint tensor {gn} {gs} does not match model tensor {en} {es}")
    if len(expected) != len(got):
        raise ShapeError(f"checkpoint has {len(got)} tensors, model has {len(expected)}")


def load_into(model, ckpt: Checkpoint) -> None:
    check_compatible(ckpt, model)
    for p, (_, values) in zip(model.params(), ckpt.params):
        p.values[...] = values


def model_from_checkpoint(ckpt: Checkpoint):
    model = build_model(ckpt.spec, Rng(ckpt.seed))
    load_into(model, ckpt)
    return model
