"""Goodness-of-fit metrics, flow-band errors, cross-trial medians,
lag correlation and report/prediction writers.

All metrics are computed in physical units (m3/s).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FlowBands, NormStats, denormalize_flow
from .errors import ShapeError, UndefinedMetric
from .numerics import DTYPE

METRICS = ("rmse", "r", "nse", "rmse_low", "rmse_middle", "rmse_high", "rmse_peak")
PERIODS = ("train", "val", "test")


def _pair(obs, sim, min_len=1):
    obs = np.asarray(obs, dtype=DTYPE).ravel()
    sim = np.asarray(sim, dtype=DTYPE).ravel()
    if obs.shape != sim.shape:
        raise ShapeError(f"obs length {obs.size} != sim length {sim.size}")
    if obs.size < min_len:
        raise ShapeError(f"need at least {min_len} values, got {obs.size}")
    return obs, sim


def rmse(obs, sim) -> float:
    obs, sim = _pair(obs, sim)
    d = obs - sim
    return math.sqrt(float(np.dot(d, d)) / d.size)


def pearson_r(obs, sim) -> float:
    obs, sim = _pair(obs, sim, 2)
    a = obs - obs.mean()
    b = sim - sim.mean()
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0.0:
        raise UndefinedMetric("correlation undefined for a constant series")
    return max(-1.0, min(1.0, float(np.dot(a, b)) / den))


def nse(obs, sim) -> float:
    """Nash-Sutcliffe efficiency ``1 - SSE / sum((obs - mean(obs))^2)``."""
    obs, sim = _pair(obs, sim, 2)
    a = obs - obs.mean()
    den = float(np.dot(a, a))
    if den == 0.0:
        raise UndefinedMetric("NSE undefined for constant observations")
    d = obs - sim
    return 1.0 - float(np.dot(d, d)) / den


def band_rmse(obs, sim, bands: FlowBands) -> dict:
    """RMSE over the time steps whose *observed* flow lies in each band.

    Returns ``{"low", "middle", "high", "peak"} -> float``, with ``None`` for
    bands that have no observations in the series.
    """
    obs, sim = _pair(obs, sim)
    out = {}
    for name, mask in bands.masks(obs).items():
        out[name] = rmse(obs[mask], sim[mask]) if mask.any() else None
    return out


def period_metrics(obs, sim, bands: FlowBands) -> dict:
    """All reported metrics; undefined ones are ``None``."""
    out = {"rmse": rmse(obs, sim)}
    for name, fn in (("r", pearson_r), ("nse", nse)):
        try:
            out[name] = fn(obs, sim)
        except (UndefinedMetric, ShapeError):
            out[name] = None
    for name, value in band_rmse(obs, sim, bands).items():
        out[f"rmse_{name}"] = value
    return out


def median(values):
    """Empirical median; midpoint of the central pair for even counts.
    ``None`` entries are ignored; returns ``None`` if nothing remains."""
    v = sorted(x for x in values if x is not None and not (isinstance(x, float) and math.isnan(x)))
    if not v:
        return None
    n = len(v)
    mid = n // 2
    return float(v[mid]) if n % 2 else 0.5 * (v[mid - 1] + v[mid])


def median_over_trials(reports) -> dict:
    """Per-metric medians over a list of metric dicts."""
    reports = list(reports)
    if not reports:
        raise ValueError("median_over_trials needs at least one report")
    keys = [k for k in reports[0] if k not in ("trial", "period")]
    return {k: median(r.get(k) for r in reports) for k in keys}


def lag_correlation(flow, driver, max_lag: int) -> list:
    """Pearson r between ``flow(t)`` and ``driver(t - lag)`` for lag 0..max_lag.

    Lags whose overlapping segments are constant yield ``None``.
    """
    flow = np.asarray(flow, dtype=DTYPE)
    driver = np.asarray(driver, dtype=DTYPE)
    if flow.shape != driver.shape:
        raise ShapeError("flow and driver must have equal length")
    if max_lag < 0 or flow.size <= max_lag + 1:
        raise ShapeError(f"series of length {flow.size} too short for max_lag {max_lag}")
    out = []
    for lag in range(max_lag + 1):
        try:
            out.append(pearson_r(flow[lag:], driver[:flow.size - lag]))
        except UndefinedMetric:
            out.append(None)
    return out


@dataclass
class PeriodResult:
    period: str
    targets: np.ndarray
    observed: np.ndarray
    simulated: np.ndarray
    metrics: dict | None


@dataclass
class MetricsReport:
    """One row per (trial, period) plus a median pseudo-trial per period."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, trial, period: str, metrics: dict | None) -> None:
        row = {"trial": trial, "period": period}
        row.update(metrics or {k: None for k in METRICS})
        row["absent"] = metrics is None
        self.rows.append(row)

    def periods(self):
        seen = []
        for r in self.rows:
            if r["period"] not in seen:
                seen.append(r["period"])
        return seen

    def medians(self) -> list:
        out = []
        for period in self.periods():
            rows = [r for r in self.rows
                    if r["period"] == period and r["trial"] != "median" and not r["absent"]]
            if not rows:
                continue
            med = median_over_trials([{k: r[k] for k in METRICS} for r in rows])
            out.append({"trial": "median", "period": period, **med, "absent": False})
        return out

    def median_of(self, period: str, metric: str):
        for r in self.medians():
            if r["period"] == period:
                return r[metric]
        return None

    def get(self, trial, period: str) -> dict | None:
        for r in self.rows:
            if r["trial"] == trial and r["period"] == period:
                return r
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "period", *METRICS])
            for r in self.rows + self.medians():
                w.writerow([r["trial"], r["period"], *(_cell(r[k]) for k in METRICS)])

    def write_json(self, path) -> None:
        doc = {"meta": self.meta, "rows": self.rows, "medians": self.medians()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


def _cell(v):
    return "" if v is None else repr(float(v))


def evaluate_windows(model, windows: dict, bands: FlowBands, stats: NormStats,
                     batch_size: int = 1024) -> dict:
    """Runs inference per period and scores it in m3/s.

    Args:
        model: trained model.
        windows: ``period -> WindowSet`` over a normalised table.
        bands: flow-band thresholds.
        stats: normalisation statistics used to recover m3/s.

    Returns:
        ``period -> PeriodResult``; empty periods carry ``metrics=None``.
    """
    from .training import predict

    out = {}
    for period, ws in windows.items():
        if ws is None or len(ws) == 0:
            out[period] = PeriodResult(period, np.zeros(0, np.int64), np.zeros(0), np.zeros(0), None)
            continue
        sim = denormalize_flow(predict(model, ws, batch_size), stats)
        obs = denormalize_flow(ws.y, stats)
        out[period] = PeriodResult(period, ws.targets.copy(), obs, sim,
                                   period_metrics(obs, sim, bands))
    return out


def evaluate_model(checkpoint, windows: dict, bands: FlowBands, stats: NormStats | None = None,
                   batch_size: int = 1024) -> dict:
    """Rebuilds the model from ``checkpoint`` and scores every period."""
    from .training import model_from_checkpoint

    stats = stats or checkpoint.norm_stats
    if stats is None:
        raise ValueError("checkpoint carries no normalisation statistics")
    model = model_from_checkpoint(checkpoint)
    return evaluate_windows(model, windows, bands, stats, batch_size)


def write_predictions(path, table, targets, observed, simulated) -> None:
    """CSV ``timestamp,observed,simulated``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "observed", "simulated"])
        for t, o, s in zip(targets, observed, simulated):
            w.writerow([table.time_of(int(t)).strftime("%Y-%m-%dT%H:00"), repr(float(o)),
                        repr(float(s))])


def write_lag_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "r"])
        for lag, r in enumerate(curve):
            w.writerow([lag, _cell(r)])
