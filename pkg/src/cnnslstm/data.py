"""Hourly series tables: synthetic generation, CSV I/O, splitting,
normalisation, daily aggregation, sample windows and flow bands.
"""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta

import numpy as np

from .architectures import AssembledInput, ModelSpec
from .errors import ConfigError, IngestError, ShapeError
from .numerics import DTYPE, Rng

HOUR = timedelta(hours=1)
TIME_FORMAT = "%Y-%m-%dT%H:00"


@dataclass(frozen=True)
class SeriesTable:
    """Regularly spaced multivariate series; the last row of ``values`` is flow.

    Attributes:
        start: timestamp of column 0.
        names: labels of the ``n_vars`` input rows.
        values: ``(n_vars + 1, n_steps)`` float64 matrix.
        flow_name: label of the flow row.
        step_hours: 1 for hourly tables, 24 for daily aggregates.
        normalized: whether values are z-scores (flow may then be negative).
    """

    start: datetime
    names: tuple
    values: np.ndarray
    flow_name: str = "flow"
    step_hours: int = 1
    normalized: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=DTYPE)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if values.ndim != 2 or values.shape[0] != len(self.names) + 1:
            raise ShapeError(f"values must be ({len(self.names) + 1}, n_steps), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise IngestError("series table contains missing or non-finite values")
        if not self.normalized and np.any(values[-1] < 0):
            raise IngestError(f"negative {self.flow_name} values")

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_hours(self) -> int:
        return self.n_steps * self.step_hours

    @property
    def inputs(self) -> np.ndarray:
        return self.values[:-1]

    @property
    def flow(self) -> np.ndarray:
        return self.values[-1]

    @property
    def all_names(self) -> tuple:
        return self.names + (self.flow_name,)

    def time_of(self, index: int) -> datetime:
        return self.start + timedelta(hours=self.step_hours * int(index))

    def timestamps(self) -> list:
        return [self.time_of(i) for i in range(self.n_steps)]

    def index_of(self, when: datetime) -> int:
        delta = when - self.start
        return int(delta.total_seconds() // 3600) // self.step_hours

    def row(self, name: str) -> np.ndarray:
        try:
            return self.values[self.all_names.index(name)]
        except ValueError:
            raise KeyError(f"no variable named {name!r}; have {self.all_names}") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.all_names).encode())
        h.update(self.start.isoformat().encode())
        h.update(np.ascontiguousarray(self.values).astype("<f8").tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# synthetic watershed


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic snow-dominated watershed.

    Precipitation in mm/h, temperature in deg C, radiation in W/m2, storages
    in mm over the basin. ``temp_override`` pins air temperature to a
    constant; ``precip_scale=0`` gives a dry run.
    """

    years: int = 13
    start_year: int = 2007
    seed: int = 0
    n_precip_regions: int = 2
    area_km2: float = 14330.0
    latitude: float = 43.4
    # two-state wet/dry chain, per hour
    p_dry_to_wet: float = 0.03
    p_wet_to_dry: float = 0.2
    wet_season_amp: float = 0.5
    wet_season_peak_day: float = 330.0
    mean_intensity: float = 1.0
    region_spread: float = 0.5
    precip_scale: float = 1.0
    # air temperature
    temp_mean: float = 5.0
    temp_annual_amp: float = 14.0
    temp_diurnal_amp: float = 4.0
    temp_noise_sd: float = 0.6
    temp_noise_ar: float = 0.995
    temp_override: float | None = None
    # snow and runoff
    snow_threshold: float = 0.0
    degree_day: float = 0.08
    et_coef: float = 0.03
    fast_fraction: float = 0.5
    fast_k: float = 1.0 / 36.0
    slow_k: float = 1.0 / (24.0 * 45.0)
    snow0: float = 0.0
    fast0: float = 2.0
    slow0: float = 60.0

    def validate(self) -> None:
        if self.years < 1:
            raise ConfigError(f"years must be >= 1, got {self.years}")
        if self.n_precip_regions < 1:
            raise ConfigError("n_precip_regions must be >= 1")
        for name in ("p_dry_to_wet", "p_wet_to_dry", "fast_fraction", "fast_k", "slow_k"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("mean_intensity", "precip_scale", "degree_day", "et_coef", "area_km2",
                     "snow0", "fast0", "slow0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_text(cls, text: str) -> "SyntheticConfig":
        """Parses ``key = value`` lines; ``#`` starts a comment."""
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _parse_value(key, value, kinds[key])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _parse_value(key, value, kind):
    kind = str(kind)
    try:
        if value.lower() in ("none", ""):
            if "None" in kind:
                return None
            raise ValueError
        if kind.startswith("int"):
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


@dataclass
class WatershedStates:
    """Hourly internal state of the generator (mm over the basin)."""

    snow: np.ndarray
    fast: np.ndarray
    slow: np.ndarray
    runoff_mm: np.ndarray
    actual_et: np.ndarray
    basin_precip: np.ndarray
    initial_storage: float


def _hours_in_years(start_year: int, years: int) -> int:
    return int((datetime(start_year + years, 1, 1) - datetime(start_year, 1, 1)) / HOUR)


def mm_per_hour_to_m3s(area_km2: float) -> float:
    """Flow in m3/s produced by 1 mm/h of runoff over the basin."""
    return area_km2 * 1e3 / 3600.0


def generate_synthetic(config: SyntheticConfig | None = None, return_states: bool = False):
    """Simulates hourly forcings and routes them through a degree-day snowpack
    and two parallel linear reservoirs.

    Returns:
        A :class:`SeriesTable` (and :class:`WatershedStates` when
        ``return_states`` is set).
    """
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = Rng(cfg.seed)
    n = _hours_in_years(cfg.start_year, cfg.years)
    start = datetime(cfg.start_year, 1, 1)
    hours = np.arange(n, dtype=DTYPE)
    doy = hours / 24.0 % 365.2425
    hod = hours % 24.0
    season = 2.0 * math.pi * doy / 365.2425

    # wet/dry chain with a seasonal cycle in storm frequency
    wet_mod = 1.0 + cfg.wet_season_amp * np.cos(season - 2.0 * math.pi * cfg.wet_season_peak_day / 365.2425)
    u = rng.random(n)
    wet = np.zeros(n, dtype=bool)
    state = False
    p_dw = cfg.p_dry_to_wet * wet_mod
    for t in range(n):
        state = (u[t] >= cfg.p_wet_to_dry) if state else (u[t] < p_dw[t])
        wet[t] = state
    storm = rng.exponential(cfg.mean_intensity, n) * wet
    regions = storm[None, :] * np.exp(rng.normal(-0.5 * cfg.region_spread**2, cfg.region_spread,
                                                 (cfg.n_precip_regions, n)))
    regions *= cfg.precip_scale
    basin_p = regions.mean(axis=0)

    noise = rng.normal(0.0, cfg.temp_noise_sd, n)
    ar = np.empty(n)
    acc = 0.0
    for t in range(n):
        acc = cfg.temp_noise_ar * acc + noise[t]
        ar[t] = acc
    temp = (cfg.temp_mean
            - cfg.temp_annual_amp * np.cos(season - 2.0 * math.pi * 25 / 365.2425)
            - cfg.temp_diurnal_amp * np.cos(2.0 * math.pi * (hod - 3.0) / 24.0)
            + ar - 2.0 * wet)
    if cfg.temp_override is not None:
        temp = np.full(n, float(cfg.temp_override))

    lat = math.radians(cfg.latitude)
    decl = math.radians(23.44) * np.sin(2.0 * math.pi * (doy - 81.0) / 365.2425)
    hour_angle = 2.0 * math.pi * (hod - 12.0) / 24.0
    sin_elev = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)
    cloud = np.where(wet, 0.3, 0.8) + 0.1 * rng.normal(size=n)
    sw = 1000.0 * np.clip(sin_elev, 0.0, None) * np.clip(cloud, 0.05, 1.0)
    lw = 300.0 + 4.5 * temp + 40.0 * wet + rng.normal(0.0, 8.0, n)
    pet = cfg.et_coef * sw / 1000.0 * np.clip(temp + 5.0, 0.0, None)

    snow = np.empty(n)
    fast = np.empty(n)
    slow = np.empty(n)
    runoff = np.empty(n)
    aet = np.empty(n)
    s_snow, s_fast, s_slow = cfg.snow0, cfg.fast0, cfg.slow0
    for t in range(n):
        p = basin_p[t]
        if temp[t] < cfg.snow_threshold:
            s_snow += p
            liquid = 0.0
        else:
            liquid = p
        melt = min(s_snow, cfg.degree_day * max(temp[t] - cfg.snow_threshold, 0.0))
        s_snow -= melt
        liquid += melt
        s_fast += cfg.fast_fraction * liquid
        s_slow += (1.0 - cfg.fast_fraction) * liquid
        e = min(pet[t], s_fast)
        s_fast -= e
        q_fast = cfg.fast_k * s_fast
        q_slow = cfg.slow_k * s_slow
        s_fast -= q_fast
        s_slow -= q_slow
        snow[t], fast[t], slow[t] = s_snow, s_fast, s_slow
        runoff[t] = q_fast + q_slow
        aet[t] = e

    flow = runoff * mm_per_hour_to_m3s(cfg.area_km2)
    names = [f"precip_r{i + 1}" for i in range(cfg.n_precip_regions)]
    names += ["temp", "et", "sw_rad", "lw_rad"]
    values = np.vstack([regions, temp, pet, sw, lw, flow])
    table = SeriesTable(start, names, values)
    if not return_states:
        return table
    states = WatershedStates(snow, fast, slow, runoff, aet, basin_p,
                             cfg.snow0 + cfg.fast0 + cfg.slow0)
    return table, states


# ---------------------------------------------------------------------------
# CSV


def export_csv(table: SeriesTable, path) -> None:
    """Writes ``timestamp,<vars...>,flow`` with round-trip-exact floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *table.names, table.flow_name])
        cols = table.values.T
        for i in range(table.n_steps):
            w.writerow([table.time_of(i).strftime(TIME_FORMAT), *(repr(float(v)) for v in cols[i])])


def ingest_csv(path, flow_name: str = "flow") -> SeriesTable:
    """Reads an hourly CSV; rejects gaps, duplicates and non-numeric cells."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if not header or header[0].lower() != "timestamp":
            raise IngestError(f"{path}: first column must be 'timestamp'")
        if flow_name not in header[1:]:
            raise IngestError(f"{path}: no flow column named {flow_name!r}")
        width = len(header)
        times = []
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise IngestError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
            try:
                when = datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
            if times:
                expected = times[-1] + HOUR
                if when == times[-1]:
                    raise IngestError(f"{path}:{lineno}: duplicate timestamp {row[0]}")
                if when != expected:
                    raise IngestError(f"{path}:{lineno}: missing timestamp "
                                      f"{expected.strftime(TIME_FORMAT)} (found {row[0]})")
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError:
                bad = next(c for c in row[1:] if not _is_float(c))
                raise IngestError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            times.append(when)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    data = np.array(rows, dtype=DTYPE).T
    names = header[1:]
    fi = names.index(flow_name)
    order = [i for i in range(len(names)) if i != fi] + [fi]
    return SeriesTable(times[0], [names[i] for i in order[:-1]], data[order], flow_name)


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# splits and normalisation


@dataclass(frozen=True)
class IndexRange:
    """Half-open column range ``[start, stop)``."""

    start: int
    stop: int

    @property
    def end(self) -> int:
        """Last index inside the range."""
        return self.stop - 1

    def __len__(self):
        return max(self.stop - self.start, 0)

    def __contains__(self, i):
        return self.start <= i < self.stop


@dataclass(frozen=True)
class Splits:
    train: IndexRange
    val: IndexRange
    test: IndexRange

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def parse_years(text) -> tuple:
    """``"2007-2015"`` or ``"2016"`` -> inclusive ``(first, last)``."""
    if isinstance(text, (tuple, list)):
        return int(text[0]), int(text[1])
    parts = str(text).split("-")
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"bad year range {text!r}; expected YYYY or YYYY-YYYY")


def split_chronological(table: SeriesTable, train_years, val_years, test_years) -> Splits:
    """Index ranges covering whole calendar years."""
    spans = [parse_years(y) for y in (train_years, val_years, test_years)]
    ranges = []
    for label, (first, last) in zip(("train", "val", "test"), spans):
        if last < first:
            raise ConfigError(f"{label} years {first}-{last} are reversed")
        lo = table.index_of(datetime(first, 1, 1))
        hi = table.index_of(datetime(last + 1, 1, 1))
        if lo < 0 or hi > table.n_steps:
            raise ConfigError(f"{label} years {first}-{last} fall outside the table "
                              f"({table.start:%Y-%m-%d} .. {table.time_of(table.n_steps - 1):%Y-%m-%d})")
        ranges.append(IndexRange(lo, hi))
    for (a, sa), (b, sb) in zip(zip(("train", "val"), spans[:2]), zip(("val", "test"), spans[1:])):
        if sb[0] <= sa[1]:
            raise ConfigError(f"{a} years {sa} overlap or follow {b} years {sb}")
    return Splits(*ranges)


def default_splits(table: SeriesTable) -> Splits:
    """Last two whole years test, two before that validation, rest training."""
    first = table.start.year if table.start == datetime(table.start.year, 1, 1) else table.start.year + 1
    end = table.time_of(table.n_steps)
    last = end.year - 1 if end == datetime(end.year, 1, 1) else end.year - 1
    if last - first + 1 < 5:
        raise ConfigError("default split needs at least five whole years; pass explicit years")
    return split_chronological(table, (first, last - 4), (last - 3, last - 2), (last - 1, last))


@dataclass(frozen=True)
class NormStats:
    """Per-variable mean and standard deviation (inputs then flow)."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=DTYPE))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=DTYPE))
        bad = [n for n, s in zip(self.names, self.std) if not s > 0]
        if bad:
            raise ConfigError(f"zero standard deviation for {bad}; constant series cannot be normalised")

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["mean"], d["std"])


def fit_norm_stats(table: SeriesTable, span: IndexRange | None = None) -> NormStats:
    span = span or IndexRange(0, table.n_steps)
    block = table.values[:, span.start:span.stop]
    if block.shape[1] < 2:
        raise ConfigError("normalisation span needs at least two steps")
    return NormStats(table.all_names, block.mean(axis=1), block.std(axis=1))


def normalize(table: SeriesTable, stats: NormStats) -> SeriesTable:
    if stats.names != table.all_names:
        raise ShapeError(f"statistics are for {stats.names}, table has {table.all_names}")
    z = (table.values - stats.mean[:, None]) / stats.std[:, None]
    return replace(table, values=z, normalized=True)


def denormalize_flow(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=DTYPE) * stats.std[-1] + stats.mean[-1]


# ---------------------------------------------------------------------------
# daily aggregation and windows


def aggregate_daily(table: SeriesTable, precip_sum: bool = False) -> SeriesTable:
    """Mean of every variable over each whole day (midnight to midnight).

    With ``precip_sum`` variables whose name starts with ``precip`` are
    summed instead. Leading and trailing partial days are dropped with a
    warning.
    """
    if table.step_hours != 1:
        raise ConfigError("aggregate_daily expects an hourly table")
    lead = (24 - table.start.hour) % 24
    n_days = (table.n_steps - lead) // 24
    if n_days < 1:
        raise ConfigError("table does not contain a whole day")
    trail = table.n_steps - lead - 24 * n_days
    if lead or trail:
        warnings.warn(f"aggregate_daily: trimmed {lead} leading and {trail} trailing hours "
                      "of partial days", stacklevel=2)
    block = table.values[:, lead:lead + 24 * n_days].reshape(table.values.shape[0], n_days, 24)
    daily = block.mean(axis=2)
    if precip_sum:
        for i, name in enumerate(table.names):
            if name.startswith("precip"):
                daily[i] = block[i].sum(axis=1)
    return SeriesTable(table.start + timedelta(hours=lead), table.names, daily, table.flow_name,
                       step_hours=24, normalized=table.normalized)


@dataclass
class SampleWindow:
    """One example: windows ending at hour ``target`` and the target flow."""

    target: int
    long: np.ndarray | None
    short: np.ndarray | None
    daily: np.ndarray | None
    y: float


class WindowSet:
    """All admissible samples of one period, materialised lazily per batch."""

    def __init__(self, hourly: SeriesTable, daily: SeriesTable | None, spec: ModelSpec,
                 targets: np.ndarray):
        self.hourly = hourly
        self.daily = daily
        self.spec = spec
        self.targets = np.asarray(targets, dtype=np.int64)
        self._inputs = np.ascontiguousarray(hourly.inputs)
        self._flow = hourly.flow
        if daily is not None:
            self._daily_inputs = np.ascontiguousarray(daily.inputs)
            self._lead = int((daily.start - hourly.start) / HOUR)

    def __len__(self):
        return len(self.targets)

    @property
    def y(self) -> np.ndarray:
        return self._flow[self.targets]

    def day_of(self, t):
        """Last whole day ending at or before hour ``t`` (no look-ahead)."""
        return _last_whole_day(t, self._lead)

    def _gather(self, source, ends, length):
        cols = ends[:, None] + np.arange(1 - length, 1)[None, :]
        return source[:, cols].transpose(1, 0, 2)

    def batch(self, positions) -> tuple:
        """``(AssembledInput, y)`` for the given sample positions."""
        t = self.targets[np.asarray(positions)]
        spec = self.spec
        inp = AssembledInput()
        if spec.uses("long"):
            inp.long = self._gather(self._inputs, t, spec.long_len)
        if spec.uses("short"):
            inp.short = self._gather(self._inputs, t, spec.short_len)
        if spec.uses("daily"):
            inp.daily = self._gather(self._daily_inputs, self.day_of(t), spec.daily_len)
        return inp, self._flow[t]

    def __iter__(self):
        for k in range(len(self)):
            inp, y = self.batch([k])
            yield SampleWindow(int(self.targets[k]),
                               None if inp.long is None else inp.long[0],
                               None if inp.short is None else inp.short[0],
                               None if inp.daily is None else inp.daily[0], float(y[0]))

    def subset(self, positions) -> "WindowSet":
        return WindowSet(self.hourly, self.daily, self.spec, self.targets[np.asarray(positions, dtype=np.int64)])


def _last_whole_day(t, lead):
    # day d covers hours lead + 24 d .. lead + 24 d + 23
    return (np.asarray(t) - lead + 1) // 24 - 1


def admissible_targets(hourly: SeriesTable, daily: SeriesTable | None, spec: ModelSpec,
                       span: IndexRange, stride: int = 1) -> np.ndarray:
    need = 1
    if spec.uses("long"):
        need = max(need, spec.long_len)
    if spec.uses("short"):
        need = max(need, spec.short_len)
    lo = max(span.start, need - 1)
    hi = min(span.stop, hourly.n_steps)
    t = np.arange(lo, hi, dtype=np.int64)
    if spec.uses("daily"):
        if daily is None:
            raise ConfigError(f"{spec.kind} needs a daily table")
        lead = int((daily.start - hourly.start) / HOUR)
        day = _last_whole_day(t, lead)
        ok = (day >= spec.daily_len - 1) & (day < daily.n_steps)
        t = t[ok]
    if stride > 1:
        t = t[(t - span.start) % stride == 0]
    return t


def make_windows(hourly: SeriesTable, daily: SeriesTable | None, spec: ModelSpec,
                 span: IndexRange, stride: int = 1) -> WindowSet:
    """Samples for every admissible target hour in ``span`` (every
    ``stride``-th hour when subsampling)."""
    if hourly.n_vars != spec.n_vars:
        raise ShapeError(f"table has {hourly.n_vars} input variables, model expects {spec.n_vars}")
    targets = admissible_targets(hourly, daily, spec, span, stride)
    if len(targets) == 0:
        warnings.warn(f"no admissible target hours in range {span}", stacklevel=2)
    return WindowSet(hourly, daily, spec, targets)


# ---------------------------------------------------------------------------
# flow bands

BANDS = ("low", "middle", "high")


@dataclass(frozen=True)
class FlowBands:
    q25: float
    q75: float
    q95: float

    def __post_init__(self):
        if not self.q25 <= self.q75 <= self.q95:
            raise ConfigError(f"flow thresholds must be ordered, got {self}")

    def band_of(self, value: float) -> tuple:
        """``(band, is_peak)``; boundary values go to the upper band."""
        if value < self.q25:
            band = "low"
        elif value < self.q75:
            band = "middle"
        else:
            band = "high"
        return band, bool(value >= self.q95)

    def masks(self, values) -> dict:
        v = np.asarray(values, dtype=DTYPE)
        return {
            "low": v < self.q25,
            "middle": (v >= self.q25) & (v < self.q75),
            "high": v >= self.q75,
            "peak": v >= self.q95,
        }


def flow_bands(observed) -> FlowBands:
    """25th/75th/95th percentiles (linear interpolation) of observed flow."""
    obs = np.asarray(observed, dtype=DTYPE)
    if obs.size == 0:
        raise ShapeError("flow_bands needs a nonempty series")
    q25, q75, q95 = np.percentile(obs, [25.0, 75.0, 95.0])
    return FlowBands(float(q25), float(q75), float(q95))
