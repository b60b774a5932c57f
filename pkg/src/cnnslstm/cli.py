"""Command-line entry point: ``cnnslstm {generate,train,evaluate,gradcheck,compare}``.

Settings resolve in this order: command-line flags, then ``--config`` file
keys (``key = value``, same names as the long flags), then built-in
defaults. Outputs go under ``--out`` (default ``$CNNSLSTM_OUTPUT`` or
``./runs``) in ``checkpoints/``, ``logs/``, ``reports/`` and ``predictions/``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .architectures import DISPLAY_NAMES, KINDS, ModelSpec, serial_stack_for
from .data import (SyntheticConfig, default_splits, export_csv, generate_synthetic, ingest_csv,
                   split_chronological)
from .errors import CnnsLstmError, ConfigError, ShapeError
from .evaluation import METRICS, PERIODS, lag_correlation, write_lag_curve, write_predictions
from .gradcheck import LAYER_CHECKS, format_table, run_checks
from .pipeline import Strides, median_predictions, prepare, train_and_evaluate
from .training import TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint, \
    write_loss_log

log = logging.getLogger("cnnslstm")

OUTPUT_ENV = "CNNSLSTM_OUTPUT"
SUBDIRS = ("checkpoints", "logs", "reports", "predictions")

DEFAULTS = {
    "years": 13, "start_year": 2007, "seed": 0, "regions": 2,
    "flow_name": "flow", "arch": "cnnslstm", "archs": "cnnslstm,lstmwdph,lstmwhour",
    "nchf": 8, "long_len": 5040, "short_len": 210, "daily_len": None, "hidden": 30,
    "align": "strict", "trials": 5, "batch_size": 512, "patience": 30, "max_epochs": 500,
    "lr": 1e-3, "train_years": None, "val_years": None, "test_years": None,
    "train_stride": 1, "val_stride": 1, "test_stride": 1, "parallel_trials": 1,
    "precip_sum": False, "max_lag": 24, "lag_corr": None, "corrupt": None,
}

INT_KEYS = {"years", "start_year", "seed", "regions", "nchf", "long_len", "short_len",
            "daily_len", "hidden", "trials", "batch_size", "patience", "max_epochs",
            "train_stride", "val_stride", "test_stride", "parallel_trials", "max_lag"}
FLOAT_KEYS = {"lr"}
BOOL_KEYS = {"precip_sum"}


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(key, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    if key in BOOL_KEYS:
        return value.lower() in ("1", "true", "yes", "on")
    return value


def resolve(args: argparse.Namespace) -> dict:
    """Merges flags over config-file keys over defaults."""
    settings = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        from_file = read_config(args.config)
        settings.update(from_file)
        explicit.update(from_file)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "func", "config", "verbose"):
            settings[key] = value
            explicit.add(key)
    settings = {k: _coerce(k, v) for k, v in settings.items()}
    settings["explicit"] = explicit
    return settings


def _out_dir(settings) -> Path:
    root = Path(settings.get("out") or os.environ.get(OUTPUT_ENV, "runs"))
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def _kind(name: str) -> str:
    key = name.strip().lower()
    for kind, display in DISPLAY_NAMES.items():
        if key in (kind, display.lower()):
            return kind
    raise ConfigError(f"unknown architecture {name!r}; choose from {', '.join(KINDS)}")


def build_spec(settings, kind: str, n_vars: int) -> ModelSpec:
    long_len, short_len = settings["long_len"], settings["short_len"]
    daily_len = settings["daily_len"] or short_len
    conv = None
    if kind == "cnnslstm" and settings["align"] == "strict":
        conv = serial_stack_for(long_len, short_len)
    return ModelSpec(kind=kind, n_vars=n_vars, nchf=settings["nchf"], long_len=long_len,
                     short_len=short_len, daily_len=daily_len, hidden_size=settings["hidden"],
                     conv=conv, align=settings["align"])


def build_train_config(settings) -> TrainConfig:
    cfg = TrainConfig(batch_size=settings["batch_size"], patience=settings["patience"],
                      max_epochs=settings["max_epochs"], n_trials=settings["trials"],
                      lr=settings["lr"], base_seed=settings["seed"])
    cfg.validate()
    return cfg


def _splits(settings, table):
    years = (settings["train_years"], settings["val_years"], settings["test_years"])
    if all(y is None for y in years):
        return default_splits(table)
    if any(y is None for y in years):
        raise ConfigError("give all of --train-years, --val-years and --test-years, or none")
    return split_chronological(table, *years)


def _strides(settings) -> Strides:
    s = Strides(settings["train_stride"], settings["val_stride"], settings["test_stride"])
    if min(s.train, s.val, s.test) < 1:
        raise ConfigError("strides must be >= 1")
    return s


def _split_meta(splits, table):
    return {p: [table.time_of(r.start).year, table.time_of(r.end).year] for p, r in splits.items()}


# ---------------------------------------------------------------------------
# commands


def cmd_generate(settings) -> int:
    if settings.get("gen_config"):
        cfg = SyntheticConfig.from_text(Path(settings["gen_config"]).read_text())
    else:
        cfg = SyntheticConfig()
    # a generator file keeps its own values unless a flag overrides them
    for key, attr in (("years", "years"), ("seed", "seed"), ("start_year", "start_year"),
                      ("regions", "n_precip_regions")):
        if key in settings["explicit"] or not settings.get("gen_config"):
            setattr(cfg, attr, settings[key])
    cfg.validate()
    if not settings.get("output"):
        raise ConfigError("generate needs -o/--output")
    table = generate_synthetic(cfg)
    export_csv(table, settings["output"])
    print(f"wrote {table.n_steps} hourly rows x {table.n_vars} inputs + flow to {settings['output']}")
    return 0


def _load_data(settings):
    if not settings.get("data"):
        raise ConfigError("--data is required")
    table = ingest_csv(settings["data"], settings["flow_name"])
    splits = _splits(settings, table)
    return table, splits


def _write_run(root: Path, outcome, table, prefix: str = "") -> None:
    for r in outcome.trials.results:
        if r.ok:
            save_checkpoint(r.checkpoint, root / "checkpoints" / f"{prefix}trial_{r.trial}.ckpt")
    best = outcome.trials.best
    shutil.copyfile(root / "checkpoints" / f"{prefix}trial_{best}.ckpt",
                    root / "checkpoints" / f"{prefix}best.ckpt")
    write_loss_log(outcome.trials.results, root / "logs" / f"{prefix}loss_log.csv")
    outcome.report.write_csv(root / "reports" / f"{prefix}metrics.csv")
    outcome.report.write_json(root / "reports" / f"{prefix}metrics.json")
    for trial, periods in outcome.results.items():
        for period, res in periods.items():
            if res.metrics is not None:
                write_predictions(root / "predictions" / f"{prefix}trial_{trial}_{period}.csv",
                                  table, res.targets, res.observed, res.simulated)
    for period in PERIODS:
        med = median_predictions(outcome.results, period)
        if med is not None:
            write_predictions(root / "predictions" / f"{prefix}median_{period}.csv", table, *med)


def _train_one(settings, kind, table, splits, root, prefix=""):
    spec = build_spec(settings, kind, table.n_vars)
    config = build_train_config(settings)
    strides = _strides(settings)
    data = prepare(table, splits, settings["precip_sum"])
    for period in PERIODS:
        if len(data.windows(spec, period, strides.of(period))) == 0 and period != "test":
            raise ConfigError(f"no admissible {period} samples for {kind} with these windows")
    outcome = train_and_evaluate(spec, data, config, strides, settings["parallel_trials"])
    meta = {"splits": _split_meta(splits, table), "strides": [strides.train, strides.val, strides.test],
            "precip_sum": settings["precip_sum"], "flow_name": settings["flow_name"],
            "data_digest": table.digest()}
    for r in outcome.trials.results:
        if r.ok:
            r.checkpoint.meta.update(meta)
    _write_run(root, outcome, table, prefix)
    return outcome


def cmd_train(settings) -> int:
    kind = _kind(settings["arch"])
    table, splits = _load_data(settings)
    build_spec(settings, kind, table.n_vars)
    build_train_config(settings)
    root = _out_dir(settings)
    outcome = _train_one(settings, kind, table, splits, root)
    aborted = [r for r in outcome.trials.results if not r.ok]
    med = outcome.report.median_of("test", "nse")
    print(f"{DISPLAY_NAMES[kind]}: {len(outcome.trials.results) - len(aborted)} trials, "
          f"best trial {outcome.trials.best}, median test NSE "
          f"{'n/a' if med is None else f'{med:.3f}'}; outputs in {root}")
    return 1 if aborted else 0


def cmd_evaluate(settings) -> int:
    from .evaluation import MetricsReport, evaluate_windows

    if not settings.get("checkpoint"):
        raise ConfigError("--checkpoint is required")
    ckpt = load_checkpoint(settings["checkpoint"])
    settings = dict(settings)
    settings["flow_name"] = ckpt.meta.get("flow_name", settings["flow_name"])
    table = ingest_csv(settings["data"], settings["flow_name"]) if settings.get("data") else None
    if table is None:
        raise ConfigError("--data is required")
    if table.n_vars != ckpt.spec.n_vars:
        raise ShapeError(f"dataset has {table.n_vars} input variables but the checkpoint's "
                         f"model expects {ckpt.spec.n_vars}")
    if any(settings[k] is not None for k in ("train_years", "val_years", "test_years")):
        splits = _splits(settings, table)
    elif "splits" in ckpt.meta:
        s = ckpt.meta["splits"]
        splits = split_chronological(table, s["train"], s["val"], s["test"])
    else:
        splits = default_splits(table)
    strides = Strides(*ckpt.meta.get("strides", [1, 1, 1]))
    root = _out_dir(settings)
    data = prepare(table, splits, ckpt.meta.get("precip_sum", False))
    model = model_from_checkpoint(ckpt)
    windows = {p: data.windows(ckpt.spec, p, strides.of(p)) for p in PERIODS}
    scored = evaluate_windows(model, windows, data.bands, ckpt.norm_stats)
    trial = ckpt.meta.get("trial", 0)
    report = MetricsReport(meta={"checkpoint": str(settings["checkpoint"]),
                                 "data_digest": table.digest(), "spec": ckpt.spec.to_dict()})
    for period, res in scored.items():
        report.add(trial, period, res.metrics)
        if res.metrics is not None:
            write_predictions(root / "predictions" / f"eval_{period}.csv", table, res.targets,
                              res.observed, res.simulated)
    report.write_csv(root / "reports" / "eval_metrics.csv")
    report.write_json(root / "reports" / "eval_metrics.json")
    if settings.get("lag_corr"):
        name = settings["lag_corr"]
        curve = lag_correlation(table.flow, table.row(name), settings["max_lag"])
        write_lag_curve(root / "reports" / f"lag_corr_{name}.csv", curve)
    for period in PERIODS:
        m = scored[period].metrics
        if m is not None:
            print(f"{period:>5}: rmse {m['rmse']:.2f} m3/s  nse {_fmt(m['nse'])}  r {_fmt(m['r'])}")
    return 0


def _fmt(v):
    return "n/a" if v is None else f"{v:.3f}"


def cmd_gradcheck(settings) -> int:
    arch = settings["arch"] if "arch" in settings["explicit"] else "all"
    archs = list(KINDS) if arch == "all" else [_kind(a) for a in arch.split(",")]
    corrupt = settings.get("corrupt")
    if corrupt and corrupt not in LAYER_CHECKS and not corrupt.startswith("model."):
        raise ConfigError(f"unknown component {corrupt!r}; choose from {', '.join(LAYER_CHECKS)}")
    results = run_checks(archs=archs, n_trials=settings["trials_gc"], seed=settings["seed"],
                         corrupt=corrupt)
    print(format_table(results))
    failed = [r.component for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_compare(settings) -> int:
    kinds = [_kind(a) for a in str(settings["archs"]).split(",") if a.strip()]
    table, splits = _load_data(settings)
    for kind in kinds:
        build_spec(settings, kind, table.n_vars)
    build_train_config(settings)
    root = _out_dir(settings)
    rows = []
    for kind in kinds:
        outcome = _train_one(settings, kind, table, splits, root, prefix=f"{kind}_")
        row = {"arch": DISPLAY_NAMES[kind]}
        for period in PERIODS:
            for metric in METRICS:
                row[f"{period}_{metric}"] = outcome.report.median_of(period, metric)
        rows.append(row)
    path = root / "reports" / "compare.csv"
    columns = ["arch"] + [f"{p}_{m}" for p in PERIODS for m in METRICS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([row["arch"]] + ["" if row[c] is None else repr(float(row[c]))
                                        for c in columns[1:]])
    print(f"{'arch':<10} " + " ".join(f"{m:>11}" for m in METRICS) + "   (test medians)")
    for row in rows:
        print(f"{row['arch']:<10} " + " ".join(
            f"{'':>11}" if row[f'test_{m}'] is None else f"{row[f'test_{m}']:>11.3f}"
            for m in METRICS))
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_model_flags(p):
    p.add_argument("--nchf", type=int, help="channels of the first conv layer (default 8)")
    p.add_argument("--long-len", type=int, help="long hourly window T (default 5040)")
    p.add_argument("--short-len", type=int, help="short hourly window I (default 210)")
    p.add_argument("--daily-len", type=int, help="daily window in days (default = short-len)")
    p.add_argument("--hidden", type=int, help="LSTM hidden size (default 30)")
    p.add_argument("--align", choices=("strict", "zero_pad"),
                   help="serial model: require feature-map length == short-len, or zero-pad")


def _add_data_flags(p):
    p.add_argument("--data", help="hourly CSV (timestamp,<vars>,flow)")
    p.add_argument("--flow-name", help="name of the flow column (default 'flow')")
    p.add_argument("--train-years", help="e.g. 2007-2015")
    p.add_argument("--val-years", help="e.g. 2016-2017")
    p.add_argument("--test-years", help="e.g. 2018-2019")
    p.add_argument("--precip-sum", action="store_const", const=True,
                   help="sum precipitation when aggregating to days (default mean)")
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")


def _add_train_flags(p):
    p.add_argument("--trials", type=int, help="independent trials (default 5)")
    p.add_argument("--seed", type=int, help="base seed; trial k uses seed XOR k")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 512)")
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs (default 30)")
    p.add_argument("--max-epochs", type=int, help="epoch cap (default 500)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--train-stride", type=int, help="use every k-th training target hour")
    p.add_argument("--val-stride", type=int, help="use every k-th validation target hour")
    p.add_argument("--test-stride", type=int, help="use every k-th test target hour")
    p.add_argument("--parallel-trials", type=int, help="concurrent trials (default 1)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnnslstm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic snow-dominated watershed CSV")
    g.add_argument("--years", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--start-year", type=int)
    g.add_argument("--regions", type=int, help="number of precipitation sub-regions (default 2)")
    g.add_argument("--gen-config", help="generator key = value file")
    g.add_argument("-o", "--output")
    g.add_argument("--config")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one architecture over several trials")
    t.add_argument("--arch", help=f"one of {', '.join(KINDS)}")
    t.add_argument("--config")
    _add_data_flags(t)
    _add_model_flags(t)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint and export predictions")
    e.add_argument("--checkpoint")
    e.add_argument("--lag-corr", help="also write the flow-vs-VAR lag correlation curve")
    e.add_argument("--max-lag", type=int, help="largest lag in hours (default 24)")
    e.add_argument("--config")
    _add_data_flags(e)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    c.add_argument("--arch", help="architecture list or 'all' (default all)")
    c.add_argument("--trials", dest="trials_gc", type=int, default=100)
    c.add_argument("--seed", type=int)
    c.add_argument("--corrupt", help="negative control: scale this component's gradient by 1.1")
    c.add_argument("--config")
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("compare", help="train several architectures and tabulate test medians")
    m.add_argument("--archs", help="comma-separated architectures")
    m.add_argument("--config")
    _add_data_flags(m)
    _add_model_flags(m)
    _add_train_flags(m)
    m.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(resolve(args))
    except ConfigError as exc:
        # invalid settings are usage errors, like argparse's own
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CnnsLstmError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
