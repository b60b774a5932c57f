import csv
from datetime import datetime

import pytest

from cnnslstm.cli import main
from cnnslstm.data import ingest_csv

SMALL = ["--nchf", "2", "--long-len", "48", "--short-len", "6", "--hidden", "4",
         "--train-years", "2007", "--val-years", "2008", "--test-years", "2009",
         "--max-epochs", "2", "--patience", "2", "--batch-size", "64",
         "--train-stride", "50", "--val-stride", "50", "--test-stride", "50"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    assert main(["generate", "--years", "3", "--seed", "7", "-o", str(path)]) == 0
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_generate_hour_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["generate", "--years", "13", "--seed", "7", "-o", str(a)]) == 0
    assert main(["generate", "--years", "13", "--seed", "7", "-o", str(b)]) == 0
    table = ingest_csv(a)
    assert table.n_hours == (datetime(2020, 1, 1) - datetime(2007, 1, 1)).days * 24
    assert a.read_bytes() == b.read_bytes()


def test_generate_rejects_zero_years(tmp_path, capsys):
    assert main(["generate", "--years", "0", "-o", str(tmp_path / "x.csv")]) != 0
    assert "years" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_generator_file_values_survive_unless_flagged(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("years = 2\nseed = 4\n")
    out = tmp_path / "g.csv"
    assert main(["generate", "--gen-config", str(cfg), "-o", str(out)]) == 0
    assert ingest_csv(out).n_hours == (365 + 366) * 24
    assert main(["generate", "--gen-config", str(cfg), "--years", "1", "-o", str(out)]) == 0
    assert ingest_csv(out).n_hours == 365 * 24


def test_train_writes_layout_and_is_reproducible(dataset, tmp_path):
    args = ["train", "--data", str(dataset), "--arch", "cnnslstm", "--trials", "3", "--seed", "1"]
    assert main(args + SMALL + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + SMALL + ["--out", str(tmp_path / "b")]) == 0
    root = tmp_path / "a"
    assert sorted(p.name for p in root.iterdir()) == ["checkpoints", "logs", "predictions", "reports"]
    ckpts = sorted(p.name for p in (root / "checkpoints").iterdir())
    assert ckpts == ["best.ckpt", "trial_0.ckpt", "trial_1.ckpt", "trial_2.ckpt"]
    rows = read_rows(root / "reports" / "metrics.csv")
    assert rows[0] == ["trial", "period", "rmse", "r", "nse", "rmse_low", "rmse_middle",
                       "rmse_high", "rmse_peak"]
    assert [r[0] for r in rows[1:]].count("median") == 3
    assert ((root / "reports" / "metrics.csv").read_bytes()
            == (tmp_path / "b" / "reports" / "metrics.csv").read_bytes())
    assert read_rows(root / "logs" / "loss_log.csv")[0] == ["trial", "epoch", "train_loss", "val_loss"]
    assert read_rows(root / "predictions" / "median_test.csv")[0] == ["timestamp", "observed", "simulated"]


def test_config_file_and_flag_precedence(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("arch = lstmwdph\ntrials = 2\n" + "".join(
        f"{SMALL[i][2:].replace('-', '_')} = {SMALL[i + 1]}\n" for i in range(0, len(SMALL), 2)))
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--trials", "1",
                 "--out", str(out)]) == 0
    ckpts = sorted(p.name for p in (out / "checkpoints").iterdir())
    assert ckpts == ["best.ckpt", "trial_0.ckpt"]


def test_output_root_from_environment(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("CNNSLSTM_OUTPUT", str(tmp_path / "env"))
    assert main(["train", "--data", str(dataset), "--arch", "lstmwdph", "--trials", "1"] + SMALL) == 0
    assert (tmp_path / "env" / "checkpoints" / "best.ckpt").exists()


def test_evaluate_reproduces_training_metrics_and_lag_curve(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--arch", "cnnplstm", "--trials", "1",
                 "--out", str(run)] + SMALL) == 0
    ev = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoints" / "best.ckpt"),
                 "--data", str(dataset), "--out", str(ev), "--lag-corr", "precip_r1",
                 "--max-lag", "24"]) == 0
    trained = {r[1]: r for r in read_rows(run / "reports" / "metrics.csv")[1:] if r[0] == "0"}
    evaluated = {r[1]: r for r in read_rows(ev / "reports" / "eval_metrics.csv")[1:] if r[0] == "0"}
    assert trained["test"][2:] == evaluated["test"][2:]
    lag = read_rows(ev / "reports" / "lag_corr_precip_r1.csv")
    assert lag[0] == ["lag", "r"] and len(lag) == 26


def test_evaluate_rejects_wrong_width(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--arch", "lstmwdph", "--trials", "1",
                 "--out", str(run)] + SMALL) == 0
    narrow = tmp_path / "narrow.csv"
    assert main(["generate", "--years", "3", "--regions", "1", "-o", str(narrow)]) == 0
    code = main(["evaluate", "--checkpoint", str(run / "checkpoints" / "best.ckpt"),
                 "--data", str(narrow), "--out", str(tmp_path / "ev")])
    assert code != 0
    assert "5 input variables" in capsys.readouterr().err


def test_train_fails_fast_on_bad_lengths(dataset, tmp_path):
    code = main(["train", "--data", str(dataset), "--arch", "lstmwdph", "--daily-len", "3",
                 "--out", str(tmp_path / "x")] + SMALL)
    assert code != 0
    assert not (tmp_path / "x").exists()


def test_gradcheck_passes_and_corruption_is_named(capsys):
    assert main(["gradcheck", "--arch", "lstmwdph", "--trials", "5"]) == 0
    out = capsys.readouterr().out
    assert "model.lstmwdph" in out and "FAIL" not in out
    assert main(["gradcheck", "--arch", "lstmwdph", "--trials", "5", "--corrupt", "conv1d"]) == 1
    captured = capsys.readouterr()
    assert "FAILED: conv1d" in captured.err


def test_gradcheck_all_covers_five_architectures(capsys):
    assert main(["gradcheck", "--arch", "all", "--trials", "2"]) == 0
    out = capsys.readouterr().out
    for kind in ("cnn", "lstmwhour", "lstmwdph", "cnnplstm", "cnnslstm"):
        assert f"model.{kind} " in out


def test_compare_two_architectures(dataset, tmp_path):
    args = ["compare", "--data", str(dataset), "--archs", "cnnslstm,lstmwdph", "--trials", "1",
            "--seed", "3"] + SMALL
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    rows = read_rows(tmp_path / "a" / "reports" / "compare.csv")
    assert len(rows) == 3 and [r[0] for r in rows[1:]] == ["CNNsLSTM", "LSTMwDpH"]
    metrics = ["rmse", "r", "nse", "rmse_low", "rmse_middle", "rmse_high", "rmse_peak"]
    assert rows[0] == ["arch"] + [f"{p}_{m}" for p in ("train", "val", "test") for m in metrics]
    assert ((tmp_path / "a" / "reports" / "compare.csv").read_bytes()
            == (tmp_path / "b" / "reports" / "compare.csv").read_bytes())


def test_unknown_architecture_is_usage_error(dataset):
    assert main(["train", "--data", str(dataset), "--arch", "gru"]) == 2
