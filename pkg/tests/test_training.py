import numpy as np
import pytest

from cnnslstm import training
from cnnslstm.architectures import build_model, miniature_spec
from cnnslstm.data import IndexRange, SeriesTable, make_windows
from cnnslstm.errors import CorruptionError, FormatError, ShapeError, TrainingAbort
from cnnslstm.numerics import Param, Rng
from cnnslstm.training import (Checkpoint, TrainConfig, TrialResult, epoch_batches,
                               load_checkpoint, load_into, run_trials, save_checkpoint,
                               train_one_trial, trial_seed)


class ScriptedModel:
    """Reports a prescribed validation loss at every epoch.

    Validation targets are zero, so predicting sqrt(loss) yields exactly that
    MSE. The single parameter is set to the epoch number while training so
    the restored value reveals which epoch was kept.
    """

    def __init__(self, script):
        self.script = script
        self.p = Param([0.0], "epoch")
        self.epoch = 0
        self.updates = []
        self.validated = True

    def params(self):
        return [self.p]

    def zero_grad(self):
        self.p.zero_grad()

    def forward(self, inp, train=True):
        n = inp.long.shape[0]
        if train:
            if self.validated:
                self.epoch += 1
                self.updates.append((self.epoch, []))
                self.validated = False
            self.updates[-1][1].append(n)
            self.p.values[0] = self.epoch
            return np.zeros(n)
        self.validated = True
        return np.full(n, np.sqrt(self.script(self.epoch)))

    def backward(self, grad):
        return {}


def zero_flow_windows(n_samples, long_len=4):
    n = n_samples + long_len - 1
    table = SeriesTable(np.datetime64("2010-01-01T00").astype(object), ["x"],
                        np.vstack([np.arange(n, dtype=float), np.zeros(n)]), normalized=True)
    spec = miniature_spec("lstmwhour", 1, long_len=long_len, short_len=2)
    return make_windows(table, None, spec, IndexRange(0, n))


def scripted(epoch):
    # strictly decreasing through epoch 10, strictly increasing afterwards
    return 1.0 / epoch if epoch <= 10 else 0.1 + 0.01 * (epoch - 10)


def test_early_stopping_after_exactly_patience_epochs():
    model = ScriptedModel(scripted)
    ckpt, history = train_one_trial(model, zero_flow_windows(20), zero_flow_windows(5),
                                    TrainConfig(batch_size=8, patience=30), seed=0)
    assert len(history) == 40
    assert ckpt.epoch_of_best == 10
    assert ckpt.best_val_loss == pytest.approx(0.1, abs=1e-15)
    assert model.p.values[0] == 10.0
    assert ckpt.params[0][1][0] == 10.0


def test_ties_do_not_count_as_improvement():
    model = ScriptedModel(lambda e: 0.5)
    ckpt, history = train_one_trial(model, zero_flow_windows(4), zero_flow_windows(2),
                                    TrainConfig(batch_size=8, patience=3), seed=0)
    assert ckpt.epoch_of_best == 1 and len(history) == 4


def test_max_epochs_caps_training():
    model = ScriptedModel(lambda e: 1.0 / e)
    _, history = train_one_trial(model, zero_flow_windows(4), zero_flow_windows(2),
                                 TrainConfig(batch_size=8, patience=3, max_epochs=7), seed=0)
    assert len(history) == 7


def test_thousand_samples_make_two_updates_per_epoch():
    model = ScriptedModel(scripted)
    train_one_trial(model, zero_flow_windows(1000), zero_flow_windows(3),
                    TrainConfig(batch_size=512, patience=1, max_epochs=3), seed=0)
    assert all(sizes == [512, 488] for _, sizes in model.updates)


def test_epoch_batches_partition():
    rng = Rng(1)
    for n, b in ((1000, 512), (7, 3), (5, 10), (512, 512)):
        batches = epoch_batches(n, b, rng)
        joined = np.concatenate(batches)
        assert sorted(joined.tolist()) == list(range(n))
        assert all(len(x) == b for x in batches[:-1])


def test_non_finite_loss_aborts_with_location():
    model = ScriptedModel(scripted)
    model.forward = lambda inp, train=True: np.full(inp.long.shape[0], np.nan)
    with pytest.raises(TrainingAbort) as info:
        train_one_trial(model, zero_flow_windows(10), zero_flow_windows(2),
                        TrainConfig(batch_size=4), seed=0)
    assert info.value.epoch == 1 and info.value.batch == 0


def small_run(three_years, **kw):
    _, _, data = three_years
    spec = miniature_spec("lstmwdph", data.hourly.n_vars, long_len=48, short_len=6, hidden_size=4)
    cfg = TrainConfig(batch_size=32, patience=2, max_epochs=3, n_trials=2, base_seed=5, **kw)
    train = data.windows(spec, "train", 97)
    val = data.windows(spec, "val", 193)
    return spec, run_trials(spec, train, val, cfg, data.stats)


def test_same_seed_gives_bitwise_identical_checkpoints(three_years, tmp_path):
    _, first = small_run(three_years)
    _, second = small_run(three_years)
    assert first.best == second.best
    for a, b in zip(first.results, second.results):
        save_checkpoint(a.checkpoint, tmp_path / "a.ckpt")
        save_checkpoint(b.checkpoint, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert [r.seed for r in first.results] == [5 ^ 0, 5 ^ 1]


def test_parallel_trials_match_sequential(three_years):
    _, seq = small_run(three_years)
    _, data = three_years[0], three_years[2]
    spec = miniature_spec("lstmwdph", data.hourly.n_vars, long_len=48, short_len=6, hidden_size=4)
    cfg = TrainConfig(batch_size=32, patience=2, max_epochs=3, n_trials=2, base_seed=5)
    par = run_trials(spec, data.windows(spec, "train", 97), data.windows(spec, "val", 193), cfg,
                     data.stats, parallel=2)
    for a, b in zip(seq.results, par.results):
        for (_, x), (_, y) in zip(a.checkpoint.params, b.checkpoint.params):
            assert x.tobytes() == y.tobytes()


def fake_results(losses):
    out = []
    for k, loss in enumerate(losses):
        ckpt = None if loss is None else Checkpoint(None, [], best_val_loss=loss)
        out.append(TrialResult(k, trial_seed(0, k), ckpt, [], None if ckpt else "aborted"))
    return out


def test_best_trial_is_argmin_of_validation_loss(monkeypatch):
    losses = iter([0.5, 0.3, 0.4])
    monkeypatch.setattr(training, "_run_one",
                        lambda job: fake_results([0] * job[5] + [next(losses)])[job[5]])
    trials = run_trials(None, None, None, TrainConfig(n_trials=3))
    assert trials.best == 1


def test_all_aborted_trials_raise(monkeypatch):
    monkeypatch.setattr(training, "_run_one", lambda job: fake_results([None] * 3)[job[5]])
    with pytest.raises(TrainingAbort):
        run_trials(None, None, None, TrainConfig(n_trials=3))


def test_aborted_trial_is_skipped_by_selection(monkeypatch):
    results = fake_results([None, 0.9])
    monkeypatch.setattr(training, "_run_one", lambda job: results[job[5]])
    trials = run_trials(None, None, None, TrainConfig(n_trials=2))
    assert trials.best == 1 and len(trials.successful()) == 1


def make_checkpoint(spec, seed=3):
    model = build_model(spec, Rng(seed))
    return Checkpoint(spec, [(p.name, p.values.copy()) for p in model.params()],
                      best_val_loss=0.25, epoch_of_best=4, seed=seed, meta={"note": "x"})


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    spec = miniature_spec("cnnplstm", 3)
    ckpt = make_checkpoint(spec)
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt", expected_spec=spec)
    assert back.spec == spec and back.meta == {"note": "x"} and back.epoch_of_best == 4
    for (n1, a), (n2, b) in zip(ckpt.params, back.params):
        assert n1 == n2 and a.tobytes() == b.tobytes()
    model = build_model(spec, Rng(99))
    load_into(model, back)
    assert all(p.values.tobytes() == v.tobytes() for p, (_, v) in zip(model.params(), ckpt.params))


def test_truncated_and_padded_files_are_rejected(tmp_path):
    spec = miniature_spec("lstmwhour", 2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_checkpoint(spec), path)
    data = path.read_bytes()
    for cut in (len(data) - 1, len(data) // 2, 20, 9):
        path.write_bytes(data[:cut])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)
    path.write_bytes(data + b"\0")
    with pytest.raises(CorruptionError, match="trailing"):
        load_checkpoint(path)


def test_bad_magic_and_version(tmp_path):
    spec = miniature_spec("lstmwhour", 2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_checkpoint(spec), path)
    data = bytearray(path.read_bytes())
    path.write_bytes(b"NOTACKPT" + bytes(data[8:]))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    data[8] = 2
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_mismatched_spec_names_first_tensor(tmp_path):
    spec = miniature_spec("lstmwhour", 2, hidden_size=4)
    save_checkpoint(make_checkpoint(spec), tmp_path / "m.ckpt")
    with pytest.raises(ShapeError, match="lstm.W_ii"):
        load_checkpoint(tmp_path / "m.ckpt", expected_spec=miniature_spec("lstmwhour", 3, hidden_size=4))


def test_loss_log_csv(three_years, tmp_path):
    _, trials = small_run(three_years)
    training.write_loss_log(trials.results, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "trial,epoch,train_loss,val_loss"
    assert len(lines) == 1 + sum(len(r.history) for r in trials.results)
