import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsnn.data import DatasetMissingError
from memsnn.training import (
    AdamMoments,
    RunRecord,
    TrainConfig,
    accuracy,
    adam_step,
    clip_gradients,
    cosine_lr,
    early_stop,
    load_checkpoint,
    load_splits,
    save_checkpoint,
    train,
)

TINY = dict(conv_channels=(2, 4), hidden=32, hgrn_hidden=16, n_train=32, n_val=16, n_test=16,
            batch_size=16, epochs=2, t_max=2)


def test_cosine_schedule_points():
    assert cosine_lr(0, 1e-3, 1e-5, 30) == 1e-3
    assert cosine_lr(30, 1e-3, 1e-5, 30) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(15, 1e-3, 1e-5, 30) == pytest.approx((1e-3 + 1e-5) / 2)
    assert cosine_lr(45, 1e-3, 1e-5, 30) == pytest.approx(1e-5, abs=1e-18)


def test_clip_examples():
    g, norm = clip_gradients([np.array([0.3, 0.4])], 1.0)
    np.testing.assert_array_equal(g[0], [0.3, 0.4])
    assert norm == pytest.approx(0.5)
    g, norm = clip_gradients([np.array([3.0]), np.array([4.0])], 1.0)
    np.testing.assert_allclose(np.concatenate(g), [0.6, 0.8])
    assert norm == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_clipped_norm_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    grads = [rng.normal(size=s) * scale for s in [(3, 4), (5,), (2, 2, 2)]]
    clipped, _ = clip_gradients(grads, 1.0)
    assert math.sqrt(sum((g ** 2).sum() for g in clipped)) <= 1.0 + 1e-12


def test_adam_zero_grads_no_decay_is_still():
    p = {"w": np.array([1.0, -2.0])}
    m = AdamMoments()
    for _ in range(5):
        adam_step(p, {"w": np.zeros(2)}, m, lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_constant_gradient_step_tends_to_lr():
    p = {"w": np.array([0.0, 0.0])}
    m = AdamMoments()
    g = {"w": np.array([0.3, -7.0])}
    for _ in range(1000):
        prev = p["w"].copy()
        adam_step(p, g, m, lr=1e-3, weight_decay=0.0)
    step = p["w"] - prev
    np.testing.assert_allclose(step, -1e-3 * np.sign(g["w"]), rtol=0.01)


def test_decoupled_decay_factor():
    p = {"w": np.array([2.0])}
    m = AdamMoments()
    adam_step(p, {"w": np.zeros(1)}, m, lr=1e-3, weight_decay=1e-4)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 1e-7), rel=1e-15)


@pytest.mark.parametrize("history,expected", [
    ([0.1, 0.2, 0.3, 0.4, 0.5], False),
    ([0.1, 0.2, 0.3, 0.9, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], True),    # best epoch 3, now 9
    ([0.1, 0.2, 0.3, 0.9, 0.5, 0.5, 0.5, 0.5, 0.5], False),         # now 8
])
def test_early_stop_boundary(history, expected):
    assert early_stop(history, 5) is expected


def test_config_validation():
    with pytest.raises(ValueError, match="M1, M2"):
        TrainConfig(model_id="M0")
    with pytest.raises(ValueError):
        TrainConfig(lr_max=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3, "learning_rate": 1})
    cfg = TrainConfig(epochs=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_defaults_follow_the_training_recipe():
    cfg = TrainConfig()
    assert (cfg.lr_max, cfg.lr_min, cfg.weight_decay, cfg.dropout, cfg.clip_norm, cfg.patience) == \
        (1e-3, 0.0, 1e-4, 0.2, 1.0, 5)
    assert (cfg.lambda_scl, cfg.tau, cfg.t_max, cfg.batch_size) == (0.1, 0.07, 30, 64)


def test_missing_dataset_is_actionable(tmp_path):
    cfg = TrainConfig(dataset="nmnist", data_root=str(tmp_path / "nowhere"))
    with pytest.raises(DatasetMissingError, match="nowhere"):
        load_splits(cfg)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = TrainConfig(model_id="M3", seed=4, **TINY)
    model, record = train(cfg, out)
    return cfg, model, record, out


def test_run_artifacts_and_record(tiny_run):
    cfg, model, record, out = tiny_run
    for suffix in (".json", "_epochs.csv", ".ckpt"):
        assert (out / f"M3_seed4{suffix}").exists()
    assert record.best_val_accuracy == max(record.val_accuracy)
    assert all(np.isfinite(record.train_loss))
    assert record.test_accuracy is not None and record.energy is not None
    assert len(record.confusion) == 10 and sum(map(sum, record.confusion)) == cfg.n_test
    assert any("straight-through" in n for n in record.notes)
    assert model.memory.n_patterns > 0


def test_epoch_csv_round_trip(tiny_run):
    _, _, record, out = tiny_run
    rows = list(csv.DictReader(open(out / "M3_seed4_epochs.csv")))
    assert [float(r["train_loss"]) for r in rows] == record.train_loss
    assert [float(r["val_accuracy"]) for r in rows] == record.val_accuracy
    assert [float(r["lr"]) for r in rows] == record.lr


def test_checkpoint_round_trip_reproduces_accuracy(tiny_run, tmp_path):
    cfg, model, record, out = tiny_run
    loaded, cfg2 = load_checkpoint(out / "M3_seed4.ckpt")
    assert cfg2 == cfg
    _, _, Xv, yv, _, _ = load_splits(cfg)
    assert accuracy(loaded, Xv, yv) == accuracy(model, Xv, yv) == record.best_val_accuracy
    np.testing.assert_array_equal(loaded.memory.W, model.memory.W)
    save_checkpoint(tmp_path / "again.ckpt", loaded, cfg2)
    assert (tmp_path / "again.ckpt").read_bytes() == (out / "M3_seed4.ckpt").read_bytes()


def test_same_seed_same_trajectory():
    cfg = TrainConfig(model_id="M2", seed=9, **TINY)
    _, a = train(cfg)
    _, b = train(cfg)
    assert a.train_loss == b.train_loss
    assert a.val_accuracy == b.val_accuracy


def test_patience_trips_on_a_flat_run():
    cfg = TrainConfig(model_id="M1", seed=1, **{**TINY, "epochs": 12, "t_max": 12}, lr_max=1e-12)
    _, rec = train(cfg)
    assert rec.early_stopped
    assert len(rec.val_accuracy) == rec.best_epoch + cfg.patience + 2


def test_two_view_mode_runs():
    cfg = TrainConfig(model_id="M2", seed=2, scl_two_view=True, **{**TINY, "epochs": 1, "t_max": 1})
    _, rec = train(cfg)
    assert np.isfinite(rec.train_loss[0])


def test_record_json(tmp_path):
    rec = RunRecord("M1", 0, train_loss=[1.0], val_accuracy=[0.5], lr=[1e-3])
    rec.write_json(tmp_path / "r.json")
    import json
    assert json.loads((tmp_path / "r.json").read_text())["val_accuracy"] == [0.5]
