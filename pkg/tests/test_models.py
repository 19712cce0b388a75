import numpy as np
import pytest

from memsnn import autodiff as ad
from memsnn.data import make_synthetic
from memsnn.models import MODEL_IDS, UnknownModelError, build_model
from memsnn.scl import softmax_ce
from memsnn.snn import EncoderConfig, encoder_forward

SMALL = EncoderConfig(conv_channels=(2, 4), pool=True, hidden=32)


@pytest.fixture(scope="module")
def batch():
    return make_synthetic(8, seed=0)


def test_unknown_model_lists_valid_ids():
    with pytest.raises(UnknownModelError, match="M1, M2, M3, M4, M5"):
        build_model("M9")


def test_m1_loss_is_plain_cross_entropy(batch):
    X, y = batch
    model = build_model("M1", seed=0, encoder=SMALL)
    res = model.forward(X, y)
    out = encoder_forward(X, model.params, SMALL)
    plain = softmax_ce(out.out_spikes.sum(axis=0), y).item() / len(y)
    assert abs(res.loss.item() - plain) <= 1e-12
    assert res.scl is None


def test_lambda_zero_removes_contrastive_term(batch):
    X, y = batch
    m1 = build_model("M1", seed=3, encoder=SMALL)
    m2 = build_model("M2", seed=3, encoder=SMALL, lambda_scl=0.0)
    assert m2.forward(X, y).loss.item() == m1.forward(X, y).loss.item()
    m2b = build_model("M2", seed=3, encoder=SMALL)
    r = m2b.forward(X, y)
    assert r.scl is not None
    assert r.loss.item() == pytest.approx((r.ce.item() + 0.1 * r.scl.item()) / len(y), rel=1e-12)


def test_m5_with_empty_memory_equals_m4(batch):
    X, y = batch
    m4 = build_model("M4", seed=1, encoder=SMALL, hgrn_hidden=16)
    m5 = build_model("M5", seed=1, encoder=SMALL, hgrn_hidden=16)
    assert m5.memory.is_empty
    a, b = m4.forward(X, y), m5.forward(X, y)
    np.testing.assert_array_equal(a.scores, b.scores)
    assert a.loss.item() == b.loss.item()
    assert a.spike_counts == b.spike_counts
    assert b.passthrough


def test_parameter_count_ordering():
    counts = {m: build_model(m, encoder=SMALL, hgrn_hidden=16).parameter_count() for m in MODEL_IDS}
    assert counts["M1"] == counts["M2"]
    assert counts["M2"] < counts["M3"] < counts["M5"]
    assert counts["M2"] < counts["M4"] < counts["M5"]


def test_hopfield_memory_changes_output_and_keeps_gradients(batch):
    X, y = batch
    m3 = build_model("M3", seed=2, encoder=SMALL)
    before = m3.forward(X).scores
    rng = np.random.default_rng(0)
    m3.refresh_memory(rng.random((8, 32)), np.arange(8) % 4)
    assert m3.memory.n_patterns == 4
    res = m3.forward(X, y)
    assert not res.passthrough
    assert not np.array_equal(res.scores, before)
    ad.backward(res.loss)
    assert np.abs(m3.params["conv1.w"].grad).sum() > 0
    m3.clear_memory()
    np.testing.assert_array_equal(m3.forward(X).scores, before)


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_every_model_backpropagates(model_id, batch):
    X, y = batch
    m = build_model(model_id, seed=0, encoder=SMALL, hgrn_hidden=16)
    res = m.forward(X, y, train=True, rng=np.random.default_rng(0))
    assert np.isfinite(res.loss.item())
    ad.backward(res.loss)
    assert all(p.grad.shape == p.data.shape for p in m.params.values())
    assert np.abs(m.params["fc_hidden.w"].grad).sum() > 0


def test_lif_head_option_runs(batch):
    X, y = batch
    m = build_model("M4", seed=0, encoder=SMALL, hgrn_hidden=16, hgrn_head="lif")
    res = m.forward(X, y)
    assert res.scores.shape == (8, 10)
    assert "lif_out" in res.spike_counts
    rep = m.profile(X)
    assert [line.layer for line in rep.layers] == ["input", "lif1", "lif2", "lif3", "lif_out"]


def test_rate_mode_uses_literal_cross_entropy(batch):
    X, y = batch
    m = build_model("M1", seed=0, encoder=SMALL, ce_mode="rate")
    res = m.forward(X, y)
    out = encoder_forward(X, m.params, SMALL)
    rates = out.out_spikes.data.mean(axis=0)
    want = -np.log(np.maximum(rates[np.arange(8), y], 1e-8)).sum() / 8
    assert res.loss.item() == pytest.approx(want, rel=1e-12)


def test_bad_options_rejected():
    with pytest.raises(ValueError):
        build_model("M1", ce_mode="hinge")
    with pytest.raises(ValueError):
        build_model("M4", hgrn_head="attention")


def test_hgrn_models_price_gate_ops(batch):
    X, _ = batch
    rep = build_model("M4", seed=0, encoder=SMALL, hgrn_hidden=16).profile(X)
    assert rep.extras["gate"]["ops"] == 25 * len(X)
    assert "gate" not in build_model("M2", seed=0, encoder=SMALL).profile(X).extras
