import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsnn import autodiff as ad
from memsnn.scl import CE_EPS, ce_loss, normalize_features, scl_loss, softmax_ce, total_loss


def brute_force_scl(z, labels, tau):
    """Double loop straight from the definition."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        pos = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in range(n) if a != i)
        acc = 0.0
        for p in pos:
            acc += -math.log(math.exp(float(z[i] @ z[p]) / tau) / denom)
        total += acc / len(pos)
    return total


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_normalize_examples():
    h = np.zeros(512)
    h[:2] = [3, 4]
    z, excluded = normalize_features(h)
    np.testing.assert_allclose(z.data[:2], [0.6, 0.8])
    assert not excluded
    u = unit_rows(np.random.default_rng(0), 1, 512)[0]
    np.testing.assert_allclose(normalize_features(u)[0].data, u, atol=1e-15)
    z0, ex0 = normalize_features(np.zeros(512))
    assert ex0 and not z0.data.any()


def test_normalized_rows_are_unit():
    h = np.random.default_rng(1).random((8, 512))
    z, _ = normalize_features(h)
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-6)


def test_two_same_label_samples_give_zero():
    z = unit_rows(np.random.default_rng(2), 2, 512)
    assert scl_loss(z, [1, 1]).item() == 0.0


def test_four_sample_batch_matches_double_loop():
    rng = np.random.default_rng(3)
    z = unit_rows(rng, 4, 512)
    assert scl_loss(z, [0, 0, 1, 1]).item() == pytest.approx(brute_force_scl(z, [0, 0, 1, 1], 0.07), abs=1e-10)


def test_ideal_clusters_closed_form():
    tau = 0.07
    e = np.eye(512)
    z = np.stack([e[0], e[0], e[1], e[1]])
    want = 4 * math.log(1 + 2 * math.exp(-1 / tau))
    assert scl_loss(z, [0, 0, 1, 1], tau).item() == pytest.approx(want, rel=1e-12)
    assert want < 1e-5
    # three per class: the same-class denominator holds two equal positives
    z3 = np.stack([e[0]] * 3 + [e[1]] * 3)
    want3 = 6 * math.log(2 + 3 * math.exp(-1 / tau))
    assert scl_loss(z3, [0, 0, 0, 1, 1, 1], tau).item() == pytest.approx(want3, rel=1e-12)


def test_unique_label_anchor_contributes_nothing():
    rng = np.random.default_rng(4)
    z = unit_rows(rng, 5, 16)
    labels = [0, 0, 1, 1, 2]
    assert scl_loss(z, labels).item() == pytest.approx(brute_force_scl(z, labels, 0.07), abs=1e-10)


def test_scl_errors():
    with pytest.raises(ValueError):
        scl_loss(np.ones((1, 4)), [0])
    with pytest.raises(ValueError):
        scl_loss(unit_rows(np.random.default_rng(0), 3, 4), [0, 0, 1], tau=0.0)


def test_mean_reduction_divides_by_anchors_with_positives():
    z = unit_rows(np.random.default_rng(5), 5, 8)
    labels = [0, 0, 1, 1, 2]
    s = scl_loss(z, labels).item()
    assert scl_loss(z, labels, reduction="mean").item() == pytest.approx(s / 4, rel=1e-14)


def test_invalid_rows_are_dropped_everywhere():
    rng = np.random.default_rng(6)
    z = unit_rows(rng, 6, 8)
    labels = np.array([0, 0, 1, 1, 0, 1])
    valid = np.array([True, True, True, True, False, False])
    got = scl_loss(z, labels, valid=valid).item()
    assert got == pytest.approx(brute_force_scl(z[:4], labels[:4], 0.07), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_scl_matches_oracle_nonnegative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    z = unit_rows(rng, 16, 32)
    labels = rng.integers(0, 4, 16)
    loss = scl_loss(z, labels).item()
    assert loss == pytest.approx(brute_force_scl(z, labels, 0.07), abs=1e-10, rel=1e-12)
    assert loss >= 0
    perm = rng.permutation(16)
    assert scl_loss(z[perm], labels[perm]).item() == pytest.approx(loss, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scl_gradient_through_normalisation(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, 8)
    h0 = rng.random((8, 12)) + 0.1

    def f(h):
        z, _ = normalize_features(h)
        return scl_loss(z, labels, tau=0.5)

    assert ad.finite_diff_check(f, h0) < 1e-4


# ---------------------------------------------------------------- cross-entropy


def test_ce_examples():
    rates = np.zeros((3, 10))
    rates[0, 2] = 1.0
    rates[1, 4] = 0.2
    labels = [2, 4, 7]
    per = [ce_loss(rates[i:i + 1], labels[i:i + 1]).item() for i in range(3)]
    assert per[0] == 0.0
    assert per[1] == pytest.approx(1.6094379, abs=1e-7)
    assert per[2] == pytest.approx(-math.log(CE_EPS))
    assert ce_loss(rates, labels).item() == pytest.approx(sum(per))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ce_ignores_non_target_rates(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, 5)
    a = rng.random((5, 10))
    b = rng.random((5, 10))
    b[np.arange(5), labels] = a[np.arange(5), labels]
    assert ce_loss(a, labels).item() == ce_loss(b, labels).item()


def test_softmax_ce_matches_direct_formula():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, 10))
    y = np.array([1, 0, 9, 3])
    want = -sum(s[i, y[i]] - math.log(np.exp(s[i]).sum()) for i in range(4))
    assert softmax_ce(s, y).item() == pytest.approx(want, rel=1e-12)


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 0.1).item() == pytest.approx(1.2)
    ce = ad.Value(0.7)
    assert total_loss(ce, 5.0, 0.0) is ce
    assert total_loss(0.0, 0.0, 0.1).item() == 0.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.1)
