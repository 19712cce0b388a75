import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group
from sklearn.metrics import silhouette_samples as sk_samples

from memsnn.cluster import (
    UndefinedMetricError,
    analyze,
    interpret,
    silhouette_sample,
    silhouette_samples,
    silhouette_score,
    write_features_csv,
)


def brute_force(X, y):
    """Loop-by-loop silhouette with the singleton and zero-denominator conventions."""
    n = len(y)
    out = []
    for i in range(n):
        own = [j for j in range(n) if j != i and y[j] == y[i]]
        if not own:
            out.append(0.0)
            continue
        dist = lambda j: math.sqrt(sum((X[i][k] - X[j][k]) ** 2 for k in range(len(X[i]))))
        a = sum(dist(j) for j in own) / len(own)
        b = min(
            sum(dist(j) for j in range(n) if y[j] == c) / sum(1 for j in range(n) if y[j] == c)
            for c in set(y) if c != y[i]
        )
        m = max(a, b)
        out.append(0.0 if m == 0 else (b - a) / m)
    return np.array(out)


FOUR = (np.array([[0.0], [1.0], [10.0], [11.0]]), np.array([0, 0, 1, 1]))


def test_four_point_example():
    X, y = FOUR
    assert silhouette_sample(0, X, y) == pytest.approx((10.5 - 1) / 10.5, abs=1e-12)
    assert silhouette_sample(0, X, y) == pytest.approx(0.90476, abs=1e-5)
    s = silhouette_samples(X, y)
    np.testing.assert_allclose(s, brute_force(X.tolist(), y.tolist()), atol=1e-12)
    # inner points see a = 1, b = 9.5
    assert s[1] == pytest.approx(8.5 / 9.5)
    assert silhouette_score(X, y) == pytest.approx(s.mean())


def test_coincident_clusters_score_zero():
    X = np.zeros((4, 3))
    np.testing.assert_array_equal(silhouette_samples(X, [0, 0, 1, 1]), 0.0)


def test_singleton_member_scores_zero():
    X = np.array([[0.0], [1.0], [5.0]])
    assert silhouette_sample(2, X, [0, 0, 1]) == 0.0


def test_single_cluster_is_undefined():
    with pytest.raises(UndefinedMetricError):
        silhouette_score(np.random.default_rng(0).random((5, 2)), [1] * 5)


def test_brute_force_oracle_200_points():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 512))
    y = rng.integers(0, 5, 200)
    want = brute_force(X.tolist(), y.tolist())
    np.testing.assert_allclose(silhouette_samples(X, y), want, atol=1e-9, rtol=0)
    np.testing.assert_allclose(silhouette_samples(X, y), sk_samples(X, y), atol=1e-9)


def test_far_clusters_approach_one():
    rng = np.random.default_rng(1)
    centers = rng.normal(size=(3, 8)) * 1000
    y = np.repeat(np.arange(3), 20)
    X = centers[y] + rng.normal(size=(60, 8))
    assert silhouette_score(X, y) > 0.99


def test_one_blob_split_randomly_is_poor():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 16))
    y = rng.permutation(np.repeat([0, 1], 100))
    assert silhouette_score(X, y) <= 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_range_and_invariances(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 6))
    y = rng.integers(0, 3, 40)
    if len(np.unique(y)) < 2:
        return
    s = silhouette_samples(X, y)
    assert ((s >= -1) & (s <= 1)).all()
    R = special_ortho_group.rvs(6, random_state=int(rng.integers(2 ** 31)))
    np.testing.assert_allclose(silhouette_samples(X @ R.T + rng.normal(size=6) * 5, y), s, atol=1e-9)
    np.testing.assert_allclose(silhouette_samples(X * 37.5, y), s, atol=1e-9)


@pytest.mark.parametrize("score,band", [
    (0.687, "good"), (0.715, "excellent"), (0.25, "fair"), (0.5, "good"), (0.7, "excellent"),
    (0.2499, "weak"), (-1.0, "weak"), (1.0, "excellent"),
])
def test_interpret_bands(score, band):
    assert interpret(score) == band


def test_interpret_rejects_out_of_range():
    with pytest.raises(ValueError):
        interpret(1.01)


def test_analyze_subsamples_exactly_and_reproducibly(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.random((900, 12))
    y = rng.integers(0, 4, 900)
    rep, idx = analyze(X, y, max_samples=500, seed=7)
    assert rep.n_samples == 500 == len(idx) == len(set(idx))
    rep2, idx2 = analyze(X, y, max_samples=500, seed=7)
    np.testing.assert_array_equal(idx, idx2)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    rep.write_csv(a)
    rep2.write_csv(b)
    assert a.read_bytes() == b.read_bytes()


def test_report_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.random((60, 5))
    y = rng.integers(0, 3, 60)
    rep, _ = analyze(X, y)
    path = tmp_path / "sil.csv"
    rep.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [r["scope"] for r in rows] == [f"class_{c}" for c in sorted(rep.per_class)] + ["overall"]
    assert float(rows[-1]["silhouette"]) == rep.score
    for r in rows[:-1]:
        assert float(r["silhouette"]) == rep.per_class[int(r["scope"][6:])]


def test_features_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.random((10, 7))
    y = rng.integers(0, 3, 10)
    path = tmp_path / "f.csv"
    write_features_csv(path, X, y)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], y)
    np.testing.assert_array_equal(data[:, 1:], X)
