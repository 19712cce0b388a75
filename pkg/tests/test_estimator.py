import numpy as np
import pytest
from sklearn.base import clone

from memsnn.data import TENSOR_SHAPE, make_synthetic
from memsnn.estimator import SpikingClassifier, check_spike_tensor

SMALL = dict(epochs=2, batch_size=16, conv_channels=(2, 4), hidden=32, hgrn_hidden=16, seed=3)


@pytest.fixture(scope="module")
def fitted():
    X, y = make_synthetic(48, seed=1)
    labels = np.array(["north", "east", "south", "west"])[y]
    clf = SpikingClassifier(model_id="M2", **SMALL).fit(X, labels)
    return clf, X, labels


def test_check_spike_tensor_promotes_and_validates():
    x = np.zeros(TENSOR_SHAPE, dtype=np.int64)
    out = check_spike_tensor(x)
    assert out.shape == (1, *TENSOR_SHAPE) and out.dtype == np.uint8
    with pytest.raises(ValueError, match="shape"):
        check_spike_tensor(np.zeros((2, 25, 2, 34, 33)))
    with pytest.raises(ValueError, match="binary"):
        check_spike_tensor(np.full((1, *TENSOR_SHAPE), 0.5))
    with pytest.raises(ValueError, match="binary"):
        check_spike_tensor(np.full((1, *TENSOR_SHAPE), 3, dtype=np.uint8))
    with pytest.raises(ValueError):
        check_spike_tensor(np.zeros((2, *TENSOR_SHAPE)), [0, 1, 2])


def test_params_round_trip_through_clone():
    clf = SpikingClassifier(model_id="M4", epochs=3, tau=0.5)
    twin = clone(clf)
    assert twin.get_params() == clf.get_params()
    assert twin.set_params(model_id="M5").model_id == "M5"


def test_predict_returns_original_labels(fitted):
    clf, X, labels = fitted
    pred = clf.predict(X[:10])
    assert set(pred) <= set(labels)
    assert list(clf.classes_) == sorted(set(labels))
    assert clf.decision_function(X[:3]).shape == (3, 4)
    assert 0.0 <= clf.score(X, labels) <= 1.0


def test_transform_gives_hidden_rates(fitted):
    clf, X, _ = fitted
    feats = clf.transform(X[:5])
    assert feats.shape == (5, 32)
    assert ((feats >= 0) & (feats <= 1)).all()


def test_energy_report_counts_every_sample(fitted):
    clf, X, _ = fitted
    rep = clf.energy_report(X[:4])
    assert rep.samples == 4 and rep.total_uj >= 0


def test_fit_is_reproducible(fitted):
    clf, X, labels = fitted
    again = clone(clf).fit(X, labels)
    assert again.record_.train_loss == clf.record_.train_loss
    np.testing.assert_array_equal(again.decision_function(X[:6]), clf.decision_function(X[:6]))


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        SpikingClassifier().predict(np.zeros((1, *TENSOR_SHAPE)))


def test_too_many_classes():
    X = np.zeros((11, *TENSOR_SHAPE), dtype=np.uint8)
    with pytest.raises(ValueError, match="at most 10"):
        SpikingClassifier(**SMALL).fit(X, np.arange(11))
