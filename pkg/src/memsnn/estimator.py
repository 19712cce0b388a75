"""scikit-learn style front end over :class:`HybridModel` and :func:`fit`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .data import TENSOR_SHAPE
from .models import HybridModel
from .training import TrainConfig, extract_features, fit


def check_spike_tensor(X, y=None, *, shape=TENSOR_SHAPE):
    """Validate a batch of binary spike tensors (n, T, C, H, W).

    A single (T, C, H, W) tensor is promoted to a batch of one. Returns
    ``X`` as uint8, plus ``y`` as an int array when given.
    """
    X = np.asarray(X)
    if X.ndim == len(shape):
        X = X[None]
    if X.ndim != len(shape) + 1 or X.shape[1:] != tuple(shape):
        raise ValueError(f"expected spike tensors of shape (n, {', '.join(map(str, shape))}), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    if X.dtype != np.uint8:
        if not np.isin(X, (0, 1)).all():
            raise ValueError("spike tensors must be binary (entries in {0, 1})")
        X = X.astype(np.uint8)
    elif X.max() > 1:
        raise ValueError("spike tensors must be binary (entries in {0, 1})")
    if y is None:
        return X
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-d, got shape {y.shape}")
    check_consistent_length(X, y)
    return X, y


class SpikingClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """One of the M1..M5 ablation models behind fit / predict / transform.

    ``transform`` returns the time-averaged 512-d LIF3 rates, the same
    features the silhouette analysis uses. A stratified slice of the training
    data (``validation_fraction``) drives model selection and early stopping.
    """

    def __init__(self, model_id="M1", epochs=20, lr_max=1e-3, weight_decay=1e-4, batch_size=64,
                 lambda_scl=0.1, tau=0.07, conv_channels=(4, 8), hidden=512, pool=True,
                 hgrn_hidden=512, augment=True, patience=5, validation_fraction=0.2, seed=0):
        self.model_id = model_id
        self.epochs = epochs
        self.lr_max = lr_max
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.lambda_scl = lambda_scl
        self.tau = tau
        self.conv_channels = conv_channels
        self.hidden = hidden
        self.pool = pool
        self.hgrn_hidden = hgrn_hidden
        self.augment = augment
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(model_id=self.model_id, epochs=self.epochs, t_max=self.epochs, lr_max=self.lr_max,
                           weight_decay=self.weight_decay, batch_size=self.batch_size,
                           lambda_scl=self.lambda_scl, tau=self.tau, conv_channels=tuple(self.conv_channels),
                           hidden=self.hidden, pool=self.pool, hgrn_hidden=self.hgrn_hidden,
                           augment=self.augment, patience=self.patience, seed=self.seed)

    def fit(self, X, y):
        X, y = check_spike_tensor(X, y)
        self.classes_ = unique_labels(y)
        cfg = self._train_config()
        n_out = cfg.encoder_config().n_out
        if len(self.classes_) > n_out:
            raise ValueError(f"at most {n_out} classes are supported, got {len(self.classes_)}")
        codes = np.searchsorted(self.classes_, y)
        if self.validation_fraction and len(y) > 1:
            X_tr, X_va, y_tr, y_va = train_test_split(X, codes, test_size=self.validation_fraction,
                                                      stratify=codes, random_state=self.seed)
        else:
            X_tr, X_va, y_tr, y_va = X, X, codes, codes
        self.model_ = HybridModel(cfg.model_config(), seed=self.seed)
        self.record_ = fit(self.model_, cfg, X_tr, y_tr, X_va, y_va)
        self.n_features_out_ = cfg.hidden
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_spike_tensor(X)
        return self.model_.predict_scores(X, self.batch_size)[:, :len(self.classes_)]

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        return extract_features(self.model_, check_spike_tensor(X), self.batch_size)

    def energy_report(self, X):
        check_is_fitted(self, "model_")
        return self.model_.profile(check_spike_tensor(X), self.batch_size)
