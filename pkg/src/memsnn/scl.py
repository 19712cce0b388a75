"""Supervised contrastive loss and the classification objectives."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Value

CE_EPS = 1e-8


def normalize_features(h, eps: float = 1e-12) -> tuple[Value, np.ndarray]:
    """L2-normalise each row of ``h``.

    Returns the unit vectors and a boolean ``excluded`` mask marking rows whose
    norm is below ``eps`` (silent samples). Those rows come back as zeros.
    """
    h = ad.as_value(h)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    z = ad.l2_normalize(h, eps)
    excluded = np.linalg.norm(h.data, axis=-1) < eps
    if squeeze:
        return z.reshape(z.shape[1]), excluded[0]
    return z, excluded


def scl_loss(z, labels, tau: float = 0.07, *, reduction: str = "sum",
             valid: np.ndarray | None = None) -> Value:
    """Temperature-scaled supervised contrastive loss over a batch of unit vectors.

    Anchors without a same-label partner contribute zero. Rows flagged
    invalid (e.g. silent samples) are dropped from anchors, positives and
    denominators alike. ``reduction`` is "sum" over anchors or "mean" over the
    anchors that have positives.
    """
    z = ad.as_value(z)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError(f"scl_loss needs at least 2 samples, got {n}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    ok = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)

    others = ~np.eye(n, dtype=bool) & ok[None, :] & ok[:, None]
    positives = others & (labels[:, None] == labels[None, :])
    n_pos = positives.sum(axis=1)
    weights = np.where(n_pos[:, None] > 0, positives / np.maximum(n_pos, 1)[:, None], 0.0)

    sim = (z @ z.T) * (1.0 / tau)
    lse = ad.masked_logsumexp(sim, others, axis=1)
    log_prob = sim - lse.reshape(n, 1)
    loss = -(log_prob * weights).sum()
    if reduction == "mean":
        loss = loss * (1.0 / max(int((n_pos > 0).sum()), 1))
    return loss


def ce_loss(rates, labels, eps: float = CE_EPS) -> Value:
    """Rate-coded cross-entropy: ``-sum_i log(max(rate[i, y_i], eps))``.

    Only the target-class rate of each sample enters the loss.
    """
    rates = ad.as_value(rates)
    labels = np.asarray(labels, dtype=int)
    onehot = np.zeros(rates.shape)
    onehot[np.arange(rates.shape[0]), labels] = 1.0
    picked = (rates * onehot).sum(axis=1)
    return -ad.clamp_log(picked, eps).sum()


def softmax_ce(scores, labels) -> Value:
    """Summed softmax cross-entropy over per-class scores."""
    scores = ad.as_value(scores)
    labels = np.asarray(labels, dtype=int)
    onehot = np.zeros(scores.shape)
    onehot[np.arange(scores.shape[0]), labels] = 1.0
    return -(ad.log_softmax(scores, axis=1) * onehot).sum()


def total_loss(ce, scl, lam: float = 0.1) -> Value:
    """``ce + lam * scl``; with ``lam == 0`` the result is ``ce`` itself."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    ce = ad.as_value(ce)
    if lam == 0 or scl is None:
        return ce
    return ce + lam * ad.as_value(scl)
