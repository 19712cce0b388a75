"""Classical Hopfield associative memory over bipolar patterns.

Storage is the Hebbian outer-product rule with the self-coupling removed,
retrieval is synchronous ``h <- sign(W h)`` with ``sign(0) = +1``. The bridge
to real-valued features is a per-vector median split on the way in and a
min/max rescale on the way out, with a straight-through gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value


def bipolar_sign(x: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def _check_bipolar(a: np.ndarray, what: str):
    if not np.all((a == 1) | (a == -1)):
        raise ValueError(f"{what} must contain only -1/+1 entries")


@dataclass(frozen=True)
class HopfieldMemory:
    W: np.ndarray
    stored: np.ndarray  # (P, N)
    k_max: int = 5

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")

    @property
    def n_units(self) -> int:
        return self.W.shape[0]

    @property
    def n_patterns(self) -> int:
        return self.stored.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.n_patterns == 0

    @classmethod
    def empty(cls, n_units: int, k_max: int = 5) -> "HopfieldMemory":
        return cls(np.zeros((n_units, n_units)), np.zeros((0, n_units)), k_max)


@dataclass
class RetrievalTrace:
    states: list[np.ndarray] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def store_patterns(patterns, k_max: int = 5) -> HopfieldMemory:
    """Build ``W = sum_p xi_p xi_p^T - P I``."""
    xi = np.atleast_2d(np.asarray(patterns, dtype=np.float64))
    if xi.shape[0] < 1:
        raise ValueError("need at least one pattern")
    _check_bipolar(xi, "stored patterns")
    P = xi.shape[0]
    W = xi.T @ xi - P * np.eye(xi.shape[1])
    return HopfieldMemory(W=W, stored=xi.copy(), k_max=k_max)


def energy(mem: HopfieldMemory, h) -> float:
    h = np.asarray(h, dtype=np.float64)
    return float(-0.5 * h @ mem.W @ h)


def hopfield_update(mem: HopfieldMemory, h0) -> RetrievalTrace:
    """Iterate synchronous sign updates until a fixed point or ``k_max`` updates."""
    h = np.asarray(h0, dtype=np.float64).copy()
    _check_bipolar(h, "query")
    trace = RetrievalTrace(states=[h], energies=[energy(mem, h)])
    for _ in range(mem.k_max):
        nxt = bipolar_sign(mem.W @ h)
        if np.array_equal(nxt, h):
            trace.converged = True
            break
        h = nxt
        trace.states.append(h)
        trace.energies.append(energy(mem, h))
    return trace


def retrieve(mem: HopfieldMemory, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised retrieval for a stack of bipolar queries (M, N).

    Rows stop moving once they reach a fixed point. Returns final states and
    a per-row converged flag.
    """
    h = np.array(queries, dtype=np.float64, copy=True)
    active = np.ones(h.shape[0], dtype=bool)
    for _ in range(mem.k_max):
        if not active.any():
            break
        nxt = bipolar_sign(h[active] @ mem.W)  # W symmetric
        moved = np.any(nxt != h[active], axis=1)
        idx = np.flatnonzero(active)
        h[idx] = nxt
        active[idx[~moved]] = False
    return h, ~active


def binarize(h) -> np.ndarray:
    """+1 where an entry exceeds its vector's median, -1 elsewhere (row-wise)."""
    h = np.asarray(h, dtype=np.float64)
    med = np.median(h, axis=-1, keepdims=True)
    return np.where(h > med, 1.0, -1.0)


def class_prototypes(features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Binarised per-class mean feature vectors; returns (patterns, classes)."""
    classes = np.unique(labels)
    means = np.stack([features[labels == c].mean(axis=0) for c in classes])
    return binarize(means), classes


@dataclass
class LayerInfo:
    passthrough: bool
    converged_fraction: float = 1.0


def hopfield_layer_forward(h_real, mem: HopfieldMemory) -> tuple[Value, LayerInfo]:
    """Clean up real feature vectors through the memory.

    Each vector along the last axis is median-split to bipolar, retrieved,
    and mapped back onto its own [min, max] range. The backward pass is the
    identity. An empty memory returns the input node unchanged.
    """
    h_real = ad.as_value(h_real)
    if mem.is_empty:
        return h_real, LayerInfo(passthrough=True)
    if h_real.shape[-1] != mem.n_units:
        raise ad.ShapeError("hopfield_layer", h_real.shape, mem.W.shape)
    flat = h_real.data.reshape(-1, mem.n_units)
    final, conv = retrieve(mem, binarize(flat))
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    out = lo + (hi - lo) * (final + 1.0) / 2.0
    y = ad.straight_through(h_real, out.reshape(h_real.shape), tag="hopfield_layer")
    return y, LayerInfo(passthrough=False, converged_fraction=float(conv.mean()))
