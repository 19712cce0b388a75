"""Gated temporal integration over per-timestep feature vectors.

    f_t  = sigmoid(W_f [h_{t-1}; x_t] + b_f)
    u_t  = sigmoid(W_u [h_{t-1}; x_t] + b_u)
    c~_t = tanh(W_c x_t + b_c)
    c_t  = f_t * c_{t-1} + u_t * c~_t
    h_t  = tanh(c_t)

Weights are stored input-major (``[h; x] @ W_f``) so batches are rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value

PARAM_NAMES = ("W_f", "b_f", "W_u", "b_u", "W_c", "b_c")


@dataclass
class GateState:
    c: Value
    h: Value

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "GateState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(ad.as_value(np.zeros(shape)), ad.as_value(np.zeros(shape)))


def gate_param_shapes(input_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        "W_f": (hidden + input_dim, hidden),
        "b_f": (hidden,),
        "W_u": (hidden + input_dim, hidden),
        "b_u": (hidden,),
        "W_c": (input_dim, hidden),
        "b_c": (hidden,),
    }


def init_gate_params(input_dim: int, hidden: int, rng: np.random.Generator,
                     prefix: str = "") -> dict[str, Value]:
    shapes = gate_param_shapes(input_dim, hidden)
    params = {}
    for name, shape in shapes.items():
        fan_in = shapes["W_" + name[-1]][0]
        bound = 1.0 / np.sqrt(fan_in)
        params[prefix + name] = Value(rng.uniform(-bound, bound, size=shape), name=prefix + name)
    return params


def _get(params, name, prefix):
    return params[prefix + name]


def hgrn_step(state: GateState, x_t, params: dict[str, Value], prefix: str = "") -> GateState:
    x_t = ad.as_value(x_t)
    W_f = _get(params, "W_f", prefix)
    hidden = W_f.shape[1]
    if state.h.shape[-1] != hidden or W_f.shape[0] != hidden + x_t.shape[-1] \
            or _get(params, "W_c", prefix).shape[0] != x_t.shape[-1]:
        raise ShapeError("hgrn_step", W_f.shape, state.h.shape, x_t.shape)
    hx = ad.concat([state.h, x_t], axis=-1)
    f = ad.sigmoid(hx @ W_f + _get(params, "b_f", prefix))
    u = ad.sigmoid(hx @ _get(params, "W_u", prefix) + _get(params, "b_u", prefix))
    cand = ad.tanh(x_t @ _get(params, "W_c", prefix) + _get(params, "b_c", prefix))
    c = f * state.c + u * cand
    return GateState(c=c, h=ad.tanh(c))


def hgrn_sequence(xs, params: dict[str, Value], prefix: str = "",
                  return_states: bool = False):
    """Fold :func:`hgrn_step` over the leading time axis from a zero state.

    ``xs`` has shape (T, input_dim) or (T, B, input_dim). Returns ``h_T``, or
    the list of hidden states when ``return_states`` is set.
    """
    xs = ad.as_value(xs)
    if xs.shape[0] < 1:
        raise ValueError("hgrn_sequence needs at least one timestep")
    hidden = _get(params, "W_f", prefix).shape[1]
    batch = xs.shape[1] if xs.ndim == 3 else None
    state = GateState.zeros(hidden, batch)
    hs = []
    for t in range(xs.shape[0]):
        x_t = _slice_t(xs, t)
        state = hgrn_step(state, x_t, params, prefix)
        hs.append(state.h)
    return hs if return_states else state.h


def _slice_t(xs: Value, t: int) -> Value:
    def vjp(g, out, x):
        gx = np.zeros_like(x)
        gx[t] = g
        return (gx,)

    return ad.record("index_t", (xs,), lambda x: x[t], vjp)
