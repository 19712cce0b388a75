"""Leaky integrate-and-fire layers and the convolutional spiking encoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, SurrogateSpec, Value

T_STEPS = 25
INPUT_SHAPE = (T_STEPS, 2, 34, 34)


@dataclass(frozen=True)
class LifParams:
    """Leak, threshold and surrogate slope of one LIF population.

    ``detach_reset`` keeps the soft-reset subtraction out of the backward
    pass, which is what snnTorch does by default.
    """

    beta: float = 0.9
    theta: float = 1.0
    slope: float = 0.9
    detach_reset: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")

    @property
    def surrogate(self) -> SurrogateSpec:
        return SurrogateSpec(slope=self.slope, threshold=self.theta)


@dataclass
class LifState:
    membrane: Value
    spikes: Value

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(ad.as_value(np.zeros(shape)), ad.as_value(np.zeros(shape)))


def lif_step(state: LifState, input_current, params: LifParams = LifParams()) -> LifState:
    """One Euler step: leak, integrate, fire, subtract threshold."""
    current = ad.as_value(input_current)
    if current.shape != state.membrane.shape:
        raise ShapeError("lif_step", state.membrane.shape, current.shape)
    u = params.beta * state.membrane + current
    s = ad.spike_threshold(u, params.surrogate)
    reset = ad.detach(s) if params.detach_reset else s
    return LifState(membrane=u - params.theta * reset, spikes=s)


def lif_scan(currents, params: LifParams = LifParams()) -> tuple[Value, np.ndarray]:
    """Run a LIF population over the leading time axis of ``currents``.

    Equivalent to folding :func:`lif_step` from a zero state, but recorded as a
    single graph node with a hand-written BPTT backward. Returns the spike
    train (differentiable) and the post-reset membrane trace (plain array).
    """
    currents = ad.as_value(currents)
    spec = params.surrogate
    T = currents.shape[0]
    pre = np.empty_like(currents.data)
    mem = np.empty_like(currents.data)
    spikes = np.empty_like(currents.data)
    u = np.zeros(currents.shape[1:])
    for t in range(T):
        v = params.beta * u + currents.data[t]
        s = (v >= params.theta).astype(np.float64)
        u = v - params.theta * s
        pre[t], spikes[t], mem[t] = v, s, u
    surr = ad.surrogate_factor(pre, spec)

    def vjp(g, out, x):
        gi = np.empty_like(x)
        carry = np.zeros(x.shape[1:])
        for t in range(T - 1, -1, -1):
            # carry is dL/dU[t] arriving from step t+1
            if params.detach_reset:
                gv = carry + g[t] * surr[t]
            else:
                gv = carry + (g[t] - params.theta * carry) * surr[t]
            gi[t] = gv
            carry = params.beta * gv
        return (gi,)

    out = ad.record("lif_scan", (currents,), lambda x: spikes, vjp)
    return out, mem


def rate_output(out_spikes) -> np.ndarray:
    """Mean firing rate over the time axis (axis 0)."""
    return np.asarray(getattr(out_spikes, "data", out_spikes), dtype=np.float64).mean(axis=0)


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the spiking encoder.

    The defaults are the full-width block: two 3x3 convolutions (2->64->128
    channels, padding 1, no pooling), FC(512) and FC(10). ``pool=True`` inserts
    a 2x2 average pool between each convolution and its LIF population.
    """

    in_channels: int = 2
    conv_channels: tuple[int, int] = (64, 128)
    hidden: int = 512
    n_out: int = 10
    height: int = 34
    width: int = 34
    kernel: int = 3
    padding: int = 1
    pool: bool = False
    timesteps: int = T_STEPS
    dropout: float = 0.2
    init_gain: float = 4.0
    lif: LifParams = field(default_factory=LifParams)

    def spatial(self, stage: int) -> tuple[int, int]:
        h, w = self.height, self.width
        for _ in range(stage):
            h = h + 2 * self.padding - self.kernel + 1
            w = w + 2 * self.padding - self.kernel + 1
            if self.pool:
                h, w = h // 2, w // 2
        return h, w

    @property
    def flatten_dim(self) -> int:
        h, w = self.spatial(2)
        return self.conv_channels[1] * h * w

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Neuron-population shapes (per sample, per timestep)."""
        c1, c2 = self.conv_channels
        return {
            "input": (self.in_channels, self.height, self.width),
            "lif1": (c1, *self.spatial(1)),
            "lif2": (c2, *self.spatial(2)),
            "lif3": (self.hidden,),
            "lif_out": (self.n_out,),
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c1, c2 = self.conv_channels
        k = self.kernel
        return {
            "conv1.w": (c1, self.in_channels, k, k),
            "conv1.b": (c1,),
            "conv2.w": (c2, c1, k, k),
            "conv2.b": (c2,),
            "fc_hidden.w": (self.flatten_dim, self.hidden),
            "fc_hidden.b": (self.hidden,),
            "fc_out.w": (self.hidden, self.n_out),
            "fc_out.b": (self.n_out,),
        }

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "lif"}
        d["conv_channels"] = list(self.conv_channels)
        d["lif"] = {"beta": self.lif.beta, "theta": self.lif.theta,
                    "slope": self.lif.slope, "detach_reset": self.lif.detach_reset}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["lif"] = LifParams(**d.get("lif", {}))
        return cls(**d)


# desk-scale widths used for CPU training runs
DESK_ENCODER = EncoderConfig(conv_channels=(4, 8), pool=True)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Value]:
    """Weights U(-g/sqrt(fan_in), g/sqrt(fan_in)) with g = ``init_gain``; zero biases.

    Inputs are sparse binary spikes, so the usual g = 1 leaves the deeper
    populations silent at initialisation.
    """
    shapes = cfg.param_shapes()
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            params[name] = Value(np.zeros(shape), name=name)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        bound = cfg.init_gain / np.sqrt(fan_in)
        params[name] = Value(rng.uniform(-bound, bound, size=shape), name=name)
    return params


@dataclass
class EncoderOutput:
    features: Value                  # (T, B, hidden) LIF3 spikes
    out_spikes: Value | None         # (T, B, n_out) or None when the head is skipped
    spike_counts: dict[str, int]     # summed over T and batch
    out_membrane: np.ndarray | None = None

    @property
    def feature_rates(self) -> np.ndarray:
        """Time-averaged LIF3 activity, shape (B, hidden)."""
        return self.features.data.mean(axis=0)


def _as_batch(x: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 4:
        x = x[None]
    expected = (cfg.timesteps, cfg.in_channels, cfg.height, cfg.width)
    if x.ndim != 5 or x.shape[1:] != expected:
        raise ShapeError("encoder_forward", x.shape, ("B",) + expected)
    return x


def encoder_forward(x, params: dict[str, Value], cfg: EncoderConfig, *, head: bool = True,
                    train: bool = False, rng: np.random.Generator | None = None,
                    hook: Callable[[str, np.ndarray], None] | None = None) -> EncoderOutput:
    """Run conv1-LIF1-conv2-LIF2-FC-LIF3[-FC-LIFout] over all timesteps.

    ``x`` is one spike tensor (T, C, H, W) or a batch (B, T, C, H, W). Layers
    are purely feedforward within a timestep, so each synaptic stage is applied
    to all timesteps at once and only the LIF populations iterate in time.
    ``hook(layer_name, spikes)`` sees every population's spike train.
    """
    x = _as_batch(x, cfg)
    B, T = x.shape[0], x.shape[1]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2, 3, 4), dtype=np.float64)
    counts = {"input": int(xt.sum())}
    if hook is not None:
        hook("input", xt)

    def conv_stage(inp, idx):
        c = ad.conv2d(inp, params[f"conv{idx}.w"], params[f"conv{idx}.b"], padding=cfg.padding)
        if cfg.pool:
            c = ad.avg_pool2d(c, 2)
        return c

    def fire(current, name):
        s, mem = lif_scan(current, cfg.lif)
        counts[name] = int(s.data.sum())
        if hook is not None:
            hook(name, s.data)
        return s, mem

    c1 = conv_stage(xt.reshape(T * B, *xt.shape[2:]), 1)
    s1, _ = fire(c1.reshape(T, B, *c1.shape[1:]), "lif1")
    c2 = conv_stage(s1.reshape(T * B, *s1.shape[2:]), 2)
    s2, _ = fire(c2.reshape(T, B, *c2.shape[1:]), "lif2")
    flat = s2.reshape(T * B, cfg.flatten_dim)
    h = flat @ params["fc_hidden.w"] + params["fc_hidden.b"]
    if train and cfg.dropout > 0:
        rng = rng if rng is not None else np.random.default_rng()
        keep = (rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        h = h * keep
    s3, _ = fire(h.reshape(T, B, cfg.hidden), "lif3")
    if not head:
        return EncoderOutput(features=s3, out_spikes=None, spike_counts=counts)
    so, mem_out = spiking_readout(s3, params["fc_out.w"], params["fc_out.b"], cfg.lif)
    counts["lif_out"] = int(so.data.sum())
    if hook is not None:
        hook("lif_out", so.data)
    return EncoderOutput(features=s3, out_spikes=so, spike_counts=counts, out_membrane=mem_out)


def spiking_readout(features, w, b, lif: LifParams = LifParams()) -> tuple[Value, np.ndarray]:
    """FC followed by a LIF population, applied per timestep to (T, B, D) input."""
    features = ad.as_value(features)
    T, B, D = features.shape
    o = features.reshape(T * B, D) @ w + b
    return lif_scan(o.reshape(T, B, w.shape[1]), lif)
