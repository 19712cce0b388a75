"""The five ablation configurations built on one spiking encoder.

    M1  encoder + rate-coded CE                      (no contrastive term)
    M2  M1 + supervised contrastive term on LIF3 rates
    M3  M2 + Hopfield clean-up of each LIF3 timestep before the spiking readout
    M4  M2 + gated recurrence over LIF3 timesteps, classified from h_T
    M5  M2 + Hopfield clean-up feeding the gated recurrence
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import energy as en
from .autodiff import Value
from .hgrn import hgrn_sequence, init_gate_params
from .hopfield import HopfieldMemory, class_prototypes, hopfield_layer_forward, store_patterns
from .scl import ce_loss, normalize_features, scl_loss, softmax_ce, total_loss
from .snn import EncoderConfig, encoder_forward, init_encoder_params, spiking_readout

MODEL_IDS = ("M1", "M2", "M3", "M4", "M5")
USES_SCL = {"M1": False, "M2": True, "M3": True, "M4": True, "M5": True}
USES_HOPFIELD = {"M1": False, "M2": False, "M3": True, "M4": False, "M5": True}
USES_HGRN = {"M1": False, "M2": False, "M3": False, "M4": True, "M5": True}


class UnknownModelError(ValueError):
    def __init__(self, model_id):
        super().__init__(f"unknown model id {model_id!r}; valid ids: {', '.join(MODEL_IDS)}")


@dataclass(frozen=True)
class ModelConfig:
    model_id: str = "M1"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lambda_scl: float = 0.1
    tau: float = 0.07
    scl_reduction: str = "sum"
    ce_mode: str = "softmax"         # "rate": log of target rate; "softmax": softmax over spike counts
    hgrn_hidden: int = 512
    hgrn_head: str = "fc"            # "fc": h_T -> FC -> softmax CE; "lif": h_t -> FC -> LIF -> rate
    hopfield_k_max: int = 5

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise UnknownModelError(self.model_id)
        if self.ce_mode not in ("rate", "softmax"):
            raise ValueError(f"ce_mode must be 'rate' or 'softmax', got {self.ce_mode!r}")
        if self.hgrn_head not in ("fc", "lif"):
            raise ValueError(f"hgrn_head must be 'fc' or 'lif', got {self.hgrn_head!r}")

    @property
    def lam(self) -> float:
        return self.lambda_scl if USES_SCL[self.model_id] else 0.0


@dataclass
class ForwardResult:
    loss: Value | None
    ce: Value | None
    scl: Value | None
    scores: np.ndarray          # (B, n_out) class scores used for argmax
    feature_rates: np.ndarray   # (B, hidden) time-averaged LIF3 spikes
    spike_counts: dict[str, int]
    passthrough: bool = True


class HybridModel:
    """Parameters, Hopfield memory and forward pass of one ablation model."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        enc = config.encoder
        self.params: dict[str, Value] = init_encoder_params(enc, rng)
        if USES_HGRN[config.model_id]:
            self.params.update(init_gate_params(enc.hidden, config.hgrn_hidden, rng, prefix="hgrn."))
            bound = 1.0 / np.sqrt(config.hgrn_hidden)
            self.params["cls.w"] = Value(rng.uniform(-bound, bound, (config.hgrn_hidden, enc.n_out)), name="cls.w")
            self.params["cls.b"] = Value(rng.uniform(-bound, bound, enc.n_out), name="cls.b")
        self.memory = HopfieldMemory.empty(enc.hidden, config.hopfield_k_max)

    @property
    def model_id(self) -> str:
        return self.config.model_id

    @property
    def uses_hopfield(self) -> bool:
        return USES_HOPFIELD[self.model_id]

    @property
    def uses_hgrn(self) -> bool:
        return USES_HGRN[self.model_id]

    def trainable_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def parameter_count(self) -> int:
        """Trainable weights plus the Hopfield coupling matrix when present."""
        n = self.trainable_parameters()
        if self.uses_hopfield:
            n += self.config.encoder.hidden ** 2
        return n

    # ------------------------------------------------------------ memory

    def refresh_memory(self, feature_rates: np.ndarray, labels: np.ndarray):
        """Store binarised class-mean features as the new pattern set."""
        if not self.uses_hopfield or len(labels) == 0:
            return
        patterns, _ = class_prototypes(feature_rates, labels)
        self.memory = store_patterns(patterns, self.config.hopfield_k_max)

    def clear_memory(self):
        self.memory = HopfieldMemory.empty(self.config.encoder.hidden, self.config.hopfield_k_max)

    # ------------------------------------------------------------ forward

    def forward(self, X, y=None, *, train: bool = False, rng: np.random.Generator | None = None,
                hook=None) -> ForwardResult:
        cfg = self.config
        enc = cfg.encoder
        p = self.params
        out = encoder_forward(X, p, enc, head=False, train=train, rng=rng, hook=hook)
        counts = dict(out.spike_counts)
        feats = out.features                                    # (T, B, hidden)
        B = feats.shape[1]
        passthrough = True
        stream = feats
        if self.uses_hopfield:
            stream, info = hopfield_layer_forward(feats, self.memory)
            passthrough = info.passthrough

        if self.uses_hgrn:
            if cfg.hgrn_head == "fc":
                h_T = hgrn_sequence(stream, p, prefix="hgrn.")
                logits = h_T @ p["cls.w"] + p["cls.b"]
                scores = logits.data
                ce = softmax_ce(logits, y) if y is not None else None
            else:
                hs = hgrn_sequence(stream, p, prefix="hgrn.", return_states=True)
                stacked = ad.concat([h.reshape(1, B, -1) for h in hs], axis=0)
                so, mem = spiking_readout(stacked, p["cls.w"], p["cls.b"], enc.lif)
                counts["lif_out"] = int(so.data.sum())
                scores, ce = self._rate_head(so, mem, y)
        else:
            so, mem = spiking_readout(stream, p["fc_out.w"], p["fc_out.b"], enc.lif)
            counts["lif_out"] = int(so.data.sum())
            if hook is not None:
                hook("lif_out", so.data)
            scores, ce = self._rate_head(so, mem, y)

        scl = None
        if y is not None and USES_SCL[self.model_id] and cfg.lambda_scl > 0 and B >= 2:
            z, excluded = normalize_features(feats.mean(axis=0))
            scl = scl_loss(z, y, cfg.tau, reduction=cfg.scl_reduction, valid=~excluded)
        loss = None
        if ce is not None:
            loss = total_loss(ce, scl, cfg.lam) * (1.0 / B)
        return ForwardResult(loss=loss, ce=ce, scl=scl, scores=scores,
                             feature_rates=out.feature_rates, spike_counts=counts,
                             passthrough=passthrough)

    def _rate_head(self, so: Value, mem: np.ndarray, y):
        rates = so.mean(axis=0)
        # ties in spike rate (multiples of 1/T) are broken by mean membrane
        scores = rates.data + 1e-3 * np.tanh(mem.mean(axis=0))
        if y is None:
            return scores, None
        if self.config.ce_mode == "rate":
            return scores, ce_loss(rates, y)
        return scores, softmax_ce(so.sum(axis=0), y)

    def predict_scores(self, X, batch_size: int = 64) -> np.ndarray:
        return np.concatenate([self.forward(X[i:i + batch_size]).scores
                               for i in range(0, len(X), batch_size)])

    # ------------------------------------------------------------ energy

    def lif3_fan_out(self) -> int:
        if self.uses_hgrn:
            # x_t reaches the forget, update and candidate matrices
            return 3 * self.config.hgrn_hidden
        return self.config.encoder.n_out

    def dense_macs_per_inference(self) -> int:
        enc = self.config.encoder
        macs = en.mac_count(en.encoder_architecture(enc), timesteps=enc.timesteps)
        if self.uses_hgrn:
            H, I = self.config.hgrn_hidden, enc.hidden
            per_step = 2 * (H + I) * H + I * H
            # the dense FC(10) readout is replaced by the classifier on h_T
            macs += enc.timesteps * (per_step - enc.hidden * enc.n_out) + H * enc.n_out
        return int(macs)

    def profile(self, X, batch_size: int = 64, model: en.EnergyModel = en.EnergyModel()) -> en.EnergyReport:
        """Energy report from spike counts over the evaluation set ``X``."""
        enc = self.config.encoder
        totals: dict[str, int] = {}
        for i in range(0, len(X), batch_size):
            res = self.forward(X[i:i + batch_size])
            for k, v in res.spike_counts.items():
                totals[k] = totals.get(k, 0) + v
        n = len(X)
        fan = en.encoder_fan_outs(enc, self.lif3_fan_out())
        shapes = enc.layer_shapes()
        if self.uses_hgrn and self.config.hgrn_head == "lif":
            shapes["lif_out"] = (enc.n_out,)
        acts = []
        for name in ("input", "lif1", "lif2", "lif3", "lif_out"):
            if name not in totals:
                continue
            acts.append(en.LayerActivity(name, totals[name], fan[name], int(np.prod(shapes[name])),
                                         enc.timesteps, n, counts_toward_sparsity=name != "input"))
        gate_ops = enc.timesteps * n if self.uses_hgrn else None
        return en.build_report(acts, self.dense_macs_per_inference() * n, model, samples=n, gate_ops=gate_ops)


def build_model(model_id: str, seed: int = 0, **overrides) -> HybridModel:
    """Construct one of M1..M5; ``overrides`` go to :class:`ModelConfig`."""
    if model_id not in MODEL_IDS:
        raise UnknownModelError(model_id)
    return HybridModel(ModelConfig(model_id=model_id, **overrides), seed=seed)


def with_model_id(config: ModelConfig, model_id: str) -> ModelConfig:
    return replace(config, model_id=model_id)
