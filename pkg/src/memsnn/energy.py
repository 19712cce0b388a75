"""Spike-driven energy accounting and the dense-network comparison.

SynOps are attributed to the population whose spikes trigger them:
``synops = spikes * fan_out``. Energies are kept in joules internally and
rendered in microjoules.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

PJ = 1e-12
UJ = 1e-6


@dataclass(frozen=True)
class EnergyModel:
    e_synop: float = 0.9 * PJ   # joules per synaptic operation
    e_mac: float = 4.6 * PJ     # joules per dense multiply-accumulate

    def __post_init__(self):
        if self.e_synop <= 0 or self.e_mac <= 0:
            raise ValueError("energy constants must be positive")


@dataclass(frozen=True)
class LayerActivity:
    name: str
    spike_count: int
    fan_out: int
    neuron_count: int
    timestep_count: int
    samples: int = 1
    counts_toward_sparsity: bool = True

    def __post_init__(self):
        cap = self.neuron_count * self.timestep_count * self.samples
        if not 0 <= self.spike_count <= cap:
            raise ValueError(f"{self.name}: {self.spike_count} spikes exceeds capacity {cap}")


def synops(activity: LayerActivity) -> int:
    return int(activity.spike_count) * int(activity.fan_out)


def energy_total(synops_per_layer, model: EnergyModel = EnergyModel()) -> float:
    """Total spike-driven energy in microjoules."""
    total = float(np.sum(np.asarray(synops_per_layer, dtype=np.float64)))
    return total * model.e_synop / UJ


def ann_energy(mac_count, model: EnergyModel = EnergyModel()) -> float:
    """Dense-network energy in microjoules."""
    return float(mac_count) * model.e_mac / UJ


def sparsity(activities: Iterable[LayerActivity]) -> float:
    """Percentage of neuron-timesteps without a spike."""
    acts = [a for a in activities if a.counts_toward_sparsity]
    slots = sum(a.neuron_count * a.timestep_count * a.samples for a in acts)
    if slots == 0:
        return 100.0
    return 100.0 * (1.0 - sum(a.spike_count for a in acts) / slots)


@dataclass(frozen=True)
class ConvSpec:
    in_c: int
    out_c: int
    kernel: int
    out_h: int
    out_w: int

    @property
    def macs(self) -> int:
        return self.out_h * self.out_w * self.out_c * self.in_c * self.kernel ** 2


@dataclass(frozen=True)
class FcSpec:
    in_f: int
    out_f: int

    @property
    def macs(self) -> int:
        return self.in_f * self.out_f


def mac_count(architecture: Sequence, timesteps: int = 1) -> int:
    """Dense MACs for one pass over ``timesteps`` frames."""
    return int(sum(layer.macs for layer in architecture)) * timesteps


def encoder_architecture(cfg) -> list:
    """Dense-layer description of an :class:`~memsnn.snn.EncoderConfig`.

    Convolutions are costed at their pre-pool output resolution.
    """
    c1, c2 = cfg.conv_channels
    k, p = cfg.kernel, cfg.padding
    h0, w0 = cfg.height + 2 * p - k + 1, cfg.width + 2 * p - k + 1
    h1, w1 = cfg.spatial(1)
    return [
        ConvSpec(cfg.in_channels, c1, k, h0, w0),
        ConvSpec(c1, c2, k, h1 + 2 * p - k + 1, w1 + 2 * p - k + 1),
        FcSpec(cfg.flatten_dim, cfg.hidden),
        FcSpec(cfg.hidden, cfg.n_out),
    ]


def encoder_fan_outs(cfg, lif3_fan_out: int | None = None) -> dict[str, int]:
    """Synapses reached by one spike of each population (interior, no border clipping)."""
    c1, c2 = cfg.conv_channels
    k2 = cfg.kernel ** 2
    return {
        "input": c1 * k2,
        "lif1": c2 * k2,
        "lif2": cfg.hidden,
        "lif3": cfg.n_out if lif3_fan_out is None else lif3_fan_out,
        "lif_out": 0,
    }


@dataclass
class LayerLine:
    layer: str
    spikes: int
    synops: int
    microjoules: float
    percent: float


@dataclass
class EnergyReport:
    layers: list[LayerLine]
    total_uj: float
    per_inference_uj: float
    sparsity_pct: float
    ann_macs: int
    ann_uj: float
    reduction: float
    samples: int
    extras: dict = field(default_factory=dict)

    @property
    def total_synops(self) -> int:
        return int(sum(line.synops for line in self.layers))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "spikes", "synops", "microjoules", "percent"])
            for line in self.layers:
                w.writerow([line.layer, line.spikes, line.synops,
                            repr(line.microjoules), repr(line.percent)])

    def markdown(self) -> str:
        rows = ["| layer | spikes | SynOps | µJ | % |", "|---|---:|---:|---:|---:|"]
        for line in self.layers:
            rows.append(f"| {line.layer} | {line.spikes} | {line.synops} | "
                        f"{line.microjoules:.2f} | {line.percent:.1f} |")
        rows.append(f"| TOTAL | | {self.total_synops} | {self.total_uj:.2f} | 100.0 |")
        rows.append("")
        rows.append(f"µJ/inference {self.per_inference_uj:.4f}, sparsity {self.sparsity_pct:.2f}%, "
                    f"ANN {self.ann_uj:.2f} µJ ({self.ann_macs} MACs), reduction {self.reduction:.1f}x")
        return "\n".join(rows)


def build_report(activities: Sequence[LayerActivity], ann_macs: int,
                 model: EnergyModel = EnergyModel(), samples: int = 1,
                 gate_ops: int | None = None) -> EnergyReport:
    """Aggregate layer activity into an energy report.

    ``ann_macs`` is the dense cost of the whole evaluated set. ``gate_ops``, if
    given, is priced at ``e_mac`` and reported as a separate line item.
    """
    ops = [synops(a) for a in activities]
    uj = [energy_total([o], model) for o in ops]
    total = float(sum(uj))
    lines = [
        LayerLine(a.name, int(a.spike_count), o, e, 100.0 * e / total if total > 0 else 0.0)
        for a, o, e in zip(activities, ops, uj)
    ]
    ann = ann_energy(ann_macs, model)
    extras = {}
    if gate_ops is not None:
        gate_uj = ann_energy(gate_ops, model)
        share = 100.0 * gate_uj / (total + gate_uj) if total + gate_uj > 0 else 0.0
        extras["gate"] = {"ops": int(gate_ops), "microjoules": gate_uj, "percent_of_total": share,
                          "below_0.01pct": share < 0.01}
    return EnergyReport(
        layers=lines,
        total_uj=total,
        per_inference_uj=total / max(samples, 1),
        sparsity_pct=sparsity(activities),
        ann_macs=int(ann_macs),
        ann_uj=ann,
        reduction=ann / total if total > 0 else float("inf"),
        samples=samples,
        extras=extras,
    )


# Published SynOps (millions) and dense MACs (millions) for the four fully
# reported configurations.
GOLDEN_SYNOPS_M = {"M1": 5.247, "M2": 6.438, "M3": 7.004, "M4": 3.503}
GOLDEN_ANN_MACS_M = 413.84
GOLDEN_TOTALS_UJ = {"M1": 4.72, "M2": 5.79, "M3": 6.30, "M4": 3.15, "ANN": 1903.66}
GOLDEN_REDUCTION = {"M1": 403.1, "M2": 328.6, "M3": 302.0, "M4": 603.9}
# per-layer dense MACs as published; they do not follow from the stated shapes
PUBLISHED_LAYER_MACS_M = {"lif1": 288.0, "lif2": 64.0, "lif3": 41.0, "lif_hidden": 20.0,
                          "lif_out": 0.4, "head.lif_out": 0.016}


@dataclass
class GoldenRow:
    model: str
    synops: float
    total_uj: float
    reduction: float


def golden_rows(model: EnergyModel = EnergyModel()) -> tuple[list[GoldenRow], float]:
    """Recompute totals and reductions from the published SynOps/MAC columns."""
    ann = ann_energy(GOLDEN_ANN_MACS_M * 1e6, model)
    rows = []
    for name, s in GOLDEN_SYNOPS_M.items():
        e = energy_total(s * 1e6, model)
        rows.append(GoldenRow(name, s * 1e6, e, ann / e))
    return rows, ann
