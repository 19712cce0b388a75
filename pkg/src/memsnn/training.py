"""Optimisation loop, schedules and checkpoint I/O for the ablation models.

Checkpoint container (little-endian)::

    b"SNCK" | u32 version | u64 manifest length | manifest (UTF-8 JSON)
    | concatenated float64 blobs

The manifest lists every blob's name, shape and byte offset together with
the model and training configuration and the seed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.metrics import confusion_matrix

from . import autodiff as ad
from . import cluster
from .data import AugmentSpec, DatasetMissingError, augment_batch, dataset_root, load_nmnist, make_synthetic
from .models import MODEL_IDS, HybridModel, ModelConfig, UnknownModelError
from .snn import DESK_ENCODER, EncoderConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model_id: str = "M1"
    lr_max: float = 1e-3
    lr_min: float = 0.0
    t_max: int = 30
    epochs: int = 30
    weight_decay: float = 1e-4
    dropout: float = 0.2
    clip_norm: float = 1.0
    patience: int = 5
    batch_size: int = 64
    seed: int = 0
    lambda_scl: float = 0.1
    tau: float = 0.07
    scl_reduction: str = "sum"
    scl_two_view: bool = False
    ce_mode: str = "softmax"
    hgrn_hidden: int = 512
    hgrn_head: str = "fc"
    augment: bool = True
    jitter_ms: float = 2.0
    shift_px: int = 2
    dataset: str = "synthetic"
    data_root: str | None = None
    n_train: int = 500
    n_val: int = 200
    n_test: int = 200
    n_classes: int = 4
    noise_rate: float = 0.01
    conv_channels: tuple[int, int] = DESK_ENCODER.conv_channels
    hidden: int = 512
    pool: bool = True
    silhouette_max_samples: int = 2000

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise UnknownModelError(self.model_id)
        self.conv_channels = tuple(self.conv_channels)
        positive = ("lr_max", "t_max", "epochs", "clip_norm", "patience", "batch_size", "tau")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_min < 0 or self.weight_decay < 0 or self.lambda_scl < 0:
            raise ValueError("lr_min, weight_decay and lambda_scl must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dataset not in ("synthetic", "nmnist"):
            raise ValueError(f"dataset must be 'synthetic' or 'nmnist', got {self.dataset!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(conv_channels=self.conv_channels, hidden=self.hidden, pool=self.pool,
                             dropout=self.dropout)

    def model_config(self) -> ModelConfig:
        return ModelConfig(model_id=self.model_id, encoder=self.encoder_config(),
                           lambda_scl=self.lambda_scl, tau=self.tau, scl_reduction=self.scl_reduction,
                           ce_mode=self.ce_mode, hgrn_hidden=self.hgrn_hidden, hgrn_head=self.hgrn_head)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- optimiser pieces


def cosine_lr(t: float, lr_max: float = 1e-3, lr_min: float = 0.0, t_max: float = 30) -> float:
    t = min(max(t, 0.0), t_max)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / t_max))


def clip_gradients(grads: list[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, pre-clip norm)."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], moments: AdamMoments,
              lr: float, weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> dict[str, np.ndarray]:
    """Bias-corrected Adam with decoupled weight decay, in place on ``params``."""
    moments.step += 1
    t = moments.step
    for name, p in params.items():
        g = grads[name]
        m = moments.m.get(name)
        if m is None:
            m = moments.m[name] = np.zeros_like(p)
            moments.v[name] = np.zeros_like(p)
        v = moments.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params


def early_stop(history: list[float], patience: int = 5) -> bool:
    """True once the best epoch lies more than ``patience`` epochs back."""
    if not history:
        return False
    best = int(np.argmax(history))
    return (len(history) - 1) - best > patience


# ---------------------------------------------------------------- records


@dataclass
class RunRecord:
    model_id: str
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_val_accuracy: float = 0.0
    best_epoch: int = -1
    early_stopped: bool = False
    test_accuracy: float | None = None
    silhouette: float | None = None
    silhouette_band: str | None = None
    energy: dict | None = None
    parameters: int | None = None
    confusion: list[list[int]] | None = None
    notes: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_epoch_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_accuracy", "lr"])
            for i, row in enumerate(zip(self.train_loss, self.val_accuracy, self.lr)):
                w.writerow([i, *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------- loop


def accuracy(model: HybridModel, X, y, batch_size: int = 64) -> float:
    if len(y) == 0:
        return float("nan")
    pred = model.predict_scores(X, batch_size).argmax(axis=1)
    return float((pred == np.asarray(y)).mean())


def extract_features(model: HybridModel, X, batch_size: int = 64) -> np.ndarray:
    return np.concatenate([model.forward(X[i:i + batch_size]).feature_rates
                           for i in range(0, len(X), batch_size)])


def snapshot(model: HybridModel) -> dict:
    return {"params": {k: v.data.copy() for k, v in model.params.items()},
            "W": model.memory.W.copy(), "stored": model.memory.stored.copy()}


def restore(model: HybridModel, snap: dict):
    from .hopfield import HopfieldMemory

    for k, arr in snap["params"].items():
        model.params[k].data = arr.copy()
        model.params[k].zero_grad()
    model.memory = HopfieldMemory(snap["W"].copy(), snap["stored"].copy(), model.config.hopfield_k_max)


def fit(model: HybridModel, cfg: TrainConfig, X_train, y_train, X_val, y_val) -> RunRecord:
    """Train in place and leave the best-validation weights loaded."""
    start = time.perf_counter()
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, aug_rng, drop_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    aug = AugmentSpec(jitter_ms=cfg.jitter_ms, shift_px=cfg.shift_px)
    record = RunRecord(model_id=cfg.model_id, seed=cfg.seed, parameters=model.parameter_count())
    if model.uses_hopfield:
        record.notes.append("hopfield sign path trained with a straight-through gradient")
    two_view = cfg.scl_two_view and model.config.lam > 0
    names = list(model.params)
    moments = AdamMoments()
    best = snapshot(model)
    n = len(y_train)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.lr_max, cfg.lr_min, cfg.t_max)
        order = shuffle_rng.permutation(n)
        losses, feats, labs = [], [], []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            xb = X_train[idx]
            yb = y_train[idx]
            if two_view:
                # second independently augmented copy of every sample
                xb = np.concatenate([augment_batch(xb, aug, aug_rng), augment_batch(xb, aug, aug_rng)])
                yb = np.concatenate([yb, yb])
            elif cfg.augment:
                xb = augment_batch(xb, aug, aug_rng)
            for p in model.params.values():
                p.zero_grad()
            res = model.forward(xb, yb, train=True, rng=drop_rng)
            if not np.isfinite(res.loss.data):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            ad.backward(res.loss)
            grads, _ = clip_gradients([model.params[k].grad for k in names], cfg.clip_norm)
            adam_step({k: model.params[k].data for k in names}, dict(zip(names, grads)), moments,
                      lr, cfg.weight_decay)
            losses.append(res.loss.item())
            feats.append(res.feature_rates)
            labs.append(yb)
        if model.uses_hopfield:
            model.refresh_memory(np.concatenate(feats), np.concatenate(labs))
        val = accuracy(model, X_val, y_val, cfg.batch_size)
        record.train_loss.append(float(np.mean(losses)))
        record.val_accuracy.append(val)
        record.lr.append(lr)
        log.info("%s epoch %d loss %.4f val %.4f lr %.2e", cfg.model_id, epoch, record.train_loss[-1], val, lr)
        if val > record.best_val_accuracy or record.best_epoch < 0:
            record.best_val_accuracy, record.best_epoch = val, epoch
            best = snapshot(model)
        if early_stop(record.val_accuracy, cfg.patience):
            record.early_stopped = True
            break
    restore(model, best)
    record.wall_time_s = time.perf_counter() - start
    return record


def load_splits(cfg: TrainConfig):
    """(X_train, y_train, X_val, y_val, X_test, y_test) for the configured dataset."""
    if cfg.dataset == "synthetic":
        X, y = make_synthetic(cfg.n_train + cfg.n_val + cfg.n_test, cfg.n_classes, seed=cfg.seed,
                              noise_rate=cfg.noise_rate)
        a, b = cfg.n_train, cfg.n_train + cfg.n_val
        return X[:a], y[:a], X[a:b], y[a:b], X[b:], y[b:]
    root = dataset_root(cfg.data_root)
    if not root.is_dir():
        raise DatasetMissingError(f"N-MNIST root {root} does not exist")
    Xtr, ytr = load_nmnist(root, "Train", limit=cfg.n_train + cfg.n_val, seed=cfg.seed)
    Xte, yte = load_nmnist(root, "Test", limit=cfg.n_test, seed=cfg.seed)
    perm = np.random.default_rng(cfg.seed).permutation(len(ytr))
    tr, va = perm[:cfg.n_train], perm[cfg.n_train:]
    return Xtr[tr], ytr[tr], Xtr[va], ytr[va], Xte, yte


def evaluate(model: HybridModel, cfg: TrainConfig, record: RunRecord, X_val, y_val, X_test, y_test):
    """Fill test accuracy, silhouette (validation features) and energy (test set)."""
    pred = model.predict_scores(X_test, cfg.batch_size).argmax(axis=1) if len(y_test) else np.array([])
    record.test_accuracy = float((pred == y_test).mean()) if len(y_test) else float("nan")
    n_out = model.config.encoder.n_out
    record.confusion = confusion_matrix(y_test, pred, labels=list(range(n_out))).tolist() if len(y_test) else None
    feats = extract_features(model, X_val, cfg.batch_size)
    try:
        rep, _ = cluster.analyze(feats, y_val, cfg.silhouette_max_samples, cfg.seed)
        record.silhouette, record.silhouette_band = rep.score, rep.band
    except cluster.UndefinedMetricError:
        record.silhouette, record.silhouette_band = None, None
    record.energy = model.profile(X_test, cfg.batch_size).to_dict()
    return record


def train(cfg: TrainConfig, out_dir=None) -> tuple[HybridModel, RunRecord]:
    """Full run: data, training, evaluation, and artifacts when ``out_dir`` is given."""
    X_train, y_train, X_val, y_val, X_test, y_test = load_splits(cfg)
    model = HybridModel(cfg.model_config(), seed=cfg.seed)
    record = fit(model, cfg, X_train, y_train, X_val, y_val)
    evaluate(model, cfg, record, X_val, y_val, X_test, y_test)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.model_id}_seed{cfg.seed}"
        record.write_json(out / f"{stem}.json")
        record.write_epoch_csv(out / f"{stem}_epochs.csv")
        save_checkpoint(out / f"{stem}.ckpt", model, cfg)
    return model, record


# ---------------------------------------------------------------- checkpoints

_CKPT_MAGIC = b"SNCK"
_CKPT_HEAD = struct.Struct("<4sIQ")


def save_checkpoint(path, model: HybridModel, cfg: TrainConfig | None = None):
    blobs = {f"param/{k}": v.data for k, v in model.params.items()}
    blobs["memory/W"] = model.memory.W
    blobs["memory/stored"] = model.memory.stored
    entries, offset = [], 0
    for name, arr in blobs.items():
        nbytes = arr.size * 8
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": nbytes})
        offset += nbytes
    mc = model.config
    manifest = {
        "format": "SNCK",
        "version": 1,
        "model": {"model_id": mc.model_id, "encoder": mc.encoder.to_dict(), "lambda_scl": mc.lambda_scl,
                  "tau": mc.tau, "scl_reduction": mc.scl_reduction, "ce_mode": mc.ce_mode,
                  "hgrn_hidden": mc.hgrn_hidden, "hgrn_head": mc.hgrn_head,
                  "hopfield_k_max": mc.hopfield_k_max},
        "train": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "blobs": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(_CKPT_MAGIC, 1, len(head)))
        fh.write(head)
        for arr in blobs.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[HybridModel, TrainConfig | None]:
    from .hopfield import HopfieldMemory

    blob = Path(path).read_bytes()
    magic, version, mlen = _CKPT_HEAD.unpack_from(blob)
    if magic != _CKPT_MAGIC or version != 1:
        raise ValueError(f"{path}: not an SNCK v1 checkpoint")
    manifest = json.loads(blob[_CKPT_HEAD.size:_CKPT_HEAD.size + mlen])
    base = _CKPT_HEAD.size + mlen
    m = dict(manifest["model"])
    m["encoder"] = EncoderConfig.from_dict(m["encoder"])
    model = HybridModel(ModelConfig(**m), seed=0)
    arrays = {}
    for e in manifest["blobs"]:
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8,
                                          offset=base + e["offset"]).reshape(e["shape"]).astype(np.float64)
    for k in model.params:
        model.params[k].data = arrays[f"param/{k}"]
        model.params[k].zero_grad()
    model.memory = HopfieldMemory(arrays["memory/W"], arrays["memory/stored"], model.config.hopfield_k_max)
    cfg = TrainConfig.from_dict(manifest["train"]) if manifest["train"] else None
    return model, cfg
