"""Event-camera ingestion, spike-tensor binning, augmentation and synthetic data.

N-MNIST record layout (5 bytes, big-endian fields)::

    byte 0      x address (0-33)
    byte 1      y address (0-33)
    byte 2 b7   polarity (1 = ON)
    bytes 2-4   remaining 23 bits: timestamp in microseconds

Cached tensors use the little-endian ``NMT1`` container::

    b"NMT1" | u32 version | u32 n | u16 T | u16 C | u16 H | u16 W
    | n x u8 labels (255 = unlabelled) | bit-packed payload (little bit order)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

T_STEPS, CHANNELS, HEIGHT, WIDTH = 25, 2, 34, 34
TENSOR_SHAPE = (T_STEPS, CHANNELS, HEIGHT, WIDTH)
ENV_ROOT = "NMNIST_ROOT"
EVENT_DTYPE = np.dtype([("x", np.int64), ("y", np.int64), ("p", np.int64), ("t", np.int64)])
RECORD = 5
MAX_TS = (1 << 23) - 1


class EventFormatError(ValueError):
    pass


class DatasetMissingError(FileNotFoundError):
    pass


class DvsEvent(NamedTuple):
    x: int
    y: int
    polarity: int
    timestamp: int


@dataclass
class SpikeTensor:
    data: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != TENSOR_SHAPE:
            raise ValueError(f"spike tensor must have shape {TENSOR_SHAPE}, got {self.data.shape}")
        if self.data.max(initial=0) > 1:
            raise ValueError("spike tensor must be binary")


# ---------------------------------------------------------------- event codec


def decode_events(buf: bytes, width: int = WIDTH, height: int = HEIGHT) -> np.ndarray:
    """Vectorised decode into a structured array with fields x, y, p, t."""
    raw = np.frombuffer(bytes(buf), dtype=np.uint8)
    if raw.size % RECORD:
        offset = raw.size - raw.size % RECORD
        raise EventFormatError(f"truncated record at byte offset {offset}")
    rec = raw.reshape(-1, RECORD).astype(np.int64)
    ev = np.empty(rec.shape[0], dtype=EVENT_DTYPE)
    ev["x"] = rec[:, 0]
    ev["y"] = rec[:, 1]
    ev["p"] = rec[:, 2] >> 7
    ev["t"] = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    bad = np.flatnonzero((ev["x"] >= width) | (ev["y"] >= height))
    if bad.size:
        i = int(bad[0])
        raise EventFormatError(
            f"coordinate out of range at byte offset {i * RECORD}: x={ev['x'][i]}, y={ev['y'][i]}")
    return ev


def parse_events(buf: bytes) -> list[DvsEvent]:
    ev = decode_events(buf)
    return [DvsEvent(int(a), int(b), int(c), int(d)) for a, b, c, d in
            zip(ev["x"], ev["y"], ev["p"], ev["t"])]


def _as_structured(events) -> np.ndarray:
    if isinstance(events, np.ndarray) and events.dtype.names:
        return events
    ev = np.empty(len(events), dtype=EVENT_DTYPE)
    for i, e in enumerate(events):
        ev[i] = tuple(e)
    return ev


def encode_events(events) -> bytes:
    ev = _as_structured(events)
    if np.any((ev["t"] < 0) | (ev["t"] > MAX_TS)):
        raise EventFormatError("timestamp does not fit in 23 bits")
    if np.any((ev["x"] < 0) | (ev["x"] > 255) | (ev["y"] < 0) | (ev["y"] > 255)):
        raise EventFormatError("address does not fit in one byte")
    out = np.empty((ev.size, RECORD), dtype=np.uint8)
    t = ev["t"]
    out[:, 0] = ev["x"]
    out[:, 1] = ev["y"]
    out[:, 2] = ((ev["p"] & 1) << 7) | ((t >> 16) & 0x7F)
    out[:, 3] = (t >> 8) & 0xFF
    out[:, 4] = t & 0xFF
    return out.tobytes()


# ---------------------------------------------------------------- binning


def bin_events(events, T: int = T_STEPS, window_us: int | None = None,
               height: int = HEIGHT, width: int = WIDTH) -> tuple[np.ndarray, bool]:
    """Binary (T, 2, H, W) occupancy tensor; returns (tensor, empty_flag).

    By default the bins split [0, t_last] evenly. With ``window_us`` the bins
    split [0, window_us) and later events are dropped.
    """
    ev = _as_structured(events)
    out = np.zeros((T, CHANNELS, height, width), dtype=np.uint8)
    if ev.size == 0:
        return out, True
    t = ev["t"]
    if window_us is not None:
        keep = t < window_us
        ev, t = ev[keep], t[keep]
        b = (t * T) // window_us
    else:
        span = int(t.max())
        b = np.zeros_like(t) if span == 0 else np.minimum((t * T) // span, T - 1)
    out[b, ev["p"], ev["y"], ev["x"]] = 1
    return out, False


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentSpec:
    jitter_ms: float = 2.0
    shift_px: int = 2
    seed: int | None = None
    bin_ms: float = 12.0  # nominal bin width when only a tensor is available (300 ms / 25)

    def __post_init__(self):
        if self.jitter_ms < 0 or self.shift_px < 0 or self.bin_ms <= 0:
            raise ValueError("augmentation ranges must be non-negative")


def shift_tensor(x: np.ndarray, dx: int, dy: int, dt: int = 0) -> np.ndarray:
    """Integer translation along (time, y, x) with zero fill; ``x`` is (..., T, C, H, W)."""
    out = np.zeros_like(x)
    T, H, W = x.shape[-4], x.shape[-2], x.shape[-1]

    def span(d, n):
        return (slice(max(d, 0), n + min(d, 0)), slice(max(-d, 0), n - max(d, 0)))

    (ty, sy), (tx, sx), (tt, st) = span(dy, H), span(dx, W), span(dt, T)
    out[..., tt, :, ty, tx] = x[..., st, :, sy, sx]
    return out


def augment(x, spec: AugmentSpec, rng: np.random.Generator | None = None, events=None) -> np.ndarray:
    """Random spatial shift plus temporal jitter.

    With raw ``events`` each timestamp is jittered independently before
    re-binning. Otherwise the whole tensor rolls by the jitter expressed in
    bins (usually zero at the default ranges).
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    dx, dy = (int(v) for v in rng.integers(-spec.shift_px, spec.shift_px + 1, size=2))
    if events is not None:
        ev = _as_structured(events).copy()
        jit = int(round(spec.jitter_ms * 1000))
        if jit:
            ev["t"] = np.maximum(ev["t"] + rng.integers(-jit, jit + 1, size=ev.size), 0)
        ev["x"] += dx
        ev["y"] += dy
        keep = (ev["x"] >= 0) & (ev["x"] < WIDTH) & (ev["y"] >= 0) & (ev["y"] < HEIGHT)
        tensor, _ = bin_events(ev[keep])
        return tensor
    x = np.asarray(x)
    dt = int(round(rng.uniform(-spec.jitter_ms, spec.jitter_ms) / spec.bin_ms)) if spec.jitter_ms else 0
    if dx == dy == dt == 0:
        return x.copy()
    return shift_tensor(x, dx, dy, dt)


def augment_batch(X: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(x, spec, rng) for x in X])


# ---------------------------------------------------------------- synthetic data


def synthesize(class_id: int, seed: int, n_classes: int = 4, noise_rate: float = 0.01,
               motif: bool = True) -> SpikeTensor:
    """Class-specific oscillating bar plus Bernoulli background spikes.

    Class ``k`` draws a bar at angle ``k * pi / n_classes`` through a jittered
    centre, swinging perpendicular to itself; motion direction picks the
    polarity channel. The time-averaged footprint is an oriented band, so
    classes are separable from rates alone.
    """
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class_id must be in [0, {n_classes}), got {class_id}")
    rng = np.random.default_rng(seed)
    out = np.zeros(TENSOR_SHAPE, dtype=np.uint8)
    if motif:
        angle = class_id * np.pi / n_classes
        cx, cy = (HEIGHT - 1) / 2 + rng.uniform(-3, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp, period, half_len = 3.0, 12.0, 10.0
        yy, xx = np.mgrid[0:HEIGHT, 0:WIDTH]
        along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
        across = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
        for t in range(T_STEPS):
            w = 2 * np.pi * t / period + phase
            d = amp * np.sin(w)
            on = (np.abs(across - d) < 1.0) & (np.abs(along) <= half_len)
            out[t, int(np.cos(w) >= 0), on] = 1
    if noise_rate > 0:
        out |= (rng.random(TENSOR_SHAPE) < noise_rate).astype(np.uint8)
    return SpikeTensor(out, class_id)


def make_synthetic(n: int, n_classes: int = 4, seed: int = 0, noise_rate: float = 0.01,
                   motif: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Balanced, shuffled synthetic set: X (n, T, 2, 34, 34) uint8, y (n,)."""
    ss = np.random.SeedSequence(seed)
    child = ss.spawn(n + 1)
    labels = np.arange(n) % n_classes
    np.random.default_rng(child[-1]).shuffle(labels)
    X = np.empty((n, *TENSOR_SHAPE), dtype=np.uint8)
    for i in range(n):
        s = int(child[i].generate_state(1)[0])
        X[i] = synthesize(int(labels[i]), s, n_classes, noise_rate, motif).data
    return X, labels.astype(np.int64)


# ---------------------------------------------------------------- tensor cache

_MAGIC = b"NMT1"
_HEADER = struct.Struct("<4sII4H")


def write_tensor_cache(path, X: np.ndarray, y: np.ndarray | None = None):
    X = np.asarray(X, dtype=np.uint8)
    n = X.shape[0]
    labels = np.full(n, 255, dtype=np.uint8) if y is None else np.asarray(y, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, n, *X.shape[1:]))
        fh.write(labels.tobytes())
        fh.write(np.packbits(X.reshape(-1), bitorder="little").tobytes())


def read_tensor_cache(path) -> tuple[np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    magic, version, n, T, C, H, W = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != 1:
        raise EventFormatError(f"{path}: not an NMT1 v1 container")
    off = _HEADER.size
    labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off).astype(np.int64)
    off += n
    count = n * T * C * H * W
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=off), bitorder="little", count=count)
    return bits.reshape(n, T, C, H, W), labels


# ---------------------------------------------------------------- N-MNIST on disk


def dataset_root(explicit=None) -> Path:
    root = explicit or os.environ.get(ENV_ROOT)
    if not root:
        raise DatasetMissingError(f"N-MNIST root not given; pass --data-root or set {ENV_ROOT}")
    return Path(root)


def discover(root, split: str = "Train") -> list[tuple[Path, int]]:
    """Files under ``root/<split>/<digit>/*.bin``, sorted for a stable order."""
    base = Path(root) / split
    if not base.is_dir():
        raise DatasetMissingError(f"expected N-MNIST split directory at {base}")
    files = []
    for digit in range(10):
        for f in sorted((base / str(digit)).glob("*.bin")):
            files.append((f, digit))
    if not files:
        raise DatasetMissingError(f"no .bin files under {base}/<digit>/")
    return files


def load_nmnist(root, split: str = "Train", limit: int | None = None, seed: int = 0,
                cache_dir=None) -> tuple[np.ndarray, np.ndarray]:
    """Parse and bin a split; optional seeded subset and NMT1 cache."""
    files = discover(root, split)
    if limit is not None and limit < len(files):
        pick = np.sort(np.random.default_rng(seed).choice(len(files), limit, replace=False))
        files = [files[i] for i in pick]
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"{split.lower()}_{len(files)}_{seed}.nmt"
        if cache.exists():
            return read_tensor_cache(cache)
    X = np.empty((len(files), *TENSOR_SHAPE), dtype=np.uint8)
    y = np.empty(len(files), dtype=np.int64)
    for i, (f, label) in enumerate(files):
        X[i], _ = bin_events(decode_events(f.read_bytes()))
        y[i] = label
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_tensor_cache(cache, X, y)
    return X, y
