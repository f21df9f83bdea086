"""Dataset ingestion: AER event files, MNIST-style IDX files, inpainting masks.

Event files hold 40-bit records: one byte x, one byte y, then three bytes
holding the polarity bit (MSB) and a 23-bit big-endian timestamp in
microseconds.  Frames are built by partitioning events into equal-duration
windows over [first, last] timestamp and OR-accumulating per polarity, which
keeps every spike tensor binary.  Bin indices use exact integer arithmetic:

    bin = (ts - t0) * n_bins // (t_last - t0),  clipped to the last bin

Loaders are pure per file and safe to call in parallel.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ArrayDataset",
    "EventStream",
    "load_nmnist",
    "save_aer",
    "bin_events",
    "load_nmnist_dir",
    "load_mnist_idx",
    "write_idx_images",
    "write_idx_labels",
    "apply_inpaint_mask",
    "mask_geometry",
    "stratified_subset",
]

SENSOR_DIMS = (34, 34)
MAX_TIMESTAMP = (1 << 23) - 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class ArrayDataset:
    """Aligned input/target arrays, with labels kept when targets are images."""

    inputs: np.ndarray
    targets: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")

    def __len__(self):
        return len(self.inputs)

    def take(self, idx) -> "ArrayDataset":
        lab = None if self.labels is None else self.labels[idx]
        return ArrayDataset(self.inputs[idx], self.targets[idx], lab)


@dataclass
class EventStream:
    """Sorted address events from one recording."""

    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray   # 1 = on, 0 = off; channel index equals the bit
    timestamp: np.ndarray  # microseconds, non-decreasing
    dims: tuple[int, int] = SENSOR_DIMS

    def __len__(self):
        return len(self.timestamp)

    def sorted(self) -> "EventStream":
        order = np.argsort(self.timestamp, kind="stable")
        return EventStream(self.x[order], self.y[order], self.polarity[order],
                           self.timestamp[order], self.dims)


def load_nmnist(path) -> EventStream:
    """Parse one AER binary file; rejects truncated or out-of-range records."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % 5 != 0:
        raise ValueError(f"{path}: truncated record at byte {raw.size - raw.size % 5}")
    rec = raw.reshape(-1, 5)
    x = rec[:, 0].astype(np.int64)
    y = rec[:, 1].astype(np.int64)
    polarity = (rec[:, 2] >> 7).astype(np.int64)
    ts = ((rec[:, 2].astype(np.int64) & 0x7F) << 16) | (rec[:, 3].astype(np.int64) << 8) \
        | rec[:, 4].astype(np.int64)
    bad = (x >= SENSOR_DIMS[1]) | (y >= SENSOR_DIMS[0])
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"{path}: out-of-range coordinate ({x[i]}, {y[i]}) at byte {i * 5}")
    return EventStream(x, y, polarity, ts).sorted()


def save_aer(path, stream: EventStream) -> None:
    """Write events in the 40-bit record format (inverse of load_nmnist)."""
    ts = np.asarray(stream.timestamp, dtype=np.int64)
    if ts.size and (ts.min() < 0 or ts.max() > MAX_TIMESTAMP):
        raise ValueError("timestamps must fit in 23 bits")
    rec = np.empty((ts.size, 5), dtype=np.uint8)
    rec[:, 0] = stream.x
    rec[:, 1] = stream.y
    rec[:, 2] = (np.asarray(stream.polarity, dtype=np.uint8) << 7) | ((ts >> 16) & 0x7F).astype(np.uint8)
    rec[:, 3] = ((ts >> 8) & 0xFF).astype(np.uint8)
    rec[:, 4] = (ts & 0xFF).astype(np.uint8)
    rec.tofile(path)


def bin_events(stream: EventStream, t_bins: int = 10) -> np.ndarray:
    """Binary frames (t_bins, 2, H, W); a cell is 1 iff >= 1 event landed.

    Windows are equal-duration over [first, last] timestamp; the closing edge
    belongs to the last bin.  An empty stream yields all-zero frames.
    """
    if t_bins < 1:
        raise ValueError("t_bins must be >= 1")
    h, w = stream.dims
    frames = np.zeros((t_bins, 2, h, w), dtype=np.uint8)
    if len(stream) == 0:
        return frames
    ts = np.asarray(stream.timestamp, dtype=np.int64)
    t0, t1 = int(ts[0]), int(ts[-1])
    dur = t1 - t0
    if dur == 0:
        bins = np.zeros(ts.shape, dtype=np.int64)
    else:
        bins = np.minimum((ts - t0) * t_bins // dur, t_bins - 1)
    frames[bins, stream.polarity, stream.y, stream.x] = 1
    return frames


def load_nmnist_dir(root, split: str, t_bins: int = 10, classes=range(10)):
    """Load <root>/<split>/<digit>/*.bin into (frames (N,T,2,H,W) uint8, labels)."""
    base = os.path.join(root, split)
    frames, labels = [], []
    for c in classes:
        cdir = os.path.join(base, str(c))
        if not os.path.isdir(cdir):
            raise FileNotFoundError(f"missing class directory {cdir}")
        for name in sorted(os.listdir(cdir)):
            if not name.endswith(".bin"):
                continue
            frames.append(bin_events(load_nmnist(os.path.join(cdir, name)), t_bins))
            labels.append(c)
    if not frames:
        raise FileNotFoundError(f"no .bin files under {base}")
    return np.stack(frames), np.asarray(labels, dtype=np.int64)


def load_mnist_idx(images_path, labels_path):
    """IDX image/label pair -> (images float32 (N,1,28,28) in [0,1], labels int64)."""
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad magic 0x{magic:08x}")
        buf = f.read()
    if len(buf) != n * rows * cols:
        raise ValueError(f"{images_path}: payload size {len(buf)} != header {n}x{rows}x{cols}")
    images = np.frombuffer(buf, dtype=np.uint8).reshape(n, 1, rows, cols)
    images = images.astype(np.float32) / np.float32(255.0)
    with open(labels_path, "rb") as f:
        magic, m = struct.unpack(">II", f.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad magic 0x{magic:08x}")
        lbuf = f.read()
    if len(lbuf) != m:
        raise ValueError(f"{labels_path}: payload size {len(lbuf)} != header {m}")
    if m != n:
        raise ValueError(f"image count {n} != label count {m}")
    labels = np.frombuffer(lbuf, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise ValueError(f"{labels_path}: label {labels.max()} outside 0..9")
    return images, labels


def write_idx_images(path, images_u8) -> None:
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


MASK_ROWS = slice(10, 18)
MASK_COLS = slice(10, 18)


def mask_geometry():
    """Row/col slices of the obscured central 8x8 region of a 28x28 image."""
    return MASK_ROWS, MASK_COLS


def apply_inpaint_mask(image):
    """Zero the central 8x8 of a 28x28 image; returns (masked, geometry).

    Accepts (28, 28), (1, 28, 28) or a batch (N, 1, 28, 28); idempotent.
    """
    image = np.asarray(image)
    if image.shape[-2:] != (28, 28):
        raise ValueError(f"expected trailing 28x28, got {image.shape}")
    masked = image.copy()
    masked[..., MASK_ROWS, MASK_COLS] = 0
    return masked, mask_geometry()


def stratified_subset(labels, total: int, seed: int):
    """Deterministic class-stratified index sample of size ``total``."""
    labels = np.asarray(labels)
    if not 0 < total <= labels.size:
        raise ValueError(f"subset size {total} out of range for {labels.size} labels")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    per, extra = divmod(total, classes.size)
    picks = []
    for i, c in enumerate(classes):
        pool = np.flatnonzero(labels == c)
        want = per + (1 if i < extra else 0)
        if want > pool.size:
            raise ValueError(f"class {c} has only {pool.size} samples, need {want}")
        picks.append(rng.choice(pool, size=want, replace=False))
    idx = np.concatenate(picks)
    rng.shuffle(idx)
    return idx
