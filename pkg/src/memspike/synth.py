"""Deterministic synthetic digit datasets in the real on-disk formats.

Grayscale digits are rasterized from a vector font with per-sample affine
jitter and pixel noise, then written as standard IDX files.  Event streams
are produced by sweeping the digit along a saccade-like path over a 34x34
canvas and emitting ON/OFF events where the interpolated intensity rises or
falls between micro-frames, written in the 40-bit AER record format.  Both
generators are pure functions of their seed, so fixtures and desk-scale runs
reproduce bit-for-bit.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import data

__all__ = [
    "render_digit",
    "make_mnist_idx",
    "digit_event_stream",
    "make_nmnist_dir",
    "ensure_synth_nmnist",
    "ensure_synth_mnist",
    "load_binned_nmnist",
]

_FONT = None


def _font(size):
    global _FONT
    if _FONT is None:
        from matplotlib import font_manager
        _FONT = font_manager.findfont("DejaVu Sans")
    return ImageFont.truetype(_FONT, size)


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered 28x28 grayscale digit in [0, 1]."""
    if not 0 <= digit <= 9:
        raise ValueError("digit must be 0..9")
    hi = 84  # rasterize large, then area-downsample for soft edges
    size = int(rng.integers(54, 72))
    img = Image.new("L", (hi, hi), 0)
    draw = ImageDraw.Draw(img)
    font = _font(size)
    l, t, r, b = draw.textbbox((0, 0), str(digit), font=font)
    cx = (hi - (r - l)) / 2 - l + float(rng.uniform(-6, 6))
    cy = (hi - (b - t)) / 2 - t + float(rng.uniform(-6, 6))
    draw.text((cx, cy), str(digit), fill=255, font=font)
    img = img.rotate(float(rng.uniform(-12, 12)), resample=Image.BILINEAR)
    img = img.resize((28, 28), resample=Image.BOX)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr *= float(rng.uniform(0.85, 1.0))
    arr += rng.normal(0.0, 0.03, arr.shape).astype(np.float32)
    return np.clip(arr, 0.0, 1.0)


def _digit_batch(n: int, seed: int):
    """n digits, classes cycling 0..9, deterministic under seed."""
    root = np.random.SeedSequence(seed)
    labels = np.arange(n, dtype=np.int64) % 10
    images = np.empty((n, 28, 28), dtype=np.float32)
    for i, ss in enumerate(root.spawn(n)):
        images[i] = render_digit(int(labels[i]), np.random.default_rng(ss))
    return images, labels


def make_mnist_idx(root, n_train: int, n_test: int, seed: int = 0) -> None:
    """Write train/t10k IDX image+label files of synthetic digits."""
    os.makedirs(root, exist_ok=True)
    for split, n, sub in (("train", n_train, 0), ("t10k", n_test, 1)):
        images, labels = _digit_batch(n, seed * 1000003 + sub)
        u8 = np.round(images * 255).astype(np.uint8)
        data.write_idx_images(os.path.join(root, f"{split}-images-idx3-ubyte"), u8)
        data.write_idx_labels(os.path.join(root, f"{split}-labels-idx1-ubyte"), labels)


def _bilinear_shift(img, dy, dx):
    """Shift by a fractional offset with bilinear interpolation, zero fill."""
    iy, ix = int(np.floor(dy)), int(np.floor(dx))
    fy, fx = dy - iy, dx - ix
    out = np.zeros_like(img)
    for oy, ox, wgt in ((iy, ix, (1 - fy) * (1 - fx)), (iy, ix + 1, (1 - fy) * fx),
                        (iy + 1, ix, fy * (1 - fx)), (iy + 1, ix + 1, fy * fx)):
        if wgt == 0.0:
            continue
        src_y = slice(max(0, -oy), min(img.shape[0], img.shape[0] - oy))
        src_x = slice(max(0, -ox), min(img.shape[1], img.shape[1] - ox))
        dst_y = slice(max(0, oy), max(0, oy) + (src_y.stop - src_y.start))
        dst_x = slice(max(0, ox), max(0, ox) + (src_x.stop - src_x.start))
        out[dst_y, dst_x] += wgt * img[src_y, src_x]
    return out


# saccade waypoints (dy, dx) traced over the 300 ms recording
_SACCADE = [(0.0, 0.0), (2.0, 1.5), (-1.0, 2.5), (0.0, 0.0)]
_DURATION_US = 300_000


def digit_event_stream(digit: int, rng: np.random.Generator, *,
                       micro_steps: int = 12, threshold: float = 0.12,
                       keep_prob: float = 0.85, noise_events: int = 30) -> data.EventStream:
    """Emit ON/OFF events from a digit swept along the saccade path."""
    glyph = render_digit(digit, rng)
    canvas = np.zeros((34, 34), dtype=np.float32)
    canvas[3:31, 3:31] = glyph
    segs = len(_SACCADE) - 1
    xs, ys, ps, tss = [], [], [], []
    prev = None
    for step in range(micro_steps):
        frac = step / (micro_steps - 1) if micro_steps > 1 else 0.0
        pos = min(int(frac * segs), segs - 1)
        local = frac * segs - pos
        (y0, x0), (y1, x1) = _SACCADE[pos], _SACCADE[pos + 1]
        dy, dx = y0 + (y1 - y0) * local, x0 + (x1 - x0) * local
        frame = _bilinear_shift(canvas, dy, dx)
        if prev is not None:
            diff = frame - prev
            for pol, sel in ((1, diff > threshold), (0, diff < -threshold)):
                yy, xx = np.nonzero(sel)
                keep = rng.random(yy.size) < keep_prob
                yy, xx = yy[keep], xx[keep]
                t_base = int(step * _DURATION_US / micro_steps)
                jit = rng.integers(0, _DURATION_US // micro_steps, size=yy.size)
                xs.append(xx)
                ys.append(yy)
                ps.append(np.full(yy.size, pol, dtype=np.int64))
                tss.append(t_base + jit)
        prev = frame
    if noise_events:
        xs.append(rng.integers(0, 34, noise_events))
        ys.append(rng.integers(0, 34, noise_events))
        ps.append(rng.integers(0, 2, noise_events))
        tss.append(rng.integers(0, _DURATION_US, noise_events))
    x = np.concatenate(xs).astype(np.int64)
    y = np.concatenate(ys).astype(np.int64)
    p = np.concatenate(ps).astype(np.int64)
    ts = np.concatenate(tss).astype(np.int64)
    return data.EventStream(x, y, p, ts).sorted()


def make_nmnist_dir(root, split: str, n: int, seed: int = 0) -> None:
    """Write n AER files under <root>/<split>/<digit>/, classes balanced."""
    base = os.path.join(root, split)
    labels = np.arange(n, dtype=np.int64) % 10
    seeds = np.random.SeedSequence(seed).spawn(n)
    counters = {c: 0 for c in range(10)}
    for c in range(10):
        os.makedirs(os.path.join(base, str(c)), exist_ok=True)
    for i in range(n):
        c = int(labels[i])
        stream = digit_event_stream(c, np.random.default_rng(seeds[i]))
        data.save_aer(os.path.join(base, str(c), f"{counters[c]:05d}.bin"), stream)
        counters[c] += 1


def ensure_synth_nmnist(root, n_train: int, n_test: int, seed: int = 0) -> str:
    """Create the synthetic event dataset under root once; returns root."""
    marker = os.path.join(root, f".synth-{n_train}-{n_test}-{seed}")
    if not os.path.exists(marker):
        make_nmnist_dir(root, "Train", n_train, seed=seed * 2 + 1)
        make_nmnist_dir(root, "Test", n_test, seed=seed * 2 + 2)
        with open(marker, "w") as f:
            f.write("ok\n")
    return root


def ensure_synth_mnist(root, n_train: int, n_test: int, seed: int = 0) -> str:
    marker = os.path.join(root, f".synth-{n_train}-{n_test}-{seed}")
    if not os.path.exists(marker):
        make_mnist_idx(root, n_train, n_test, seed=seed)
        with open(marker, "w") as f:
            f.write("ok\n")
    return root


def load_binned_nmnist(root, split: str, t_bins: int = 10):
    """Load and bin a split, caching the tensors next to the AER files."""
    cache = os.path.join(root, f"frames-{split}-{t_bins}.npz")
    if os.path.exists(cache):
        z = np.load(cache)
        return z["frames"], z["labels"]
    frames, labels = data.load_nmnist_dir(root, split, t_bins)
    np.savez_compressed(cache, frames=frames, labels=labels)
    return frames, labels
