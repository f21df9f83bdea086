"""Memristor crossbar simulation with differential-pair weight encoding.

A signed weight is carried by two conductances (g_pos, g_neg); the unitless
weight is (g_pos - g_neg) * weight_scale.  Cells are either Formed (drawn from
the on-distribution by stochastic electroforming) or Reset (drawn from the
off-distribution, peak near zero).  Reads apply multiplicative Gaussian noise:

    g' = g + A * noise_scale * g,   A ~ N(0, 1)

All draws come from per-crossbar RNG streams so that an identical seed plus an
identical operation sequence reproduces identical conductance matrices.
Mutation draws (electroform / reset / set) and read-noise draws use separate
streams: noisy reads never perturb the mutation sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DeviceConfig",
    "DifferentialCrossbar",
    "kaiming_weight_scale",
    "electroform",
    "reset_pairs",
    "set_pairs",
    "read_weights",
    "vmm",
]


@dataclass(frozen=True)
class DeviceConfig:
    """Conductance statistics (uS) and the conductance-to-weight mapping.

    ``weight_scale`` may be left as None, meaning "derive from layer fan-in at
    construction time" (see :func:`kaiming_weight_scale`); operations that need
    a concrete scale reject a config that still carries None.
    """

    mu_on: float = 100.0
    sigma_on: float = 20.0
    mu_off: float = 0.0
    sigma_off: float = 0.5
    weight_scale: float | None = None
    read_noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.mu_on > self.mu_off >= 0.0):
            raise ValueError(f"require mu_on > mu_off >= 0, got {self.mu_on}, {self.mu_off}")
        if self.sigma_on < 0 or self.sigma_off < 0:
            raise ValueError("sigma_on and sigma_off must be >= 0")
        if self.read_noise_scale < 0:
            raise ValueError("read_noise_scale must be >= 0")
        if self.weight_scale is not None and not self.weight_scale > 0:
            raise ValueError(f"weight_scale must be > 0, got {self.weight_scale}")

    def resolved(self, fan_in: int) -> "DeviceConfig":
        """Return a copy whose weight_scale is concrete for the given fan-in."""
        if self.weight_scale is not None:
            return self
        return replace(self, weight_scale=kaiming_weight_scale(fan_in, self.sigma_on))


def kaiming_weight_scale(fan_in: int, sigma_on: float) -> float:
    """Scale making formed-pair weights match Kaiming-normal std sqrt(2/fan_in).

    A formed pair's weight is (g_pos - g_neg) * scale with both cells
    ~N(mu_on, sigma_on), so its std is sqrt(2) * sigma_on * scale.
    """
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    if sigma_on <= 0:
        raise ValueError("kaiming scale undefined for sigma_on <= 0")
    return 1.0 / (sigma_on * math.sqrt(fan_in))


class DifferentialCrossbar:
    """Paired conductance matrices with per-pair Formed/Reset state.

    Instances are created by :func:`electroform` and mutated only by
    reset_pairs / set_pairs.  Conductances are stored as float32 (uS).
    Concurrent reads are safe when each caller supplies its own ``rng``;
    mutations require exclusive access.
    """

    __slots__ = ("g_pos", "g_neg", "formed", "config", "_mut_rng", "_read_rng")

    def __init__(self, g_pos, g_neg, formed, config, mut_rng, read_rng):
        if g_pos.shape != g_neg.shape or g_pos.shape != formed.shape:
            raise ValueError("g_pos, g_neg and state must share one shape")
        if config.weight_scale is None:
            raise ValueError("crossbar needs a concrete weight_scale")
        self.g_pos = g_pos
        self.g_neg = g_neg
        self.formed = formed
        self.config = config
        self._mut_rng = mut_rng
        self._read_rng = read_rng

    @property
    def shape(self) -> tuple[int, int]:
        return self.g_pos.shape

    def __repr__(self):
        r, c = self.shape
        return f"DifferentialCrossbar({r}x{c}, {int(self.formed.sum())} formed)"

    # -- persistence hooks (see checkpoint module for the on-disk format) --

    def state_arrays(self):
        return self.g_pos, self.g_neg, self.formed

    def rng_states(self):
        return self._mut_rng.bit_generator.state, self._read_rng.bit_generator.state

    @classmethod
    def from_state(cls, g_pos, g_neg, formed, config, mut_state=None, read_state=None):
        xbar = electroform(g_pos.shape[0], g_pos.shape[1], config)
        xbar.g_pos = np.ascontiguousarray(g_pos, dtype=np.float32)
        xbar.g_neg = np.ascontiguousarray(g_neg, dtype=np.float32)
        xbar.formed = np.ascontiguousarray(formed, dtype=bool)
        if mut_state is not None:
            xbar._mut_rng.bit_generator.state = mut_state
        if read_state is not None:
            xbar._read_rng.bit_generator.state = read_state
        return xbar


def _draw_conductance(rng, mu, sigma, size):
    g = rng.normal(mu, sigma, size=size)
    # conductance is physical: clamp negative draws at 0
    return np.clip(g, 0.0, None).astype(np.float32)


def electroform(rows: int, cols: int, config: DeviceConfig) -> DifferentialCrossbar:
    """Stochastic forming of a rows x cols crossbar; every pair ends Formed.

    g_pos is drawn before g_neg, each elementwise N(mu_on, sigma_on) clamped
    at 0.  Identical (rows, cols, config) reproduces identical matrices.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"crossbar shape must be >= 1x1, got {rows}x{cols}")
    mut_ss, read_ss = np.random.SeedSequence(config.seed).spawn(2)
    mut_rng = np.random.default_rng(mut_ss)
    read_rng = np.random.default_rng(read_ss)
    g_pos = _draw_conductance(mut_rng, config.mu_on, config.sigma_on, (rows, cols))
    g_neg = _draw_conductance(mut_rng, config.mu_on, config.sigma_on, (rows, cols))
    formed = np.ones((rows, cols), dtype=bool)
    return DifferentialCrossbar(g_pos, g_neg, formed, config, mut_rng, read_rng)


def _check_mask(xbar, mask):
    mask = np.asarray(mask)
    if mask.shape != xbar.shape:
        raise ValueError(f"mask shape {mask.shape} != crossbar shape {xbar.shape}")
    if mask.dtype != bool:
        raise ValueError("mask must be boolean")
    return mask


def reset_pairs(xbar: DifferentialCrossbar, mask) -> DifferentialCrossbar:
    """RESET the masked pairs: both cells redrawn from the off-distribution.

    Unmasked pairs are untouched.  Re-resetting an already-Reset pair simply
    redraws from the same distribution (state-level idempotent).
    """
    mask = _check_mask(xbar, mask)
    n = int(mask.sum())
    if n:
        cfg = xbar.config
        xbar.g_pos[mask] = _draw_conductance(xbar._mut_rng, cfg.mu_off, cfg.sigma_off, n)
        xbar.g_neg[mask] = _draw_conductance(xbar._mut_rng, cfg.mu_off, cfg.sigma_off, n)
        xbar.formed[mask] = False
    return xbar


def set_pairs(xbar: DifferentialCrossbar, mask) -> DifferentialCrossbar:
    """SET the masked pairs back to Formed with fresh on-distribution draws.

    SET is stochastic: it does not recover pre-reset conductance values.
    """
    mask = _check_mask(xbar, mask)
    n = int(mask.sum())
    if n:
        cfg = xbar.config
        xbar.g_pos[mask] = _draw_conductance(xbar._mut_rng, cfg.mu_on, cfg.sigma_on, n)
        xbar.g_neg[mask] = _draw_conductance(xbar._mut_rng, cfg.mu_on, cfg.sigma_on, n)
        xbar.formed[mask] = True
    return xbar


def read_weights(xbar: DifferentialCrossbar, noise_scale: float | None = None, rng=None):
    """Read the weight matrix (g_pos - g_neg) * weight_scale with read noise.

    Noise is multiplicative per cell (g' = g + A * noise_scale * g) and drawn
    fresh on every call; cells at g = 0 therefore read back exactly 0.  At
    noise_scale == 0 no RNG draw is consumed and the read is exact.
    """
    if noise_scale is None:
        noise_scale = xbar.config.read_noise_scale
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
    scale = np.float32(xbar.config.weight_scale)
    if noise_scale == 0.0:
        return (xbar.g_pos - xbar.g_neg) * scale
    if rng is None:
        rng = xbar._read_rng
    ns = np.float32(noise_scale)
    a_pos = rng.standard_normal(xbar.shape, dtype=np.float32)
    a_neg = rng.standard_normal(xbar.shape, dtype=np.float32)
    gp = xbar.g_pos + a_pos * ns * xbar.g_pos
    gn = xbar.g_neg + a_neg * ns * xbar.g_neg
    return (gp - gn) * scale


def vmm(xbar: DifferentialCrossbar, x, noise_scale: float = 0.0, rng=None):
    """Vector-matrix multiply through the crossbar: x (len rows) -> len cols."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != xbar.shape[0]:
        raise ValueError(f"input length {x.shape} incompatible with crossbar {xbar.shape}")
    return x @ read_weights(xbar, noise_scale, rng)
