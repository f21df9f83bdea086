"""Iterative leaky integrate-and-fire neurons with a rectangular pseudo-derivative.

Dynamics per timestep (hard reset gated by the previous spike):

    u_t = tau_decay * u_{t-1} * (1 - o_{t-1}) + x_t
    o_t = H(u_t - v_th),   H(x) = 1 iff x > 0  (strict)

The Heaviside derivative is replaced during backprop by the rectangular window

    d o / d u  ~=  (1/a) * 1[|u - v_th| < a/2]

For gradient testing there is a smoothed spike variant whose forward is the
piecewise-linear antiderivative of that window (a clipped ramp); its exact
derivative is the same rectangle, so finite differences of the smoothed model
check the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LifParams",
    "LifState",
    "lif_step",
    "pseudo_grad",
    "spike_hard",
    "spike_smoothed",
]


@dataclass(frozen=True)
class LifParams:
    tau_decay: float = 0.25
    v_th: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau_decay <= 1.0:
            raise ValueError(f"tau_decay must lie in [0, 1], got {self.tau_decay}")
        if not self.v_th > 0:
            raise ValueError(f"v_th must be > 0, got {self.v_th}")
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")


@dataclass
class LifState:
    """Per-neuron membrane potential and previous-step spike output."""

    u: np.ndarray
    o_prev: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "LifState":
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def spike_hard(u, params: LifParams):
    """Heaviside spike: 1 where u - v_th > 0, else 0 (strict inequality)."""
    u = np.asarray(u)
    return (u - u.dtype.type(params.v_th) > 0).astype(u.dtype)


def spike_smoothed(u, params: LifParams):
    """Clipped-ramp surrogate of the spike, used only for gradient checks."""
    u = np.asarray(u)
    return np.clip((u - params.v_th) / params.a + 0.5, 0.0, 1.0).astype(u.dtype)


def pseudo_grad(u, params: LifParams):
    """Rectangular pseudo-derivative: (1/a) inside |u - v_th| < a/2, else 0."""
    u = np.asarray(u)
    inside = np.abs(u - params.v_th) < (params.a / 2)
    return inside.astype(u.dtype) / u.dtype.type(params.a)


def lif_step(state: LifState, x_t, params: LifParams):
    """Advance one timestep; returns (o_t, new_state).

    The previous state is not modified.  Rejects non-finite drive.
    """
    x_t = np.asarray(x_t)
    if x_t.shape != state.u.shape:
        raise ValueError(f"input shape {x_t.shape} != state shape {state.u.shape}")
    if not np.all(np.isfinite(x_t)):
        raise ValueError("non-finite weighted input to lif_step")
    tau = x_t.dtype.type(params.tau_decay)
    u_t = tau * state.u * (1 - state.o_prev) + x_t
    o_t = spike_hard(u_t, params)
    return o_t, LifState(u_t, o_t)
