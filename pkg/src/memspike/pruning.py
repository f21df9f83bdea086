"""Topology optimization over frozen random weights.

Each layer owns a frozen weight source (a differential crossbar, or a plain
matrix for software baselines) plus one trainable pop-up score per synapse.
The forward pass uses only the synapses whose scores are in the layer's top
k%; the backward pass updates every score by the straight-through rule

    s_ij <- s_ij - lr * (dL/dI_i) * w_ij * Z_j

with no mask gating, so pruned synapses keep competing for re-entry.  Weights
are never fine-tuned here; conductances change only when the final topology is
physically applied (RESET of the pruned pairs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import device, layers
from .layers import LayerGeometry
from .tape import Tape, backward

__all__ = [
    "ScoredLayer",
    "SoftwareWeights",
    "TrainConfig",
    "TrainingDiverged",
    "topk_mask",
    "masked_forward",
    "ste_update",
    "train",
    "apply_final_topology",
]


class TrainingDiverged(RuntimeError):
    pass


def topk_mask(scores, k_percent: float):
    """Boolean mask of the ceil(k% * n) largest scores; ties break toward the
    lowest flat index.  Pure function of its inputs."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("empty score tensor")
    if not 0.0 < k_percent <= 100.0:
        raise ValueError(f"k_percent must lie in (0, 100], got {k_percent}")
    n = scores.size
    keep = int(math.ceil(k_percent / 100.0 * n))
    # stable argsort of the negated scores keeps ascending flat order on ties
    order = np.argsort(-scores.reshape(-1), kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(scores.shape)


class SoftwareWeights:
    """Frozen software weight matrix with the crossbar read interface.

    Used by the software baselines; "read noise" keeps the same multiplicative
    form as the device model so all arms share one noise convention.
    """

    def __init__(self, matrix):
        self.w = np.ascontiguousarray(matrix, dtype=np.float32)

    @property
    def shape(self):
        return self.w.shape

    def read(self, noise_scale=0.0, rng=None):
        if noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if noise_scale == 0.0:
            return self.w.copy()
        if rng is None:
            raise ValueError("software noisy read needs an explicit rng")
        a = rng.standard_normal(self.w.shape, dtype=np.float32)
        return self.w + a * np.float32(noise_scale) * self.w

    @staticmethod
    def kaiming(geom: LayerGeometry, rng) -> "SoftwareWeights":
        std = math.sqrt(2.0 / geom.fan_in)
        return SoftwareWeights(rng.normal(0.0, std, size=(geom.fan_in, geom.fan_out)))


class ScoredLayer:
    """One layer: frozen weights, pop-up scores, current top-k mask, geometry."""

    def __init__(self, geometry: LayerGeometry, xbar=None, soft=None, k_percent=50.0):
        if (xbar is None) == (soft is None):
            raise ValueError("exactly one of xbar / soft must be given")
        source = xbar if xbar is not None else soft
        if source.shape != (geometry.fan_in, geometry.fan_out):
            raise ValueError(f"weight shape {source.shape} does not match geometry "
                             f"{(geometry.fan_in, geometry.fan_out)}")
        self.geometry = geometry
        self.xbar = xbar
        self.soft = soft
        self.k_percent = float(k_percent)
        w = self.frozen_weights()
        peak = np.abs(w).max()
        # standard practice: start from magnitude-ranked scores, unit max
        self.scores = (np.abs(w) / peak if peak > 0 else np.zeros_like(w)).astype(np.float32)
        self._stamp = 0
        self._mask_stamp = -1
        self.cached_mask = None
        self.refresh_mask()

    @classmethod
    def memristor(cls, geometry, config: device.DeviceConfig, k_percent=50.0):
        cfg = config.resolved(geometry.fan_in)
        xbar = device.electroform(geometry.fan_in, geometry.fan_out, cfg)
        return cls(geometry, xbar=xbar, k_percent=k_percent)

    @classmethod
    def software(cls, geometry, rng, k_percent=50.0):
        return cls(geometry, soft=SoftwareWeights.kaiming(geometry, rng), k_percent=k_percent)

    @property
    def is_memristor(self):
        return self.xbar is not None

    def frozen_weights(self):
        """The stored random weights, read without noise."""
        if self.xbar is not None:
            return device.read_weights(self.xbar, 0.0)
        return self.soft.read(0.0)

    def weights(self, noise_scale=0.0, rng=None):
        if self.xbar is not None:
            return device.read_weights(self.xbar, noise_scale, rng)
        return self.soft.read(noise_scale, rng)

    def refresh_mask(self):
        self.cached_mask = topk_mask(self.scores, self.k_percent)
        self._mask_stamp = self._stamp

    def mask_fresh(self) -> bool:
        return self._mask_stamp == self._stamp

    def update_scores(self, delta):
        """scores -= delta, then recompute the mask (mask is a pure function
        of scores, refreshed after every optimizer step)."""
        self.scores = self.scores - delta.astype(self.scores.dtype)
        self._stamp += 1
        self.refresh_mask()

    def update_soft_weights(self, delta):
        if self.soft is None:
            raise ValueError("conductances are frozen; memristor layers train scores only")
        self.soft.w = self.soft.w - delta.astype(self.soft.w.dtype)

    def active_count(self) -> int:
        return int(self.cached_mask.sum())


def masked_forward(layer: ScoredLayer, z, noise_scale=0.0, *, tape: Tape | None = None,
                   rng=None, weights=None):
    """Run the layer primitive with the top-k masked weights.

    Plain-array mode returns the pre-activation tensor.  Tape mode takes a
    Node for ``z`` and returns (output node, weight node); the weight node's
    gradient after backward is the dense correlation of cached inputs with
    dL/dI, exactly what the score update needs.
    """
    if not layer.mask_fresh():
        raise RuntimeError("stale mask: scores changed without refresh_mask()")
    w = layer.weights(noise_scale, rng) if weights is None else weights
    w_eff = w * layer.cached_mask
    geom = layer.geometry
    if tape is None:
        z = np.asarray(z)
        if geom.kind == "conv":
            return layers.conv2d_value(z, w_eff, geom)
        return layers.fc_value(z, w_eff, geom)
    w_node = tape.leaf(w_eff, op=f"w[{geom.kind}]")
    out = tape.conv2d(z, w_node, geom) if geom.kind == "conv" else tape.linear(z, w_node, geom)
    return out, w_node


def _dense_weight_grad(layer: ScoredLayer, grad_list, z_list):
    geom = layer.geometry
    gw = np.zeros((geom.fan_in, geom.fan_out), dtype=np.float64)
    for z, g in zip(z_list, grad_list, strict=True):
        z = np.asarray(z)
        g = np.asarray(g)
        if geom.kind == "conv":
            gw += layers.conv2d_weight_grad(z, g, geom)
        else:
            if z.shape[0] != g.shape[0]:
                raise ValueError("z and grad batch sizes differ")
            gw += z.T @ g
    return gw.astype(np.float32)


def ste_update(layer: ScoredLayer, grad_I, z_cache, lr: float):
    """Straight-through score update from cached forward quantities.

    ``grad_I`` / ``z_cache`` are the loss gradient at the layer's
    pre-activation and the layer input, either single arrays or per-timestep
    sequences.  The update touches every synapse (pruned ones included) and
    sums over all spatial positions and timesteps where a weight is applied.
    """
    if isinstance(grad_I, np.ndarray):
        grad_I, z_cache = [grad_I], [z_cache]
    gw = _dense_weight_grad(layer, grad_I, z_cache)
    layer.update_scores(lr * gw * layer.frozen_weights())
    return layer.scores


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 100
    k_percent: float = 50.0
    momentum: float = 0.0
    cosine_decay: bool = True
    seed: int = 0
    grad_target: str = "scores"  # "weights" switches to the dense-tuning baseline

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.k_percent <= 100.0:
            raise ValueError("k_percent must lie in (0, 100]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.grad_target not in ("scores", "weights"):
            raise ValueError(f"unknown grad_target {self.grad_target!r}")


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)  # accuracy or reconstruction MSE
    lr: list = field(default_factory=list)

    def as_rows(self):
        return [{"epoch": i, "loss": l, "metric": m, "lr": r}
                for i, (l, m, r) in enumerate(zip(self.loss, self.metric, self.lr))]


def train(model, dataset, cfg: TrainConfig) -> TrainHistory:
    """Run the score-training loop (or dense weight tuning when configured).

    Per step: masked forward at read-noise 0, loss, tape backward, then either
    the straight-through score update with mask recomputation, or a plain
    gradient step on software weights.  Aborts on divergent (non-finite) loss.
    """
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    history = TrainHistory()
    velocity = {}
    for epoch in range(cfg.epochs):
        if cfg.cosine_decay and cfg.epochs > 1:
            lr_t = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        else:
            lr_t = cfg.learning_rate
        perm = rng.permutation(n)
        ep_loss = 0.0
        ep_metric = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            fwd = model.build_tape(dataset.inputs[idx], rng=rng)
            loss, seeds, metric = model.loss_and_seeds(fwd, dataset.targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // cfg.batch_size}")
            backward(fwd.tape, seeds)
            for layer, w_node in fwd.scored:
                if cfg.grad_target == "scores":
                    g = w_node.grad * layer.frozen_weights()
                else:
                    g = w_node.grad * layer.cached_mask
                if cfg.momentum > 0.0:
                    v = velocity.get(id(layer))
                    v = g if v is None else cfg.momentum * v + g
                    velocity[id(layer)] = v
                    g = v
                if cfg.grad_target == "scores":
                    layer.update_scores(lr_t * g)
                else:
                    layer.update_soft_weights(lr_t * g)
            ep_loss += loss * len(idx)
            ep_metric += metric * len(idx)
        history.loss.append(ep_loss / n)
        history.metric.append(ep_metric / n)
        history.lr.append(lr_t)
    return history


def apply_final_topology(model):
    """Physically realize the trained mask: RESET every pair outside it.

    Pairs inside the mask that are not currently formed (possible after a
    previous topology application) are SET first.  In-mask conductances are
    otherwise untouched, so the retained weights keep their trained values.
    """
    for layer in model.scored_layers():
        if not layer.is_memristor:
            continue
        mask = layer.cached_mask
        revive = mask & ~layer.xbar.formed
        if revive.any():
            device.set_pairs(layer.xbar, revive)
        device.reset_pairs(layer.xbar, ~mask)
    return model
