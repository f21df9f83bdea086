"""The two reference architectures assembled from scored crossbar layers.

ScnnModel: event-frame classifier, 12C5-P2-64C5-P2 plus a dense readout, input
2x34x34 over 10 time bins.  The readout is non-spiking: per-step logits are
the dense layer's membrane drive, and the prediction uses their running mean.

SpikingVaeModel: image-inpainting autoencoder with 32-channel encoder/decoder
convolutions, a binary Bernoulli latent (straight-through gradient), and a
real-valued sigmoid frame head whose per-step frames are averaged into the
reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .device import DeviceConfig
from .layers import conv_geometry, fc_geometry
from .neuron import LifParams, LifState, lif_step
from .pruning import ScoredLayer
from .tape import Node, Tape

__all__ = [
    "ForwardPass",
    "ScnnModel",
    "SpikingVaeModel",
    "scnn_forward_step",
    "vae_forward_step",
    "bernoulli_sample",
    "vae_loss",
    "softmax_stable",
    "MODEL_REGISTRY",
]


def softmax_stable(z, axis=-1):
    z = np.asarray(z)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class ForwardPass:
    """Everything the trainer needs from one recorded batch forward."""

    tape: Tape
    readout: Node                      # mean over time of the per-step readout
    step_outputs: list[Node]
    scored: list                       # [(ScoredLayer, weight Node)] one node per layer
    prob_nodes: list = field(default_factory=list)  # VAE latent probabilities per step


def _scored_weight_nodes(tape, scored_layers, noise_scale=0.0, rng=None):
    pairs = []
    for layer in scored_layers:
        if not layer.mask_fresh():
            raise RuntimeError("stale mask before forward")
        w_eff = layer.weights(noise_scale, rng) * layer.cached_mask
        pairs.append((layer, tape.leaf(w_eff, op=f"w[{layer.geometry.kind}]")))
    return pairs


class ScnnModel:
    arch = "scnn-nmnist"
    in_shape = (2, 34, 34)
    n_classes = 10
    stochastic_forward = False

    def __init__(self, device_config: DeviceConfig | None = None,
                 lif_params: LifParams | None = None, k_percent: float = 50.0,
                 t_steps: int = 10, seed: int = 0, software: bool = False):
        self.lif_params = lif_params or LifParams()
        self.t_steps = int(t_steps)
        self.k_percent = float(k_percent)
        self.seed = int(seed)
        self.software = bool(software)
        base = device_config or DeviceConfig()
        geoms = [conv_geometry(2, 12, 5), conv_geometry(12, 64, 5), fc_geometry(64 * 5 * 5, 10)]
        # 34 -> C5 -> 30 -> P2 -> 15 -> C5 -> 11 -> P2 -> 5 (floor)
        h = 34
        for g in geoms[:2]:
            h, _ = g.out_hw(h, h)
            h //= 2
        if h * h * geoms[1].out_ch != geoms[2].n_in:
            raise AssertionError("layer dimension chain broken")
        seeds = np.random.SeedSequence(self.seed).spawn(len(geoms))
        self._layers = []
        for g, ss in zip(geoms, seeds):
            if software:
                self._layers.append(ScoredLayer.software(
                    g, np.random.default_rng(ss), k_percent=self.k_percent))
            else:
                cfg = replace(base, seed=int(ss.generate_state(1)[0]))
                self._layers.append(ScoredLayer.memristor(g, cfg, k_percent=self.k_percent))
        self.conv1, self.conv2, self.fc = self._layers

    def scored_layers(self):
        return list(self._layers)

    def read_masked_weights(self, noise_scale=0.0, rng=None, apply_mask=True):
        """Weight matrices for one inference episode (a single noise draw).

        apply_mask=False reads the raw device weights, the evaluation mode for
        a crossbar whose pruned pairs were physically RESET.
        """
        out = []
        for layer in self._layers:
            w = layer.weights(noise_scale, rng)
            out.append(w * layer.cached_mask if apply_mask else w)
        return out

    def init_states(self, batch: int):
        return [LifState.zeros((batch, 12, 30, 30)), LifState.zeros((batch, 64, 11, 11))]

    def step(self, frame_t, states, weights):
        """One timestep; returns (logits, new_states).  frame_t is (B, 2, 34, 34)."""
        frame_t = np.asarray(frame_t, dtype=np.float32)
        if frame_t.ndim != 4 or frame_t.shape[1:] != self.in_shape:
            raise ValueError(f"expected (B,)+{self.in_shape}, got {frame_t.shape}")
        w1, w2, wf = weights
        i1 = layers.conv2d_value(frame_t, w1, self.conv1.geometry)
        o1, s1 = lif_step(states[0], i1, self.lif_params)
        p1 = layers.avgpool2_value(o1)
        i2 = layers.conv2d_value(p1, w2, self.conv2.geometry)
        o2, s2 = lif_step(states[1], i2, self.lif_params)
        p2 = layers.avgpool2_value(o2)
        flat = p2.reshape(p2.shape[0], -1)
        logits = layers.fc_value(flat, wf, self.fc.geometry)
        return logits, [s1, s2]

    def forward_logits(self, frames, weights=None, t_max=None):
        """Per-step logits (B, T, n_classes) for a full static-depth pass."""
        frames = np.asarray(frames)
        if weights is None:
            weights = self.read_masked_weights()
        t_max = t_max or min(self.t_steps, frames.shape[1])
        states = self.init_states(frames.shape[0])
        out = np.empty((frames.shape[0], t_max, self.n_classes), dtype=np.float32)
        for t in range(t_max):
            out[:, t], states = self.step(frames[:, t], states, weights)
        return out

    def embeddings(self, frames, weights=None, t_max=None):
        """Mean-over-time penultimate features (flattened second pooling)."""
        frames = np.asarray(frames)
        if weights is None:
            weights = self.read_masked_weights()
        t_max = t_max or min(self.t_steps, frames.shape[1])
        states = self.init_states(frames.shape[0])
        acc = np.zeros((frames.shape[0], self.fc.geometry.n_in), dtype=np.float32)
        w1, w2, _ = weights
        for t in range(t_max):
            f = np.asarray(frames[:, t], dtype=np.float32)
            i1 = layers.conv2d_value(f, w1, self.conv1.geometry)
            o1, s1 = lif_step(states[0], i1, self.lif_params)
            p1 = layers.avgpool2_value(o1)
            i2 = layers.conv2d_value(p1, w2, self.conv2.geometry)
            o2, s2 = lif_step(states[1], i2, self.lif_params)
            p2 = layers.avgpool2_value(o2)
            states = [s1, s2]
            acc += p2.reshape(p2.shape[0], -1)
        return acc / np.float32(t_max)

    def build_tape(self, frames, rng=None, noise_scale=0.0, smoothed=False, t_max=None):
        """Record a full static-depth forward for backprop-through-time."""
        frames = np.asarray(frames, dtype=np.float32)
        t_max = t_max or min(self.t_steps, frames.shape[1])
        tape = Tape()
        scored = _scored_weight_nodes(tape, self._layers, noise_scale, rng)
        (l1, w1), (l2, w2), (lf, wf) = scored
        lif = self.lif_params
        u1 = o1 = u2 = o2 = None
        logit_nodes = []
        for t in range(t_max):
            x = tape.leaf(frames[:, t], op=f"frame[{t}]")
            i1 = tape.conv2d(x, w1, l1.geometry)
            u1 = tape.lif_charge(i1, u1, o1, lif)
            o1 = tape.spike(u1, lif, smoothed=smoothed)
            p1 = tape.avgpool2(o1)
            i2 = tape.conv2d(p1, w2, l2.geometry)
            u2 = tape.lif_charge(i2, u2, o2, lif)
            o2 = tape.spike(u2, lif, smoothed=smoothed)
            p2 = tape.avgpool2(o2)
            flat = tape.reshape(p2, (p2.value.shape[0], -1))
            logit_nodes.append(tape.linear(flat, wf, lf.geometry))
        readout = tape.mean_stack(logit_nodes)
        return ForwardPass(tape, readout, logit_nodes, scored)

    def loss_and_seeds(self, fwd: ForwardPass, labels):
        """Softmax cross-entropy on the mean readout; returns (loss, seeds, acc)."""
        labels = np.asarray(labels)
        logits = fwd.readout.value
        b = logits.shape[0]
        p = softmax_stable(logits.astype(np.float64))
        loss = float(-np.mean(np.log(np.maximum(p[np.arange(b), labels], 1e-30))))
        grad = p.astype(np.float32)
        grad[np.arange(b), labels] -= 1.0
        grad /= np.float32(b)
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        return loss, {fwd.readout: grad}, acc

    def per_step_macs(self) -> int:
        """Active-synapse multiply-accumulates for one timestep."""
        n = self.conv1.active_count() * 30 * 30
        n += self.conv2.active_count() * 11 * 11
        n += self.fc.active_count()
        return int(n)


def scnn_forward_step(model: ScnnModel, frame_t, states, weights=None):
    """Single-timestep forward with persistent neuron states."""
    if weights is None:
        weights = model.read_masked_weights()
    return model.step(frame_t, states, weights)


def bernoulli_sample(latent_probs, rng):
    """Independent Bernoulli draws from probabilities in [0, 1]."""
    p = np.asarray(latent_probs)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    return (rng.random(p.shape, dtype=np.float64) < p).astype(np.float32)


def vae_loss(reconstruction, ground_truth, latent_stats=None, lam: float = 0.0):
    """MSE reconstruction term plus an optional Bernoulli(0.5) regularizer.

    Returns (total, mse); the reported metric is the MSE term alone.  The
    ground truth is the unmasked original image.
    """
    x = np.asarray(ground_truth, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {x.shape}")
    mse = float(np.mean((x - r) ** 2))
    total = mse
    if lam and latent_stats is not None:
        p = np.clip(np.asarray(latent_stats, dtype=np.float64), 1e-7, 1 - 1e-7)
        kl = float(np.mean(p * np.log(2 * p) + (1 - p) * np.log(2 * (1 - p))))
        total = mse + lam * kl
    return total, mse


class SpikingVaeModel:
    arch = "svae-mnist"
    in_shape = (1, 28, 28)
    stochastic_forward = True

    def __init__(self, device_config: DeviceConfig | None = None,
                 lif_params: LifParams | None = None, k_percent: float = 50.0,
                 t_steps: int = 16, seed: int = 0, software: bool = False,
                 prior_weight: float = 1e-3):
        self.lif_params = lif_params or LifParams()
        self.t_steps = int(t_steps)
        self.k_percent = float(k_percent)
        self.seed = int(seed)
        self.software = bool(software)
        self.prior_weight = float(prior_weight)
        base = device_config or DeviceConfig()
        geoms = [
            conv_geometry(1, 32, 3, stride=2, padding=1),    # 28 -> 14
            conv_geometry(32, 32, 3, stride=2, padding=1),   # 14 -> 7
            conv_geometry(32, 32, 3, stride=1, padding=1),   # latent head, 7x7
            conv_geometry(32, 32, 3, stride=1, padding=1),   # decode at 7, then up
            conv_geometry(32, 32, 3, stride=1, padding=1),   # decode at 14, then up
            conv_geometry(32, 1, 3, stride=1, padding=1),    # frame head at 28
        ]
        seeds = np.random.SeedSequence(self.seed).spawn(len(geoms))
        self._layers = []
        for g, ss in zip(geoms, seeds):
            if software:
                self._layers.append(ScoredLayer.software(
                    g, np.random.default_rng(ss), k_percent=self.k_percent))
            else:
                cfg = replace(base, seed=int(ss.generate_state(1)[0]))
                self._layers.append(ScoredLayer.memristor(g, cfg, k_percent=self.k_percent))
        self.enc1, self.enc2, self.latent_head, self.dec1, self.dec2, self.frame_head = self._layers

    def scored_layers(self):
        return list(self._layers)

    def read_masked_weights(self, noise_scale=0.0, rng=None, apply_mask=True):
        out = []
        for layer in self._layers:
            w = layer.weights(noise_scale, rng)
            out.append(w * layer.cached_mask if apply_mask else w)
        return out

    def init_states(self, batch: int):
        return [
            LifState.zeros((batch, 32, 14, 14)),  # after enc1
            LifState.zeros((batch, 32, 7, 7)),    # after enc2
            LifState.zeros((batch, 32, 7, 7)),    # after dec1
            LifState.zeros((batch, 32, 14, 14)),  # after dec2
        ]

    @staticmethod
    def _sigmoid(x):
        return (1.0 / (1.0 + np.exp(-x))).astype(x.dtype)

    def step(self, masked_image, states, weights, rng):
        """One timestep; the masked image is fed directly every step.

        Returns (frame, latent_probs, new_states); the frame is the sigmoid
        readout in [0, 1], accumulated by the caller into the reconstruction.
        """
        x = np.asarray(masked_image, dtype=np.float32)
        if x.ndim != 4 or x.shape[1:] != self.in_shape:
            raise ValueError(f"expected (B,)+{self.in_shape}, got {x.shape}")
        we1, we2, wl, wd1, wd2, wh = weights
        lif = self.lif_params
        i1 = layers.conv2d_value(x, we1, self.enc1.geometry)
        o1, s1 = lif_step(states[0], i1, lif)
        i2 = layers.conv2d_value(o1, we2, self.enc2.geometry)
        o2, s2 = lif_step(states[1], i2, lif)
        probs = self._sigmoid(layers.conv2d_value(o2, wl, self.latent_head.geometry))
        z = bernoulli_sample(probs, rng)
        i3 = layers.conv2d_value(z, wd1, self.dec1.geometry)
        o3, s3 = lif_step(states[2], i3, lif)
        i4 = layers.conv2d_value(layers.upsample2_value(o3), wd2, self.dec2.geometry)
        o4, s4 = lif_step(states[3], i4, lif)
        frame = self._sigmoid(layers.conv2d_value(
            layers.upsample2_value(o4), wh, self.frame_head.geometry))
        return frame, probs, [s1, s2, s3, s4]

    def forward_frames(self, masked_images, rng, weights=None, t_max=None):
        """Per-step frames (B, T, 1, 28, 28)."""
        x = np.asarray(masked_images)
        if weights is None:
            weights = self.read_masked_weights()
        t_max = t_max or self.t_steps
        states = self.init_states(x.shape[0])
        out = np.empty((x.shape[0], t_max) + self.in_shape, dtype=np.float32)
        for t in range(t_max):
            out[:, t], _, states = self.step(x, states, weights, rng)
        return out

    def build_tape(self, masked_images, rng, noise_scale=0.0, smoothed=False, t_max=None):
        x0 = np.asarray(masked_images, dtype=np.float32)
        t_max = t_max or self.t_steps
        tape = Tape()
        scored = _scored_weight_nodes(tape, self._layers, noise_scale, rng)
        (e1, we1), (e2, we2), (lh, wl), (d1, wd1), (d2, wd2), (fh, wh) = scored
        lif = self.lif_params
        x = tape.leaf(x0, op="masked_image")
        u = [None] * 4
        o = [None] * 4
        frame_nodes, prob_nodes = [], []
        for _ in range(t_max):
            i1 = tape.conv2d(x, we1, e1.geometry)
            u[0] = tape.lif_charge(i1, u[0], o[0], lif)
            o[0] = tape.spike(u[0], lif, smoothed=smoothed)
            i2 = tape.conv2d(o[0], we2, e2.geometry)
            u[1] = tape.lif_charge(i2, u[1], o[1], lif)
            o[1] = tape.spike(u[1], lif, smoothed=smoothed)
            probs = tape.sigmoid(tape.conv2d(o[1], wl, lh.geometry))
            z = tape.bernoulli_st(probs, rng)
            i3 = tape.conv2d(z, wd1, d1.geometry)
            u[2] = tape.lif_charge(i3, u[2], o[2], lif)
            o[2] = tape.spike(u[2], lif, smoothed=smoothed)
            i4 = tape.conv2d(tape.upsample2(o[2]), wd2, d2.geometry)
            u[3] = tape.lif_charge(i4, u[3], o[3], lif)
            o[3] = tape.spike(u[3], lif, smoothed=smoothed)
            frame_nodes.append(tape.sigmoid(tape.conv2d(tape.upsample2(o[3]), wh, fh.geometry)))
            prob_nodes.append(probs)
        readout = tape.mean_stack(frame_nodes)
        return ForwardPass(tape, readout, frame_nodes, scored, prob_nodes)

    def loss_and_seeds(self, fwd: ForwardPass, originals):
        """MSE against the unmasked original plus the Bernoulli(0.5) prior term."""
        gt = np.asarray(originals, dtype=np.float32)
        recon = fwd.readout.value
        total, mse = vae_loss(recon, gt, None, 0.0)
        seeds = {fwd.readout: (2.0 / recon.size) * (recon - gt)}
        lam = self.prior_weight
        if lam > 0.0:
            n_steps = len(fwd.prob_nodes)
            kl = 0.0
            for pn in fwd.prob_nodes:
                p = np.clip(pn.value, 1e-7, 1 - 1e-7)
                kl += float(np.mean(p * np.log(2 * p) + (1 - p) * np.log(2 * (1 - p))))
                seeds[pn] = (lam / (n_steps * p.size)) * np.log(p / (1 - p)).astype(np.float32)
            total = mse + lam * kl / n_steps
        return total, seeds, mse

    def per_step_macs(self) -> int:
        n = self.enc1.active_count() * 14 * 14
        n += self.enc2.active_count() * 7 * 7
        n += self.latent_head.active_count() * 7 * 7
        n += self.dec1.active_count() * 7 * 7
        n += self.dec2.active_count() * 14 * 14
        n += self.frame_head.active_count() * 28 * 28
        return int(n)


def vae_forward_step(model: SpikingVaeModel, masked_image, states, rng, weights=None):
    """Single-timestep reconstruction step; see SpikingVaeModel.step."""
    if weights is None:
        weights = model.read_masked_weights()
    return model.step(masked_image, states, weights, rng)


MODEL_REGISTRY = {ScnnModel.arch: ScnnModel, SpikingVaeModel.arch: SpikingVaeModel}
