"""Input-aware early-stop inference.

Two confidence agents drive the stop decision:

* classification: the max of the temperature-scaled softmax over the
  accumulated readout; stop as soon as it reaches the threshold (>= beta1).
* reconstruction: the per-pixel L1 distance between the decoder frames of two
  consecutive timesteps; stop at the first t with P_t < P_{t-1} < beta2, i.e.
  the change both shrank and was already below the threshold.

Network dynamics never depend on the policy, so a sweep evaluates the model
once per sample and replays every threshold over the recorded per-step
outputs; ``run_dynamic`` is the per-sample reference that genuinely halts the
loop.  Both paths share the same confidence arithmetic and agree exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .models import softmax_stable

__all__ = [
    "StopKind",
    "StopPolicy",
    "EpisodeRecord",
    "softmax_confidence",
    "consistency_confidence",
    "run_dynamic",
    "sweep_thresholds",
    "collect_step_outputs",
    "apply_softmax_policy",
    "apply_consistency_policy",
]


class StopKind(enum.Enum):
    SOFTMAX_THRESHOLD = "softmax"
    CONSISTENCY_THRESHOLD = "consistency"
    NO_EARLY_STOP = "none"


@dataclass(frozen=True)
class StopPolicy:
    kind: StopKind = StopKind.NO_EARLY_STOP
    threshold: float = 0.5
    alpha: float = 2.0     # softmax temperature, SOFTMAX_THRESHOLD only
    t_max: int = 10

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


@dataclass
class EpisodeRecord:
    """Per-sample inference trace."""

    outputs: list | None
    confidences: list
    stop_step: int            # 1-based timestep at which inference halted
    final_output: np.ndarray
    timesteps_used: int
    per_step_macs: int = 0
    correct: bool | None = None
    loss: float | None = None


def softmax_confidence(logits, alpha: float) -> float:
    """Max of softmax(logits / alpha), computed with max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    return float(softmax_stable(logits / alpha).max())


def consistency_confidence(x_t, x_prev) -> float:
    """Per-pixel mean absolute difference of two consecutive frames.

    Raw L1 divided by the pixel count, so thresholds are resolution-portable.
    """
    a = np.asarray(x_t, dtype=np.float64)
    b = np.asarray(x_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def _episode_seeds(base_seed: int, n: int):
    return np.random.SeedSequence(base_seed).spawn(n)


def _accumulate_mean(prev_sum, value, t):
    s = value if prev_sum is None else prev_sum + value
    return s, s / np.float32(t)


def run_dynamic(model, sample, policy: StopPolicy, noise_scale: float = 0.0,
                rng=None, target=None, *, instant_confidence: bool = False,
                redraw_noise_each_step: bool = False,
                store_outputs: bool = True) -> EpisodeRecord:
    """Step the network one timestep at a time until the policy fires.

    ``sample`` is a single input without the batch axis: (T, 2, 34, 34) event
    frames for classification, (1, 28, 28) masked image for reconstruction.
    Weights are read once per episode (one noise draw) unless
    ``redraw_noise_each_step`` is set.  ``target`` (label or original image)
    fills the correctness / loss fields when given.
    """
    if policy.kind is StopKind.CONSISTENCY_THRESHOLD and policy.t_max < 2:
        raise ValueError("consistency stopping needs t_max >= 2")
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(sample)
    classify = not model.stochastic_forward
    if classify:
        if x.shape[0] < policy.t_max:
            raise ValueError(f"sample has {x.shape[0]} frames < t_max {policy.t_max}")
        batch_in = None
    else:
        batch_in = x[None]
    weights = model.read_masked_weights(noise_scale, rng)
    states = model.init_states(1)
    outputs = [] if store_outputs else None
    confidences = []
    acc_sum = None
    acc_mean = None
    prev_frame = None
    prev_conf = math.nan
    stop = policy.t_max
    for t in range(1, policy.t_max + 1):
        if redraw_noise_each_step and t > 1:
            weights = model.read_masked_weights(noise_scale, rng)
        if classify:
            out, states = model.step(x[None, t - 1], states, weights)
        else:
            out, _, states = model.step(batch_in, states, weights, rng)
        out = out[0]
        if store_outputs:
            outputs.append(out)
        acc_sum, acc_mean = _accumulate_mean(acc_sum, out, t)
        if policy.kind is StopKind.SOFTMAX_THRESHOLD:
            conf = softmax_confidence(out if instant_confidence else acc_mean, policy.alpha)
            confidences.append(conf)
            if conf >= policy.threshold:
                stop = t
                break
        elif policy.kind is StopKind.CONSISTENCY_THRESHOLD:
            conf = math.nan if t == 1 else consistency_confidence(out, prev_frame)
            confidences.append(conf)
            # both required: the change decreased and was already under beta2
            if t >= 3 and conf < prev_conf and prev_conf < policy.threshold:
                stop = t
                break
            prev_frame = out
            prev_conf = conf
        else:
            conf = softmax_confidence(acc_mean, policy.alpha) if classify \
                else (math.nan if t == 1 else consistency_confidence(out, prev_frame))
            confidences.append(conf)
            if not classify:
                prev_frame = out
    rec = EpisodeRecord(outputs, confidences, stop, acc_mean, stop,
                        per_step_macs=model.per_step_macs())
    if target is not None:
        if classify:
            rec.correct = bool(np.argmax(acc_mean) == int(target))
        else:
            rec.loss = float(np.mean((np.asarray(target, dtype=np.float64) - acc_mean) ** 2))
    return rec


def collect_step_outputs(model, inputs, *, noise_scale=0.0, base_seed=0,
                         t_max=None, batch_size=256,
                         redraw_noise_each_step=False, apply_mask=True):
    """Per-step readouts (N, T, ...) for a whole dataset.

    Deterministic classifier episodes at noise 0 run batched; stochastic or
    noisy episodes loop per sample with the same per-episode seed discipline
    as :func:`run_dynamic` (one child seed per sample).
    """
    inputs = np.asarray(inputs)
    n = inputs.shape[0]
    t_max = t_max or model.t_steps
    per_sample = model.stochastic_forward or noise_scale > 0.0
    outs = None
    if not per_sample:
        weights = model.read_masked_weights(0.0, apply_mask=apply_mask)
        for start in range(0, n, batch_size):
            xb = inputs[start:start + batch_size]
            states = model.init_states(xb.shape[0])
            for t in range(t_max):
                out, states = model.step(xb[:, t], states, weights)
                if outs is None:
                    outs = np.empty((n, t_max) + out.shape[1:], dtype=np.float32)
                outs[start:start + xb.shape[0], t] = out
        return outs
    for i, ss in enumerate(_episode_seeds(base_seed, n)):
        rng = np.random.default_rng(ss)
        weights = model.read_masked_weights(noise_scale, rng, apply_mask=apply_mask)
        states = model.init_states(1)
        xi = inputs[i][None]
        for t in range(t_max):
            if redraw_noise_each_step and t > 0:
                weights = model.read_masked_weights(noise_scale, rng, apply_mask=apply_mask)
            if model.stochastic_forward:
                out, _, states = model.step(xi, states, weights, rng)
            else:
                out, states = model.step(xi[:, t], states, weights)
            if outs is None:
                outs = np.empty((n, t_max) + out.shape[1:], dtype=np.float32)
            outs[i, t] = out[0]
    return outs


def apply_softmax_policy(logits_seq, threshold, alpha=2.0, *, instant=False,
                         no_early_stop=False):
    """Vectorized stop decision over recorded logits (N, T, C).

    Returns (stop_steps 1-based, predictions, confidences (N, T)).
    """
    logits_seq = np.asarray(logits_seq, dtype=np.float32)
    n, t_max, _ = logits_seq.shape
    if instant:
        basis = logits_seq
    else:
        denom = np.arange(1, t_max + 1, dtype=np.float32)[None, :, None]
        basis = np.cumsum(logits_seq, axis=1) / denom
    conf = softmax_stable(basis.astype(np.float64) / alpha, axis=2).max(axis=2)
    if no_early_stop:
        stop = np.full(n, t_max, dtype=np.int64)
    else:
        hit = conf >= threshold
        any_hit = hit.any(axis=1)
        stop = np.where(any_hit, hit.argmax(axis=1) + 1, t_max)
    denom = np.arange(1, t_max + 1, dtype=np.float32)[None, :, None]
    acc = np.cumsum(logits_seq, axis=1) / denom
    preds = acc[np.arange(n), stop - 1].argmax(axis=1)
    return stop, preds, conf


def apply_consistency_policy(frames_seq, threshold, *, no_early_stop=False):
    """Vectorized stop decision over recorded frames (N, T, ...).

    Returns (stop_steps, final reconstructions = running mean at stop,
    confidences (N, T) with NaN in the first column).
    """
    frames_seq = np.asarray(frames_seq, dtype=np.float32)
    n, t_max = frames_seq.shape[:2]
    flat = frames_seq.reshape(n, t_max, -1).astype(np.float64)
    conf = np.full((n, t_max), np.nan)
    if t_max >= 2:
        conf[:, 1:] = np.abs(flat[:, 1:] - flat[:, :-1]).mean(axis=2)
    if no_early_stop or t_max < 3:
        stop = np.full(n, t_max, dtype=np.int64)
    else:
        # fire at the first t (1-based, >= 3) with conf_t < conf_{t-1} < beta
        ok = (conf[:, 2:] < conf[:, 1:-1]) & (conf[:, 1:-1] < threshold)
        any_hit = ok.any(axis=1)
        stop = np.where(any_hit, ok.argmax(axis=1) + 3, t_max)
    denom = np.arange(1, t_max + 1, dtype=np.float32)[None, :, None]
    cmean = np.cumsum(frames_seq.reshape(n, t_max, -1), axis=1) / denom
    finals = cmean[np.arange(n), stop - 1].reshape((n,) + frames_seq.shape[2:])
    return stop, finals, conf


def sweep_thresholds(model, dataset, thresholds, kind: StopKind,
                     noise_scale: float = 0.0, *, alpha: float = 2.0,
                     t_max: int | None = None, base_seed: int = 0,
                     instant_confidence: bool = False, batch_size: int = 256,
                     apply_mask: bool = True):
    """Accuracy-or-loss / latency trade-off table over a threshold grid.

    One model evaluation per sample is shared across every threshold, so a
    fixed (model, sample, noise seed) triple sees nested stop sets and the
    average-timesteps column is monotone for the softmax rule.
    """
    thresholds = list(thresholds)
    if len(dataset) == 0 or not thresholds:
        raise ValueError("need a nonempty dataset and threshold list")
    t_max = t_max or model.t_steps
    classify = not model.stochastic_forward
    rows = []
    sums = {b: [0.0, 0.0] for b in thresholds}  # metric numerator, timestep sum
    n = len(dataset)
    for start in range(0, n, batch_size):
        idx = slice(start, min(start + batch_size, n))
        outs = collect_step_outputs(model, dataset.inputs[idx], noise_scale=noise_scale,
                                    base_seed=base_seed + start, t_max=t_max,
                                    apply_mask=apply_mask)
        targets = dataset.targets[idx]
        for b in thresholds:
            if classify:
                stop, preds, _ = apply_softmax_policy(
                    outs, b, alpha, instant=instant_confidence,
                    no_early_stop=(kind is StopKind.NO_EARLY_STOP))
                sums[b][0] += float(np.sum(preds == targets))
            else:
                stop, finals, _ = apply_consistency_policy(
                    outs, b, no_early_stop=(kind is StopKind.NO_EARLY_STOP))
                err = (finals.astype(np.float64) - targets) ** 2
                sums[b][0] += float(err.mean(axis=tuple(range(1, err.ndim))).sum())
            sums[b][1] += float(stop.sum())
    for b in thresholds:
        metric = sums[b][0] / n
        rows.append({"threshold": float(b), "metric": float(metric),
                     "avg_timesteps": sums[b][1] / n, "n_samples": n})
    return rows
