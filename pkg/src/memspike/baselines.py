"""Comparison arms: weight tuning, software/memristor pruning, untrained randoms.

Every arm shares the same forward core, data splits and seeds; they differ
only in where the weights come from and which parameter set the gradient
lands on.  Weight tuning trains dense software weights by surrogate-gradient
BPTT (mask forced all-true, updates on weights); the pruning arms train
pop-up scores over frozen weights; the random arms evaluate as constructed.
"""

from __future__ import annotations

import enum
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .data import ArrayDataset
from .dynamic import StopKind, apply_consistency_policy, apply_softmax_policy, \
    collect_step_outputs
from .models import ScnnModel, SpikingVaeModel
from .pruning import TrainConfig, train

__all__ = ["BaselineKind", "build_arm_model", "eval_static", "run_baseline",
           "noise_sensitivity", "perturb_weights"]


class BaselineKind(enum.Enum):
    WEIGHT_TUNING = "weight-tuning"
    SOFTWARE_PRUNING = "software-pruning"
    MEMRISTOR_PRUNING = "memristor-pruning"
    RANDOM_SOFTWARE = "random-software"
    RANDOM_MEMRISTOR = "random-memristor"

    @classmethod
    def parse(cls, name: str) -> "BaselineKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown baseline kind {name!r}")


_SOFTWARE = {BaselineKind.WEIGHT_TUNING, BaselineKind.SOFTWARE_PRUNING,
             BaselineKind.RANDOM_SOFTWARE}
_TRAINED = {BaselineKind.WEIGHT_TUNING, BaselineKind.SOFTWARE_PRUNING,
            BaselineKind.MEMRISTOR_PRUNING}


def build_arm_model(kind: BaselineKind, cfg: RunConfig):
    """Model plus the train config appropriate for the arm (None if untrained)."""
    software = kind in _SOFTWARE
    # dense tuning uses every synapse; pruning arms use the configured sparsity
    k = 100.0 if kind is BaselineKind.WEIGHT_TUNING else cfg.train.k_percent
    common = dict(lif_params=None, k_percent=k, t_steps=cfg.t_steps,
                  seed=cfg.seed, software=software)
    if cfg.task == "nmnist-classify":
        model = ScnnModel(device_config=cfg.device, **common)
    else:
        model = SpikingVaeModel(device_config=cfg.device,
                                prior_weight=cfg.prior_weight, **common)
    if kind not in _TRAINED:
        return model, None
    tcfg = replace(cfg.train, k_percent=k,
                   grad_target="weights" if kind is BaselineKind.WEIGHT_TUNING else "scores")
    return model, tcfg


def eval_static(model, dataset: ArrayDataset, noise_scale: float = 0.0,
                base_seed: int = 0, apply_mask: bool = True,
                batch_size: int = 256) -> float:
    """Full-depth metric: accuracy for the classifier, MSE for the VAE."""
    classify = not model.stochastic_forward
    n = len(dataset)
    metric_sum = 0.0
    for start in range(0, n, batch_size):
        idx = slice(start, min(start + batch_size, n))
        outs = collect_step_outputs(model, dataset.inputs[idx], noise_scale=noise_scale,
                                    base_seed=base_seed + start, apply_mask=apply_mask)
        if classify:
            _, preds, _ = apply_softmax_policy(outs, 0.0, no_early_stop=True)
            metric_sum += float(np.sum(preds == dataset.targets[idx]))
        else:
            _, finals, _ = apply_consistency_policy(outs, 0.0, no_early_stop=True)
            err = (finals.astype(np.float64) - dataset.targets[idx]) ** 2
            metric_sum += float(err.mean(axis=tuple(range(1, err.ndim))).sum())
    return metric_sum / n


def run_baseline(kind: BaselineKind, task: str, cfg: RunConfig,
                 train_data: ArrayDataset, test_data: ArrayDataset):
    """Train (if the arm trains) and evaluate one arm; returns (row, model, history)."""
    if task not in ("nmnist-classify", "mnist-inpaint"):
        raise ValueError(f"unknown task {task!r}")
    if cfg.task != task:
        cfg = replace(cfg, task=task, t_steps=0)
    model, tcfg = build_arm_model(kind, cfg)
    history = None
    if tcfg is not None:
        history = train(model, train_data, tcfg)
    metric = eval_static(model, test_data, base_seed=cfg.seed)
    row = {
        "kind": kind.value,
        "task": task,
        "metric": metric,
        "n_samples": len(test_data),
        "trained": tcfg is not None,
    }
    return row, model, history


def perturb_weights(model, scale: float, rng) -> None:
    """One-shot programming perturbation of deployed software weights:
    w <- w + A * scale * w (same multiplicative form as the read-noise model)."""
    for layer in model.scored_layers():
        if layer.soft is None:
            raise ValueError("programming perturbation applies to software weights")
        a = rng.standard_normal(layer.soft.w.shape, dtype=np.float32)
        layer.soft.w = layer.soft.w + a * np.float32(scale) * layer.soft.w


def noise_sensitivity(kind: BaselineKind, task: str, noise_scales, cfg: RunConfig,
                      train_data: ArrayDataset, test_data: ArrayDataset,
                      draws_per_scale: int = 3):
    """Programming-noise study.

    Weight tuning trains once and is perturbed at deployment per scale (mean
    over draws).  Memristor pruning treats each scale as a fresh programming
    draw: new random conductances, scores retrained, evaluated clean.
    """
    noise_scales = list(noise_scales)
    if any(s < 0 for s in noise_scales):
        raise ValueError("noise scales must be >= 0")
    rows = []
    if kind is BaselineKind.WEIGHT_TUNING:
        model, tcfg = build_arm_model(kind, cfg)
        train(model, train_data, tcfg)
        base = [layer.soft.w.copy() for layer in model.scored_layers()]
        for scale in noise_scales:
            vals = []
            for d in range(draws_per_scale if scale > 0 else 1):
                for layer, w in zip(model.scored_layers(), base):
                    layer.soft.w = w.copy()
                if scale > 0:
                    perturb_weights(model, scale, np.random.default_rng(
                        cfg.seed * 7919 + d * 104729 + int(scale * 1e6)))
                vals.append(eval_static(model, test_data, base_seed=cfg.seed))
            rows.append({"kind": kind.value, "task": task, "noise_scale": scale,
                         "metric": float(np.mean(vals)), "n_samples": len(test_data)})
        for layer, w in zip(model.scored_layers(), base):
            layer.soft.w = w.copy()
        return rows
    if kind is BaselineKind.MEMRISTOR_PRUNING:
        for i, scale in enumerate(noise_scales):
            draw_cfg = replace(cfg, seed=cfg.seed + 1000 * (i + 1))
            draw_cfg = replace(draw_cfg, train=replace(cfg.train, seed=draw_cfg.seed),
                               device=replace(cfg.device, seed=draw_cfg.seed))
            row, _, _ = run_baseline(kind, task, draw_cfg, train_data, test_data)
            row["noise_scale"] = scale
            rows.append(row)
        return rows
    raise ValueError(f"noise sensitivity is defined for weight tuning and "
                     f"memristor pruning, not {kind.value}")
