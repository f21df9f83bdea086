"""Evaluation metrics: accuracy, average timesteps, ARI, MSE, cost proxy."""

from __future__ import annotations

import numpy as np

__all__ = ["accuracy", "avg_timesteps", "ari", "recon_mse", "cost_proxy"]


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty prediction list")
    return float(np.mean(preds == labels))


def avg_timesteps(episodes) -> float:
    """Mean stop step over a set of inference episodes."""
    ts = [e.timesteps_used for e in episodes]
    if not ts:
        raise ValueError("no episodes")
    return float(np.mean(ts))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index via the contingency-table formula.

    Invariant under relabeling of either clustering; 1.0 for identical
    partitions (including the degenerate all-one-cluster case).
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("clusterings must be equal-length 1-D label arrays")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 elements")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    contingency = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)
    sum_ij = _comb2(contingency).sum()
    sum_a = _comb2(contingency.sum(axis=1)).sum()
    sum_b = _comb2(contingency.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if sum_ij == expected else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def recon_mse(x, x_hat) -> float:
    """Mean squared error between ground-truth and reconstructed images."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def cost_proxy(episode) -> int:
    """Synaptic-operation count: active-synapse MACs per step times steps used."""
    if episode.timesteps_used < 1:
        raise ValueError("an episode uses at least one timestep")
    return int(episode.per_step_macs) * int(episode.timesteps_used)
