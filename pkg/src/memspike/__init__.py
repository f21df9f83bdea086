"""memspike: memristor-crossbar spiking networks, topology-only training,
input-aware early-exit inference."""

from .device import DeviceConfig, DifferentialCrossbar, electroform, read_weights, \
    reset_pairs, set_pairs, vmm
from .dynamic import EpisodeRecord, StopKind, StopPolicy, consistency_confidence, \
    run_dynamic, softmax_confidence, sweep_thresholds
from .metrics import accuracy, ari, avg_timesteps, cost_proxy, recon_mse
from .models import ScnnModel, SpikingVaeModel, bernoulli_sample, vae_loss
from .neuron import LifParams, LifState, lif_step, pseudo_grad
from .pruning import ScoredLayer, TrainConfig, apply_final_topology, masked_forward, \
    ste_update, topk_mask, train
from .tape import Tape, backward

__version__ = "0.1.0"

__all__ = [
    "DeviceConfig", "DifferentialCrossbar", "electroform", "read_weights",
    "reset_pairs", "set_pairs", "vmm",
    "LifParams", "LifState", "lif_step", "pseudo_grad",
    "Tape", "backward",
    "ScoredLayer", "TrainConfig", "topk_mask", "masked_forward", "ste_update",
    "train", "apply_final_topology",
    "StopKind", "StopPolicy", "EpisodeRecord", "softmax_confidence",
    "consistency_confidence", "run_dynamic", "sweep_thresholds",
    "ScnnModel", "SpikingVaeModel", "bernoulli_sample", "vae_loss",
    "accuracy", "avg_timesteps", "ari", "recon_mse", "cost_proxy",
    "__version__",
]
