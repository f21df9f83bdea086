"""Experiment configuration: a flat INI file with sections, parsed to dataclasses.

Sections: [run] task/arm/seed/paths/subsets, [device] conductance statistics,
[train] optimizer settings, [policy] early-stop policy, [sweep] grids.  The
``format_version`` key inside [run] versions the dialect.  ``seed`` is
mandatory; everything else has defaults.  ``parse_run_config`` round-trips
with ``config_text``.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

from .device import DeviceConfig
from .dynamic import StopKind, StopPolicy
from .pruning import TrainConfig

__all__ = ["RunConfig", "parse_run_config", "load_run_config", "config_text",
           "CONFIG_FORMAT_VERSION", "TASKS"]

CONFIG_FORMAT_VERSION = 1
TASKS = ("nmnist-classify", "mnist-inpaint")

_KIND_NAMES = {
    "softmax": StopKind.SOFTMAX_THRESHOLD,
    "consistency": StopKind.CONSISTENCY_THRESHOLD,
    "none": StopKind.NO_EARLY_STOP,
}


@dataclass
class RunConfig:
    task: str = "nmnist-classify"
    arm: str = "memristor-pruning"
    seed: int = 0
    output_dir: str = "runs/out"
    data_root: str | None = None       # None -> synthesize a desk-scale stand-in
    train_subset: int = 10000
    test_subset: int = 2000
    t_steps: int = 0                   # 0 -> task default (10 classify, 16 inpaint)
    prior_weight: float = 1e-3
    device: DeviceConfig = field(default_factory=DeviceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: StopPolicy = field(default_factory=StopPolicy)
    sweep_thresholds: list = field(default_factory=list)
    sweep_noise_scales: list = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.train_subset < 1 or self.test_subset < 1:
            raise ValueError("subset sizes must be >= 1")
        if self.t_steps == 0:
            self.t_steps = 10 if self.task == "nmnist-classify" else 16

    def resolved_data_root(self) -> str | None:
        return self.data_root or os.environ.get("MEMSPIKE_DATA") or None


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def parse_run_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ValueError(f"malformed config: {e}") from e
    if not cp.has_section("run"):
        raise ValueError("config needs a [run] section")
    run = cp["run"]
    version = run.getint("format_version", fallback=CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ValueError(f"unsupported config format_version {version}")
    if "seed" not in run:
        raise ValueError("seed is mandatory in [run]")
    dev = cp["device"] if cp.has_section("device") else {}
    device = DeviceConfig(
        mu_on=float(dev.get("mu_on", 100.0)),
        sigma_on=float(dev.get("sigma_on", 20.0)),
        mu_off=float(dev.get("mu_off", 1.0)),
        sigma_off=float(dev.get("sigma_off", 0.5)),
        weight_scale=(float(dev["weight_scale"]) if "weight_scale" in dev else None),
        read_noise_scale=float(dev.get("read_noise_scale", 0.0)),
        seed=run.getint("seed"),
    )
    tr = cp["train"] if cp.has_section("train") else {}
    train = TrainConfig(
        learning_rate=float(tr.get("learning_rate", 0.1)),
        epochs=int(tr.get("epochs", 10)),
        batch_size=int(tr.get("batch_size", 100)),
        k_percent=float(tr.get("k_percent", 50.0)),
        momentum=float(tr.get("momentum", 0.9)),
        cosine_decay=str(tr.get("cosine_decay", "true")).lower() in ("1", "true", "yes"),
        seed=run.getint("seed"),
    )
    po = cp["policy"] if cp.has_section("policy") else {}
    kind = str(po.get("kind", "none")).lower()
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown policy kind {kind!r}")
    task = run.get("task", "nmnist-classify")
    policy = StopPolicy(
        kind=_KIND_NAMES[kind],
        threshold=float(po.get("threshold", 0.5)),
        alpha=float(po.get("alpha", 2.0)),
        t_max=int(po.get("t_max", 10 if task == "nmnist-classify" else 16)),
    )
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    return RunConfig(
        task=task,
        arm=run.get("arm", "memristor-pruning"),
        seed=run.getint("seed"),
        output_dir=run.get("output_dir", "runs/out"),
        data_root=run.get("data_root", fallback=None) or None,
        train_subset=run.getint("train_subset", fallback=10000),
        test_subset=run.getint("test_subset", fallback=2000),
        t_steps=run.getint("t_steps", fallback=0),
        prior_weight=run.getfloat("prior_weight", fallback=1e-3),
        device=device,
        train=train,
        policy=policy,
        sweep_thresholds=_floats(sw.get("thresholds", "")),
        sweep_noise_scales=_floats(sw.get("noise_scales", "")),
    )


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_run_config(f.read())


def config_text(cfg: RunConfig) -> str:
    """Serialize back to the INI dialect (the checkpoint's config echo)."""
    cp = configparser.ConfigParser()
    cp["run"] = {
        "format_version": str(CONFIG_FORMAT_VERSION),
        "task": cfg.task,
        "arm": cfg.arm,
        "seed": str(cfg.seed),
        "output_dir": cfg.output_dir,
        "data_root": cfg.data_root or "",
        "train_subset": str(cfg.train_subset),
        "test_subset": str(cfg.test_subset),
        "t_steps": str(cfg.t_steps),
        "prior_weight": repr(cfg.prior_weight),
    }
    d = cfg.device
    cp["device"] = {
        "mu_on": repr(d.mu_on), "sigma_on": repr(d.sigma_on),
        "mu_off": repr(d.mu_off), "sigma_off": repr(d.sigma_off),
        "read_noise_scale": repr(d.read_noise_scale),
    }
    if d.weight_scale is not None:
        cp["device"]["weight_scale"] = repr(d.weight_scale)
    t = cfg.train
    cp["train"] = {
        "learning_rate": repr(t.learning_rate), "epochs": str(t.epochs),
        "batch_size": str(t.batch_size), "k_percent": repr(t.k_percent),
        "momentum": repr(t.momentum), "cosine_decay": str(t.cosine_decay).lower(),
    }
    p = cfg.policy
    cp["policy"] = {
        "kind": p.kind.value, "threshold": repr(p.threshold),
        "alpha": repr(p.alpha), "t_max": str(p.t_max),
    }
    cp["sweep"] = {
        "thresholds": ",".join(repr(v) for v in cfg.sweep_thresholds),
        "noise_scales": ",".join(repr(v) for v in cfg.sweep_noise_scales),
    }
    out = io.StringIO()
    cp.write(out)
    return out.getvalue()
