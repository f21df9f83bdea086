"""Versioned binary checkpoints for trained models.

Layout: magic ``MSPK``, a version byte, a section count, then named sections
(u16 name length + utf-8 name + u64 payload length + payload).  Tensors are
stored as a shape header (u8 ndim, u32 dims) followed by little-endian 32-bit
floats in row-major order; boolean masks are bit-packed.  Metadata (model
kwargs, per-layer geometry and device parameters, RNG states, the run-config
echo) travels as JSON sections.  Files are written atomically (temp + rename).

A save -> load round trip reproduces noiseless evaluation bit-exactly: the
conductance, score and mask tensors are restored verbatim and the mask is
re-derived from the scores as a consistency check.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile

import numpy as np

from .device import DeviceConfig, DifferentialCrossbar
from .layers import LayerGeometry
from .models import MODEL_REGISTRY
from .neuron import LifParams
from .pruning import ScoredLayer, SoftwareWeights

__all__ = ["save_model", "load_model", "FORMAT_VERSION"]

MAGIC = b"MSPK"
FORMAT_VERSION = 1


def _pack_f32(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<B", arr.ndim) + b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.tobytes()


def _unpack_f32(buf) -> np.ndarray:
    ndim = buf[0]
    dims = struct.unpack_from(f"<{ndim}I", buf, 1)
    data = np.frombuffer(buf, dtype="<f4", offset=1 + 4 * ndim)
    return data.reshape(dims).copy()


def _pack_bits(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=bool)
    head = struct.pack("<B", arr.ndim) + b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + np.packbits(arr.reshape(-1)).tobytes()


def _unpack_bits(buf) -> np.ndarray:
    ndim = buf[0]
    dims = struct.unpack_from(f"<{ndim}I", buf, 1)
    n = int(np.prod(dims)) if ndim else 1
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=1 + 4 * ndim), count=n)
    return bits.astype(bool).reshape(dims)


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode()


def _write_sections(path, sections: dict[str, bytes]) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<BI", FORMAT_VERSION, len(sections)))
            for name, payload in sections.items():
                nb = name.encode()
                f.write(struct.pack("<H", len(nb)) + nb)
                f.write(struct.pack("<Q", len(payload)))
                f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_sections(path) -> dict[str, bytes]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<BI", f.read(5))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (plen,) = struct.unpack("<Q", f.read(8))
            sections[name] = f.read(plen)
        return sections


def save_model(path, model, config_echo: str = "") -> None:
    layers_meta = []
    sections: dict[str, bytes] = {}
    for i, layer in enumerate(model.scored_layers()):
        prefix = f"layer{i}"
        geom = dataclasses.asdict(layer.geometry)
        entry = {"geometry": geom, "k_percent": layer.k_percent,
                 "memristor": layer.is_memristor}
        if layer.is_memristor:
            entry["device"] = dataclasses.asdict(layer.xbar.config)
            g_pos, g_neg, formed = layer.xbar.state_arrays()
            mut_state, read_state = layer.xbar.rng_states()
            entry["rng"] = {"mut": mut_state, "read": read_state}
            sections[f"{prefix}/g_pos"] = _pack_f32(g_pos)
            sections[f"{prefix}/g_neg"] = _pack_f32(g_neg)
            sections[f"{prefix}/formed"] = _pack_bits(formed)
        else:
            sections[f"{prefix}/soft_w"] = _pack_f32(layer.soft.w)
        sections[f"{prefix}/scores"] = _pack_f32(layer.scores)
        sections[f"{prefix}/mask"] = _pack_bits(layer.cached_mask)
        layers_meta.append(entry)
    meta = {
        "arch": model.arch,
        "t_steps": model.t_steps,
        "k_percent": model.k_percent,
        "seed": model.seed,
        "software": model.software,
        "lif": dataclasses.asdict(model.lif_params),
        "layers": layers_meta,
        "config_echo": config_echo,
    }
    if hasattr(model, "prior_weight"):
        meta["prior_weight"] = model.prior_weight
    sections["meta"] = _json_bytes(meta)
    _write_sections(path, sections)


def load_model(path):
    """Rebuild the model from a checkpoint; returns (model, config_echo)."""
    sections = _read_sections(path)
    meta = json.loads(sections["meta"].decode())
    cls = MODEL_REGISTRY.get(meta["arch"])
    if cls is None:
        raise ValueError(f"unknown architecture {meta['arch']!r}")
    kwargs = dict(lif_params=LifParams(**meta["lif"]), k_percent=meta["k_percent"],
                  t_steps=meta["t_steps"], seed=meta["seed"], software=meta["software"])
    if "prior_weight" in meta:
        kwargs["prior_weight"] = meta["prior_weight"]
    model = cls(**kwargs)
    layers = model.scored_layers()
    if len(layers) != len(meta["layers"]):
        raise ValueError("checkpoint layer count does not match architecture")
    for i, (layer, entry) in enumerate(zip(layers, meta["layers"])):
        prefix = f"layer{i}"
        if LayerGeometry(**entry["geometry"]) != layer.geometry:
            raise ValueError(f"layer {i}: geometry mismatch")
        layer.k_percent = entry["k_percent"]
        if entry["memristor"]:
            cfg = DeviceConfig(**entry["device"])
            rng = entry.get("rng") or {}
            layer.xbar = DifferentialCrossbar.from_state(
                _unpack_f32(sections[f"{prefix}/g_pos"]),
                _unpack_f32(sections[f"{prefix}/g_neg"]),
                _unpack_bits(sections[f"{prefix}/formed"]),
                cfg, rng.get("mut"), rng.get("read"))
            layer.soft = None
        else:
            layer.soft = SoftwareWeights(_unpack_f32(sections[f"{prefix}/soft_w"]))
            layer.xbar = None
        layer.scores = _unpack_f32(sections[f"{prefix}/scores"])
        layer._stamp += 1
        layer.refresh_mask()
        if not np.array_equal(layer.cached_mask, _unpack_bits(sections[f"{prefix}/mask"])):
            raise ValueError(f"layer {i}: stored mask inconsistent with stored scores")
    return model, meta.get("config_echo", "")
