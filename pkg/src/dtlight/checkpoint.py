"""Portable named-tensor snapshots: JSON manifest + little-endian float32 blob."""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np
import torch

from .model import AdapterConfig, ModelConfig

FORMAT_VERSION = 1


def _config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    if d.get("adapter") is not None:
        d["adapter"] = AdapterConfig(**d["adapter"])
    return ModelConfig(**d)


def save_checkpoint(path: str | Path, module: torch.nn.Module,
                    model_config: ModelConfig, extra: dict | None = None) -> Path:
    """Write `<path>.json` + `<path>.bin` atomically.

    Tensor bytes are little-endian float32 in manifest order, so a load on
    any platform round-trips bit-exactly.
    """
    path = Path(path)
    entries, chunks = [], []
    for name, p in module.named_parameters():
        arr = p.detach().cpu().to(torch.float32).numpy()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "trainable": bool(p.requires_grad),
        })
        chunks.append(arr.astype("<f4").tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": _config_to_dict(model_config),
        "tensors": entries,
        "extra": extra or {},
    }
    json_path = path.with_suffix(".json")
    bin_path = path.with_suffix(".bin")
    for target, payload in ((json_path, None), (bin_path, b"".join(chunks))):
        tmp = target.with_suffix(target.suffix + ".tmp")
        try:
            if payload is None:
                with open(tmp, "w") as f:
                    json.dump(manifest, f, sort_keys=True, indent=1)
            else:
                with open(tmp, "wb") as f:
                    f.write(payload)
            os.replace(tmp, target)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
    return json_path


def load_manifest(path: str | Path) -> dict:
    with open(Path(path).with_suffix(".json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported checkpoint format version")
    return manifest


def load_checkpoint(path: str | Path, module: torch.nn.Module) -> dict:
    """Load tensors into `module` by name; returns the manifest."""
    path = Path(path)
    manifest = load_manifest(path)
    blob = Path(path).with_suffix(".bin").read_bytes()
    params = dict(module.named_parameters())
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f4", count=count, offset=offset
        ).reshape(shape)
        offset += count * 4
        name = entry["name"]
        if name not in params:
            raise KeyError(f"checkpoint tensor {name} missing from module")
        p = params[name]
        if tuple(p.shape) != shape:
            raise ValueError(f"shape mismatch for {name}")
        with torch.no_grad():
            p.copy_(torch.from_numpy(arr.copy()).to(p.dtype))
        p.requires_grad_(bool(entry["trainable"]))
    if offset != len(blob):
        raise ValueError("checkpoint blob size disagrees with manifest")
    return manifest
