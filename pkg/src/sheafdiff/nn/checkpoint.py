"""Checkpoints: ``<prefix>.json`` manifest plus ``<prefix>.bin`` little-endian float64 blob."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .models import ModelConfig, build_model

FORMAT = "sheafdiff-checkpoint/1"


def save_checkpoint(prefix, model, seed: int, epoch: int, metrics: dict):
    prefix = Path(prefix)
    index, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().numpy(), dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "in_features": model.in_features,
        "n_classes": model.n_classes,
        "seed": int(seed),
        "epoch": int(epoch),
        "metrics": metrics,
        "parameters": index,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    prefix.with_suffix(".bin").write_bytes(blob)
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_checkpoint(prefix):
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
    blob = prefix.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError("checkpoint blob checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    config = ModelConfig(**manifest["config"])
    model = build_model(config, manifest["in_features"], manifest["n_classes"], manifest["seed"])
    state = {}
    for entry in manifest["parameters"]:
        a = flat[entry["offset"]:entry["offset"] + entry["count"]].reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(a.astype(np.float64))
    model.load_state_dict(state)
    return model, manifest
