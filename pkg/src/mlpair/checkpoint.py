"""Model checkpoints: ``manifest.json`` (config + ordered parameter list) and ``params.bin`` (<f8)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import build_model
from .relation import ModelConfig, RelationModel

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: RelationModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "method": model.config.method,
        "config": model.config.to_dict(),
        "parameters": entries,
        "extra": extra or {},
    }
    (path / "params.bin").write_bytes(b"".join(blobs))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[RelationModel, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {exc}") from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    if manifest.get("method") != config.method:
        raise CheckpointError("method tag disagrees with the stored config")
    model = build_model(config)
    blob = (path / "params.bin").read_bytes()
    expected = sum(e["nbytes"] for e in manifest["parameters"])
    if len(blob) != expected:
        raise CheckpointError(f"params.bin holds {len(blob)} bytes, manifest lists {expected}")
    state = {}
    for e in manifest["parameters"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    return model, manifest
