"""Checkpoint files: JSON manifest line + raw little-endian float64 blobs.

The manifest records (name, shape, byte offset) per tensor plus the model
config, so a loader in any language can mmap the blob section. Round-trips
are bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .model import ModelConfig, Seq2SeqModel

MAGIC = "rejgen-checkpoint-v1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path):
    names = sorted(model.params)
    entries = []
    offset = 0
    for name in names:
        arr = model.params[name]
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "format": MAGIC,
        "config": model.config.to_dict(),
        "tensors": entries,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for name in names:
            f.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path, expect_config=None):
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint manifest in {path}: {e}") from None
    if manifest.get("format") != MAGIC:
        raise CheckpointError(f"{path} is not a {MAGIC} file")
    config = ModelConfig(**manifest["config"])
    if expect_config is not None:
        for k, want in expect_config.to_dict().items():
            got = manifest["config"].get(k)
            if got != want:
                raise CheckpointError(
                    f"checkpoint config mismatch on '{k}': file has {got}, expected {want}"
                )
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + n * 8
        if end > len(blob):
            raise CheckpointError(
                f"checkpoint truncated: tensor '{entry['name']}' needs bytes "
                f"[{start}, {end}) but blob has {len(blob)}"
            )
        params[entry["name"]] = (
            np.frombuffer(blob[start:end], dtype="<f8").reshape(shape).copy()
        )
    model = Seq2SeqModel(config, params=params)
    _check_shapes(model)
    return model


def _check_shapes(model):
    from .model import _init_params

    ref = _init_params(model.config, np.random.default_rng(0))
    for name, arr in ref.items():
        if name not in model.params:
            raise CheckpointError(f"checkpoint missing tensor '{name}'")
        if model.params[name].shape != arr.shape:
            raise CheckpointError(
                f"checkpoint tensor '{name}' has shape {model.params[name].shape}, "
                f"config requires {arr.shape}"
            )
