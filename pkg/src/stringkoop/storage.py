"""Checkpoints as one little-endian binary blob plus a JSON manifest of array offsets."""

from __future__ import annotations

import json
from pathlib import Path

import jax
import numpy as np

from .dmd import DmdModel
from .models import ModelDims, initialize

__all__ = ["CHECKPOINT_VERSION", "CheckpointError", "save_arrays", "load_arrays", "save_model", "load_model", "save_dmd", "load_checkpoint"]

CHECKPOINT_VERSION = 1
BLOB = "arrays.bin"
MANIFEST = "checkpoint.json"


class CheckpointError(Exception):
    pass


def _le(dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def save_arrays(directory, arrays: dict, meta: dict) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(out / BLOB, "wb") as fh:
        for name, value in arrays.items():
            value = np.ascontiguousarray(value)
            dt = _le(value.dtype)
            raw = value.astype(dt).tobytes()
            fh.write(raw)
            entries.append({"name": name, "dtype": dt.str, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    doc = {"checkpoint_version": CHECKPOINT_VERSION, **meta, "arrays": entries}
    (out / MANIFEST).write_text(json.dumps(doc, indent=2))
    return out


def load_arrays(directory) -> tuple[dict, dict]:
    root = Path(directory)
    path = root / MANIFEST
    if not path.exists():
        raise CheckpointError(f"missing checkpoint manifest: {path}")
    meta = json.loads(path.read_text())
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint_version {meta.get('checkpoint_version')!r}")
    blob_path = root / BLOB
    if not blob_path.exists():
        raise CheckpointError(f"missing checkpoint data: {blob_path}")
    blob = blob_path.read_bytes()
    arrays = {}
    for entry in meta["arrays"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{blob_path}: truncated at byte offset {len(blob)}, array {entry['name']!r} needs {end}")
        arrays[entry["name"]] = np.frombuffer(blob[entry["offset"] : end], dtype=entry["dtype"]).reshape(entry["shape"])
    return arrays, meta


def save_model(directory, model, kind: str, dims: ModelDims, extra: dict | None = None) -> Path:
    leaves = jax.tree_util.tree_flatten_with_path(model)[0]
    arrays = {jax.tree_util.keystr(path): np.asarray(leaf) for path, leaf in leaves}
    meta = {"model_kind": kind, "dims": dims.to_dict(), **(extra or {})}
    return save_arrays(directory, arrays, meta)


def load_model(directory):
    """Return ``(kind, model, meta)`` for a neural-model checkpoint."""
    arrays, meta = load_arrays(directory)
    kind = meta.get("model_kind")
    if kind == "dmd":
        raise CheckpointError(f"{directory} holds a DMD model; use load_checkpoint")
    dims = ModelDims(**meta["dims"])
    template = initialize(kind, dims, seed=0)
    paths, treedef = jax.tree_util.tree_flatten_with_path(template)
    leaves = []
    for path, ref in paths:
        name = jax.tree_util.keystr(path)
        if name not in arrays:
            raise CheckpointError(f"{directory}: checkpoint lacks parameter {name}")
        value = arrays[name]
        if value.shape != np.shape(ref):
            raise CheckpointError(f"{directory}: parameter {name} has shape {value.shape}, expected {np.shape(ref)}")
        leaves.append(jax.numpy.asarray(value))
    return kind, jax.tree_util.tree_unflatten(treedef, leaves), meta


def save_dmd(directory, model: DmdModel, extra: dict | None = None) -> Path:
    arrays = {"eigenvalues": model.eigenvalues, "modes": model.modes, "amplitudes": model.amplitudes}
    meta = {"model_kind": "dmd", "rank": model.rank, "lags": model.lags, "dt": model.dt, **(extra or {})}
    return save_arrays(directory, arrays, meta)


def load_checkpoint(directory):
    """Return ``(kind, model, meta)`` for either a DMD or a neural checkpoint."""
    arrays, meta = load_arrays(directory)
    if meta.get("model_kind") == "dmd":
        model = DmdModel(
            meta["rank"], meta["lags"], np.array(arrays["eigenvalues"]), np.array(arrays["modes"]),
            np.array(arrays["amplitudes"]), meta["dt"],
        )
        return "dmd", model, meta
    return load_model(directory)
