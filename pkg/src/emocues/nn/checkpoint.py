"""Checkpoint files: a JSON manifest plus one little-endian float32 blob.

``<stem>.json`` lists every tensor (name, shape, dtype, byte offset) and any
caller metadata; ``<stem>.bin`` holds the tensors back to back.  Values are
stored as float32, so save -> load -> save is byte-identical once the
parameters have been rounded with :func:`round_to_float32`.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from emocues.nn.layers import Module

FORMAT = "emocues-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f4")


def round_to_float32(module: Module) -> None:
    for p in module.parameters():
        p.data[...] = p.data.astype(np.float32).astype(np.float64)


def checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".json":
        return path, path.with_suffix(".bin")
    return path / "model.json", path / "model.bin"


def save_checkpoint(path: str | Path, module: Module, meta: dict | None = None) -> Path:
    """Write ``module``'s parameters; ``path`` is a directory or a ``.json`` manifest path."""
    manifest_path, blob_path = checkpoint_paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, p in module.named_parameters():
        raw = p.data.astype(_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(p.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "version": VERSION, "blob": blob_path.name,
                "tensors": entries, "meta": meta or {}}
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_manifest(path: str | Path) -> dict:
    manifest_path, _ = checkpoint_paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{manifest_path}: not a {FORMAT} manifest")
    return manifest


def load_into(path: str | Path, module: Module) -> dict:
    """Fill ``module``'s parameters from a checkpoint; returns the manifest's ``meta``."""
    manifest_path, _ = checkpoint_paths(path)
    manifest = read_manifest(manifest_path)
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    params = dict(module.named_parameters())
    stored = {e["name"]: e for e in manifest["tensors"]}
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise ValueError(f"checkpoint/model mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, p in params.items():
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise ValueError(f"{name}: checkpoint shape {e['shape']} != model shape {list(p.shape)}")
        arr = np.frombuffer(blob, dtype=_DTYPE, count=int(np.prod(e["shape"], dtype=int)),
                            offset=e["offset"])
        p.data[...] = arr.reshape(p.shape).astype(np.float64)
    return manifest["meta"]
