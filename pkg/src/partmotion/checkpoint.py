"""Deterministic checkpoint files: npz parameter blob + JSON sidecar."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def save_checkpoint(path, arrays: dict[str, np.ndarray], sidecar: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = {k: np.ascontiguousarray(arrays[k]) for k in sorted(arrays)}
    with open(path, "wb") as fh:
        np.savez(fh, **ordered)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with np.load(path) as blob:
        arrays = {k: blob[k] for k in blob.files}
    sidecar_path = path.with_suffix(path.suffix + ".json")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    return arrays, sidecar


def params_checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arrays[key]).tobytes())
    return digest.hexdigest()[:16]
