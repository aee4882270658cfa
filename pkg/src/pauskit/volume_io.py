"""IQ volume persistence: raw little-endian float32 pairs plus a JSON sidecar."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import SidecarMismatchError
from .model import Grid
from .simulate import IQVolume

FORMAT_TAG = "pauskit-iqvolume-v1"
# Interleaved (re, im) float32, little-endian, C order over [lambda][fiber][z][x].
STORAGE_DTYPE = "<c8"


def storage_quantize(data: np.ndarray) -> np.ndarray:
    """Round-trip through the storage precision (what save-then-load yields)."""
    return data.astype(STORAGE_DTYPE).astype(complex)


def save_volume(volume: IQVolume, path: str) -> str:
    """Write ``path`` (raw samples) and ``path + '.json'`` (sidecar); returns path."""
    raw = np.ascontiguousarray(volume.data.astype(STORAGE_DTYPE)).tobytes()
    with open(path, "wb") as fh:
        fh.write(raw)
    sidecar = {
        "format": FORMAT_TAG,
        "dims": list(volume.data.shape),
        "order": "lambda,fiber,z,x",
        "dtype": "float32-le interleaved (re, im)",
        "wavelengths_nm": list(volume.wavelengths_nm),
        "seed": volume.seed,
        "scene_hash": volume.scene_hash,
        "grid": volume.grid.to_doc(),
        "data_sha256": hashlib.sha256(raw).hexdigest(),
        "meta": volume.meta,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_volume(path: str, expected_scene_hash: str | None = None) -> IQVolume:
    """Read a volume, checking the data checksum and (optionally) the scene hash."""
    sidecar_path = path + ".json"
    if not os.path.exists(sidecar_path):
        raise SidecarMismatchError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format") != FORMAT_TAG:
        raise SidecarMismatchError(f"unrecognized sidecar format in {sidecar_path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if hashlib.sha256(raw).hexdigest() != sidecar["data_sha256"]:
        raise SidecarMismatchError(f"checksum mismatch for {path}")
    if expected_scene_hash is not None and sidecar.get("scene_hash") != expected_scene_hash:
        raise SidecarMismatchError(
            f"scene hash mismatch: sidecar has {sidecar.get('scene_hash')!r}")
    dims = tuple(sidecar["dims"])
    data = np.frombuffer(raw, dtype=STORAGE_DTYPE).reshape(dims).astype(complex)
    return IQVolume(
        data,
        Grid.from_doc(sidecar["grid"]),
        tuple(sidecar["wavelengths_nm"]),
        seed=sidecar.get("seed"),
        scene_hash=sidecar.get("scene_hash"),
        meta=sidecar.get("meta", {}),
    )


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
