"""Deterministic image emission: dB scaling, small built-in colormaps,
8-bit PNG/PGM writers with colorbar sidecars."""

from __future__ import annotations

import json

import numpy as np
from PIL import Image


def db_scale(image: np.ndarray, floor_db: float = -40.0, ceil_db: float = 0.0,
             ref: float | None = None) -> np.ndarray:
    """Map an envelope image to uint8 levels over a dB window.

    Values at or below ``floor_db`` (relative to ``ref``, default the image
    maximum) map to 0, values at or above ``ceil_db`` map to 255. An all-zero
    image maps to all zeros.
    """
    if ceil_db <= floor_db:
        raise ValueError("ceil_db must exceed floor_db")
    mags = np.abs(np.asarray(image, dtype=float))
    if ref is None:
        ref = float(mags.max())
    if ref <= 0:
        return np.zeros(mags.shape, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(np.where(mags > 0, mags / ref, np.finfo(float).tiny))
    levels = (db - floor_db) / (ceil_db - floor_db) * 255.0
    return np.clip(np.rint(levels), 0, 255).astype(np.uint8)


def _hot_lut() -> np.ndarray:
    # classic hot: black -> red -> yellow -> white over 256 levels
    t = np.arange(256) / 255.0
    r = np.clip(t / 0.375, 0, 1)
    g = np.clip((t - 0.375) / 0.375, 0, 1)
    b = np.clip((t - 0.75) / 0.25, 0, 1)
    return np.rint(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


_LUTS = {"hot": _hot_lut()}


def apply_colormap(levels: np.ndarray, colormap: str = "gray") -> np.ndarray:
    """uint8 levels -> RGB uint8 via a built-in lookup table."""
    levels = np.asarray(levels, dtype=np.uint8)
    if colormap == "gray":
        return np.repeat(levels[:, :, None], 3, axis=2)
    if colormap not in _LUTS:
        raise ValueError(f"unknown colormap {colormap!r}")
    return _LUTS[colormap][levels]


def write_pgm(levels: np.ndarray, path: str):
    """Binary 8-bit PGM; byte-deterministic by construction."""
    levels = np.asarray(levels, dtype=np.uint8)
    header = f"P5\n{levels.shape[1]} {levels.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(levels.tobytes())


def emit_figure(image: np.ndarray, path: str, floor_db: float = -40.0,
                ceil_db: float = 0.0, ref: float | None = None,
                colormap: str = "gray", extra: dict | None = None) -> str:
    """Write an 8-bit figure plus a colorbar sidecar describing the scaling.

    The extension picks the container: ``.pgm`` for raw grayscale, ``.png``
    otherwise (grayscale or color-mapped). Output bytes depend only on the
    input image and arguments. ``extra`` entries (e.g. provenance hashes) are
    merged into the sidecar.
    """
    mags = np.abs(np.asarray(image, dtype=float))
    if not np.all(np.isfinite(mags)):
        raise ValueError("image contains non-finite values")
    used_ref = float(mags.max()) if ref is None else float(ref)
    levels = db_scale(mags, floor_db, ceil_db, ref)
    if str(path).endswith(".pgm"):
        if colormap != "gray":
            raise ValueError("PGM output is grayscale only")
        write_pgm(levels, path)
    else:
        if colormap == "gray":
            Image.fromarray(levels, mode="L").save(path, format="PNG")
        else:
            Image.fromarray(apply_colormap(levels, colormap), mode="RGB").save(
                path, format="PNG")
    sidecar = {
        "floor_db": floor_db,
        "ceil_db": ceil_db,
        "reference": used_ref,
        "colormap": colormap,
        "levels": "0..255 linear in dB over [floor_db, ceil_db]",
    }
    sidecar.update(extra or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


def write_rgb_png(rgb: np.ndarray, path: str, extra: dict | None = None) -> str:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
    if extra is not None:
        with open(str(path) + ".json", "w") as fh:
            json.dump(extra, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return str(path)
