"""Clutter suppression by p-th-root compressed averaging over fibers.

Signals locked to the moving illumination fiber (present in few fibers) are
crushed relative to stationary signals (present in all fibers): compress the
envelope by ``|z|^p``, average over fibers, then undo the compression with the
``1/p`` power. A fiber-constant input passes through unchanged; a lone-fiber
signal is attenuated by ``N^(1/p - 1)`` beyond plain averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import IQVolume


@dataclass(frozen=True)
class CompressionConfig:
    """Compressed-averaging parameters; exponent 1 reduces to plain averaging."""

    exponent: float = 0.25
    enabled: bool = True

    def __post_init__(self):
        if not (0.0 < self.exponent <= 1.0):
            raise ValueError("exponent must satisfy 0 < p <= 1")


def compress(iq, p: float):
    """``|z|^p`` with the phase kept; zero maps to zero (no epsilon needed).

    Subnormal envelopes are treated as zero so the unit-phase division cannot
    overflow.
    """
    z = np.asarray(iq, dtype=complex)
    mag = np.abs(z)
    keep = mag > np.finfo(float).tiny
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(keep, (mag ** p) * (z / np.where(keep, mag, 1.0)), 0.0)
    return out if out.ndim else complex(out)


def decompress(iq, p: float):
    """Inverse of :func:`compress`: the ``1/p`` power on the envelope."""
    return compress(iq, 1.0 / p)


def compressed_average(per_fiber: np.ndarray, p: float = 0.25, axis: int = 0):
    """Decompressed fiber mean of compressed samples along ``axis``."""
    return decompress(np.mean(compress(per_fiber, p), axis=axis), p)


def declutter_volume(volume: IQVolume, config: CompressionConfig = CompressionConfig()) -> IQVolume:
    """Reduce the fiber axis of a per-fiber volume; keeps the volume format
    with a singleton fiber axis so the result persists like any other stack."""
    if config.enabled:
        reduced = compressed_average(volume.data, config.exponent, axis=1)
        stage = {"stage": "declutter", "exponent": config.exponent}
    else:
        reduced = volume.data.mean(axis=1)
        stage = {"stage": "fiber-average", "exponent": 1.0}
    return volume.with_data(reduced[:, None, :, :], **stage)
