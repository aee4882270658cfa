"""Agent identification: spectral cross-correlation map, sigmoid weighting,
weighted/overlay image composition, and an NNLS linear-unmixing baseline.

The per-pixel correlation is a plain cosine similarity between the measured
spectrum (envelope of the compensated, decluttered image at each wavelength)
and the reference spectrum: no mean subtraction, so nonnegative spectra
compress the scores toward 1 and the sigmoid midpoint must sit inside that
compressed band.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls
from scipy.special import expit


def pixel_ncc(measured, reference) -> float:
    """Cosine similarity of two spectra; an all-zero measurement scores 0."""
    s = np.asarray(measured, dtype=float)
    r = np.asarray(reference, dtype=float)
    if s.shape != r.shape or s.ndim != 1 or s.size < 2:
        raise ValueError("spectra must be 1-D, equal length, with >= 2 points")
    r_norm = np.linalg.norm(r)
    if r_norm == 0:
        raise ValueError("reference spectrum has zero norm")
    s_norm = np.linalg.norm(s)
    if s_norm == 0:
        return 0.0
    return float(s @ r / (s_norm * r_norm))


def ncc_map(stack: np.ndarray, reference) -> np.ndarray:
    """Per-pixel cosine similarity for a (n_lambda, nz, nx) magnitude stack."""
    mags = np.abs(np.asarray(stack))
    r = np.asarray(reference, dtype=float)
    if mags.shape[0] != r.size:
        raise ValueError("stack and reference wavelength counts differ")
    r_norm = np.linalg.norm(r)
    if r_norm == 0:
        raise ValueError("reference spectrum has zero norm")
    dots = np.tensordot(r, mags, axes=(0, 0))
    norms = np.sqrt((mags ** 2).sum(axis=0))
    out = np.zeros_like(dots)
    nonzero = norms > 0
    out[nonzero] = dots[nonzero] / (norms[nonzero] * r_norm)
    return out


def sigmoid_weight(ncc, slope: float = 300.0, midpoint: float = 0.978):
    """Logistic weighting 1 / (1 + exp(-slope (ncc - midpoint))).

    Mathematically in (0, 1); in float64 the tails saturate once
    |slope * (ncc - midpoint)| exceeds ~745, so far-off scores round to 0.
    """
    out = expit(slope * (np.asarray(ncc, dtype=float) - midpoint))
    return float(out) if out.ndim == 0 else out


def agent_weighted_image(image: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Pixel-wise product of an image with a weighting map."""
    image = np.asarray(image)
    weights = np.asarray(weights)
    if image.shape != weights.shape:
        raise ValueError(f"shape mismatch {image.shape} vs {weights.shape}")
    return image * weights


def overlay(weighted: np.ndarray, anatomy: np.ndarray, floor_db: float = -40.0,
            colormap: str = "hot") -> np.ndarray:
    """RGB composite: weighted map in color, alpha-blended over gray anatomy.

    Both images are magnitude images; the weighted layer is dB-scaled over
    [floor_db, 0] relative to its own maximum and used as both color and
    blending weight.
    """
    from .figures import apply_colormap, db_scale

    weighted = np.abs(np.asarray(weighted, dtype=float))
    anatomy = np.abs(np.asarray(anatomy, dtype=float))
    if weighted.shape != anatomy.shape:
        raise ValueError("weighted and anatomy shapes differ")
    gray = db_scale(anatomy, floor_db=-50.0)
    base = np.repeat(gray[:, :, None], 3, axis=2).astype(float)
    fg_levels = db_scale(weighted, floor_db=floor_db)
    fg = apply_colormap(fg_levels, colormap).astype(float)
    alpha = (fg_levels / 255.0)[:, :, None]
    return np.clip((1.0 - alpha) * base + alpha * fg, 0, 255).astype(np.uint8)


def nnls_unmix(stack: np.ndarray, spectra: np.ndarray,
               mask: np.ndarray | None = None) -> np.ndarray:
    """Linear-unmixing baseline: nonnegative least squares per pixel.

    ``spectra`` is (n_chromophores, n_lambda); returns concentration maps of
    shape (n_chromophores, nz, nx). This is the comparison path, not the
    primary agent detector.
    """
    mags = np.abs(np.asarray(stack))
    basis = np.asarray(spectra, dtype=float).T          # (n_lambda, n_chrom)
    n_chrom = basis.shape[1]
    nz, nx = mags.shape[1:]
    out = np.zeros((n_chrom, nz, nx))
    select = np.ones((nz, nx), dtype=bool) if mask is None else np.asarray(mask, bool)
    for iz, ix in np.argwhere(select):
        coeffs, _ = nnls(basis, mags[:, iz, ix])
        out[:, iz, ix] = coeffs
    return out
