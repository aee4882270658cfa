"""Two-dipole diffusion-approximation fluence model and fiber-share normalization.

Each fiber's beam is replaced by a positive isotropic source one transport
mean free path into the tissue along the beam direction and a negative image
source mirrored across the extrapolated boundary z = -z_b (z_b = 2AD, A = 1 by
default). Valid a few transport mean free paths below the surface; shallower
pixels are flagged by :func:`near_field_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularityError
from .model import FiberArray, Grid, MediumOptics
from .units import cm_to_mm, mm_to_cm

# Evaluation closer to a source than this is refused (cm).
SINGULARITY_EPS_CM = 1e-6


@dataclass(frozen=True)
class DipolePair:
    """Positive/negative source positions (mm, 3-vectors) for one fiber."""

    r_p: np.ndarray
    r_n: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r_p", np.asarray(self.r_p, dtype=float))
        object.__setattr__(self, "r_n", np.asarray(self.r_n, dtype=float))
        if self.r_p[2] <= 0:
            raise ValueError("positive source must lie inside the tissue (z > 0)")
        if self.r_n[2] >= 0:
            raise ValueError("negative source must lie above the surface (z < 0)")


def _dipole_positions(entry_mm, angle_rad, mu_s_prime_cm, boundary_factor=1.0):
    """Vectorized dipole placement; entry_mm is (..., 3), returns (r_p, r_n)."""
    entry = np.asarray(entry_mm, dtype=float)
    z0_mm = cm_to_mm(1.0 / mu_s_prime_cm)            # source depth = transport mfp
    zb_mm = cm_to_mm(2.0 * boundary_factor / (3.0 * mu_s_prime_cm))
    direction = np.stack([np.sin(angle_rad), np.zeros_like(np.asarray(angle_rad, dtype=float)),
                          np.cos(angle_rad)], axis=-1)
    r_p = entry + z0_mm * direction
    r_n = r_p.copy()
    r_n[..., 2] = -r_p[..., 2] - 2.0 * zb_mm
    return r_p, r_n


def place_dipoles(entry_mm, angle_rad, medium: MediumOptics, wavelength_nm,
                  boundary_factor: float = 1.0) -> DipolePair:
    """Dipole pair for one fiber entering at ``entry_mm`` with the given incidence angle."""
    mu_sp = medium.mu_s_prime_cm(wavelength_nm)
    r_p, r_n = _dipole_positions(np.asarray(entry_mm, dtype=float), float(angle_rad),
                                 mu_sp, boundary_factor)
    return DipolePair(r_p, r_n)


def fluence_at(pair: DipolePair, medium: MediumOptics, wavelength_nm, gamma, r_mm):
    """Fluence at position(s) ``r_mm`` from one fiber's dipole pair.

    gamma * [exp(-mu_eff d_p)/(4 pi D d_p) - exp(-mu_eff d_n)/(4 pi D d_n)],
    distances in cm.
    """
    r = np.asarray(r_mm, dtype=float)
    d_p = mm_to_cm(np.linalg.norm(r - pair.r_p, axis=-1))
    d_n = mm_to_cm(np.linalg.norm(r - pair.r_n, axis=-1))
    if np.any(d_p < SINGULARITY_EPS_CM) or np.any(d_n < SINGULARITY_EPS_CM):
        raise SingularityError("evaluation point coincides with a dipole source")
    mu_eff = medium.mu_eff_cm(wavelength_nm)
    diffusion = medium.diffusion_cm(wavelength_nm)
    prefactor = gamma / (4.0 * np.pi * diffusion)
    return prefactor * (np.exp(-mu_eff * d_p) / d_p - np.exp(-mu_eff * d_n) / d_n)


def fiber_fluence_matrix(points_mm, fibers: FiberArray, mu_eff_cm, mu_s_prime_cm,
                         gamma: float = 1.0, boundary_factor: float = 1.0) -> np.ndarray:
    """Fluence of every fiber at every point, for scalar (mu_eff, mu_s').

    Parameters
    ----------
    points_mm : (N, 3) array of positions.
    Returns
    -------
    (N, n_fiber) array. This is the model kernel the optical-property fit
    evaluates repeatedly, so it is fully vectorized and takes the two optical
    parameters directly rather than a MediumOptics table.
    """
    pts = mm_to_cm(np.asarray(points_mm, dtype=float))      # (N, 3) cm
    r_p, r_n = _dipole_positions(fibers.entry_points(), fibers.angle_rad,
                                 mu_s_prime_cm, boundary_factor)
    r_p = mm_to_cm(r_p)                                      # (F, 3) cm
    r_n = mm_to_cm(r_n)
    d_p = np.linalg.norm(pts[:, None, :] - r_p[None, :, :], axis=-1)
    d_n = np.linalg.norm(pts[:, None, :] - r_n[None, :, :], axis=-1)
    if np.any(d_p < SINGULARITY_EPS_CM) or np.any(d_n < SINGULARITY_EPS_CM):
        raise SingularityError("evaluation point coincides with a dipole source")
    diffusion = 1.0 / (3.0 * mu_s_prime_cm)
    prefactor = gamma / (4.0 * np.pi * diffusion)
    return prefactor * (np.exp(-mu_eff_cm * d_p) / d_p - np.exp(-mu_eff_cm * d_n) / d_n)


def grid_points_mm(grid: Grid) -> np.ndarray:
    """(nz*nx, 3) pixel-center positions in the imaging plane y = 0."""
    xx, zz = np.meshgrid(grid.x_centers(), grid.z_centers())
    return np.column_stack([xx.ravel(), np.zeros(xx.size), zz.ravel()])


def fluence_field(grid: Grid, fibers: FiberArray, medium: MediumOptics, wavelength_nm,
                  gamma: float = 1.0, boundary_factor: float = 1.0) -> np.ndarray:
    """Per-fiber fluence maps on the grid: (n_fiber, nz, nx)."""
    values = fiber_fluence_matrix(
        grid_points_mm(grid), fibers,
        medium.mu_eff_cm(wavelength_nm), medium.mu_s_prime_cm(wavelength_nm),
        gamma=gamma, boundary_factor=boundary_factor,
    )
    return values.T.reshape(fibers.count, grid.nz, grid.nx)


def near_field_mask(grid: Grid, medium: MediumOptics, wavelength_nm,
                    mfp_multiple: float = 2.0) -> np.ndarray:
    """True where the diffusion approximation is not trusted (z < k * l_free)."""
    limit_mm = mfp_multiple * medium.transport_mfp_mm(wavelength_nm)
    return (grid.z_centers() < limit_mm)[:, None] & np.ones(grid.nx, dtype=bool)[None, :]


def normalize_over_fibers(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Shares values_i / sum_i values_i along ``axis``; sums must be positive."""
    values = np.asarray(values, dtype=float)
    total = values.sum(axis=axis, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("degenerate pixel: fiber sum is not positive")
    return values / total
