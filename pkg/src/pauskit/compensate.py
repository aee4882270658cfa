"""Optical-property estimation from fiber-to-fiber signal variation, and
fluence compensation of IQ volumes.

The normalized per-fiber signal shares at a pixel depend only on the medium's
(mu_eff, mu_s') through the dipole-source geometry, so matching measured
shares against model shares in a weighted mean-squared sense recovers both
parameters per wavelength without auxiliary measurements. Compensation then
divides the coherent fiber sum by the modeled fluence sum (times pulse
energy), leaving an image proportional to the absorption coefficient up to
one global constant.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import fftconvolve

from .errors import NoSignalError
from .fluence import fiber_fluence_matrix, grid_points_mm
from .model import FiberArray, Grid, Roi
from .simulate import IQVolume
from .units import cm_to_mm, mm_to_cm

DEFAULT_BOUNDS = ((0.05, 10.0), (1.0, 40.0))  # (mu_eff, mu_s') in cm^-1


@dataclass(frozen=True)
class PixelSelection:
    """Pixels admitted to the optical fit, with their squared-magnitude weights."""

    indices: np.ndarray          # (N, 2) of (iz, ix)
    weights: np.ndarray          # (N,), positive, sums to 1
    noise_mean: float
    noise_std: float
    threshold: float

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])

    def positions_mm(self, grid: Grid) -> np.ndarray:
        """(N, 3) pixel-center positions in the y = 0 imaging plane."""
        x = grid.x0 + (self.indices[:, 1] + 0.5) * grid.dx
        z = grid.z0 + (self.indices[:, 0] + 0.5) * grid.dz
        return np.column_stack([x, np.zeros(x.size), z])

    def subset(self, keep: np.ndarray) -> "PixelSelection":
        weights = self.weights[keep]
        return PixelSelection(self.indices[keep], weights / weights.sum(),
                              self.noise_mean, self.noise_std, self.threshold)


@dataclass(frozen=True)
class OpticalFit:
    """Per-wavelength result of the share-matching fit."""

    wavelength_nm: float
    mu_eff_cm: float
    mu_s_prime_cm: float
    objective: float
    n_evaluations: int
    converged: bool
    bounds: tuple[tuple[float, float], tuple[float, float]]
    n_pixels: int

    def to_doc(self) -> dict:
        return {
            "wavelength_nm": self.wavelength_nm,
            "mu_eff_cm": self.mu_eff_cm,
            "mu_s_prime_cm": self.mu_s_prime_cm,
            "objective": self.objective,
            "n_evaluations": self.n_evaluations,
            "converged": self.converged,
            "bounds": [list(b) for b in self.bounds],
            "n_pixels": self.n_pixels,
        }


def select_pixels(volume: IQVolume, wavelength_nm: float, noise_roi: Roi,
                  min_depth_mm: float = 2.0,
                  rel_weight_floor: float = 1e-12,
                  zero_noise_rel_threshold: float = 1e-3) -> PixelSelection:
    """Pixels of the fiber-summed image exceeding the noise mean + 3 sigma.

    Weights are the squared fiber-averaged envelope, renormalized to sum 1.
    Pixels shallower than ``min_depth_mm`` are excluded (diffusion validity);
    pixels carrying less than ``rel_weight_floor`` of the total weight are
    dropped as a pure speed guard. When the noise box is exactly zero (only
    possible for noise-free synthetic data) the threshold degenerates to 0;
    ``zero_noise_rel_threshold`` times the image maximum is used instead.
    """
    noise_roi.check_inside(volume.grid)
    if noise_roi.n_pixels < 9:
        raise ValueError("noise ROI must contain at least 9 pixels")
    j = volume.wavelength_index(wavelength_nm)
    summed = np.abs(volume.data[j].sum(axis=0))
    noise_pixels = noise_roi.extract(summed)
    noise_mean = float(noise_pixels.mean())
    noise_std = float(noise_pixels.std())
    threshold = noise_mean + 3.0 * noise_std
    if threshold <= 0.0:
        threshold = zero_noise_rel_threshold * float(summed.max())

    mask = summed > threshold
    mask &= volume.grid.z_centers()[:, None] >= min_depth_mm
    if not mask.any():
        raise NoSignalError(
            f"no pixel exceeds noise mean + 3 sigma at {wavelength_nm} nm")

    fiber_avg = np.abs(volume.data[j]).mean(axis=0)
    weights = fiber_avg[mask] ** 2
    weights = weights / weights.sum()
    indices = np.argwhere(mask)
    keep = weights >= rel_weight_floor
    indices, weights = indices[keep], weights[keep]
    weights = weights / weights.sum()
    return PixelSelection(indices, weights, noise_mean, noise_std, threshold)


def normalize_pa(volume: IQVolume, selection: PixelSelection,
                 wavelength_nm: float) -> tuple[np.ndarray, PixelSelection]:
    """Per-pixel fiber shares of the signal envelope: (N, n_fiber).

    Pixels whose fiber envelopes sum to zero are dropped with a warning; the
    returned selection reflects any drops.
    """
    j = volume.wavelength_index(wavelength_nm)
    iz, ix = selection.indices[:, 0], selection.indices[:, 1]
    magnitudes = np.abs(volume.data[j][:, iz, ix]).T    # (N, F)
    totals = magnitudes.sum(axis=1)
    good = totals > 0
    if not good.all():
        warnings.warn(f"dropping {np.count_nonzero(~good)} zero-sum pixels "
                      f"at {wavelength_nm} nm")
        magnitudes, totals = magnitudes[good], totals[good]
        selection = selection.subset(good)
    return magnitudes / totals[:, None], selection


def share_objective(shares: np.ndarray, weights: np.ndarray, points_mm: np.ndarray,
                    fibers: FiberArray, mu_eff_cm: float, mu_s_prime_cm: float,
                    boundary_factor: float = 1.0) -> float:
    """Weighted MSE between measured and model fiber shares."""
    phi = fiber_fluence_matrix(points_mm, fibers, mu_eff_cm, mu_s_prime_cm,
                               boundary_factor=boundary_factor)
    model = phi / phi.sum(axis=1, keepdims=True)
    residual_sq = ((shares - model) ** 2).mean(axis=1)
    return float(weights @ residual_sq) / shares.shape[0]


class _ShareModel:
    """Fast per-pixel model shares with geometry terms precomputed.

    Distances to both dipole sources reduce to sqrt(B - 2 z0 C +/- ...) with
    pixel/fiber arrays B, C fixed across objective evaluations; only the
    source depth z0 and boundary offset zb move with the parameters. With
    ``lateral_sigma_mm`` set, the model fluence is blurred along x with the
    imaging system's lateral envelope before normalization, matching what the
    pixel envelopes measure over extended absorbers.
    """

    def __init__(self, selection: PixelSelection, grid: Grid, fibers: FiberArray,
                 boundary_factor: float = 1.0,
                 lateral_sigma_mm: float | None = None):
        self.boundary_factor = boundary_factor
        self.lateral_sigma_mm = lateral_sigma_mm
        if lateral_sigma_mm is None:
            points = selection.positions_mm(grid)
            self._sample = None
        else:
            # evaluate on full rows so the lateral blur sees its neighborhood
            rows = np.unique(selection.indices[:, 0])
            row_pos = {r: i for i, r in enumerate(rows)}
            xs = grid.x_centers()
            zs = grid.z0 + (rows + 0.5) * grid.dz
            points = np.column_stack([
                np.tile(xs, rows.size),
                np.zeros(rows.size * xs.size),
                np.repeat(zs, xs.size),
            ])
            self._shape = (rows.size, xs.size)
            self._sample = (
                np.array([row_pos[r] for r in selection.indices[:, 0]]),
                selection.indices[:, 1],
            )
            half = max(1, int(np.ceil(4.0 * lateral_sigma_mm / grid.dx)))
            offs = np.arange(-half, half + 1) * grid.dx
            self._kernel = np.exp(-(offs ** 2) / (2.0 * lateral_sigma_mm ** 2))

        pts_cm = mm_to_cm(points)                      # (N, 3)
        entries = mm_to_cm(fibers.entry_points())      # (F, 3)
        delta = pts_cm[:, None, :] - entries[None, :, :]
        sin_t = np.sin(fibers.angle_rad)
        cos_t = np.cos(fibers.angle_rad)
        self._b = (delta ** 2).sum(axis=-1)            # |p - entry|^2
        self._dx_term = delta[:, :, 0] * sin_t[None, :]
        self._dz_term = delta[:, :, 2] * cos_t[None, :]
        self._pz = delta[:, :, 2]
        self._cos_t = cos_t[None, :]

    def shares(self, mu_eff_cm: float, mu_s_prime_cm: float) -> np.ndarray:
        z0 = 1.0 / mu_s_prime_cm
        zb = 2.0 * self.boundary_factor / (3.0 * mu_s_prime_cm)
        d_p = np.sqrt(self._b - 2.0 * z0 * (self._dx_term + self._dz_term) + z0 ** 2)
        d_n = np.sqrt(self._b - 2.0 * z0 * (self._dx_term - self._dz_term)
                      + 4.0 * zb * self._pz + z0 ** 2 + 4.0 * zb ** 2
                      + 4.0 * z0 * zb * self._cos_t)
        phi = np.exp(-mu_eff_cm * d_p) / d_p - np.exp(-mu_eff_cm * d_n) / d_n
        if self._sample is not None:
            phi = phi.reshape(self._shape + (-1,))
            phi = fftconvolve(phi, self._kernel[None, :, None], mode="same", axes=1)
            phi = phi[self._sample[0], self._sample[1], :]
        return phi / phi.sum(axis=1, keepdims=True)


def fit_optical_props(shares: np.ndarray, selection: PixelSelection, grid: Grid,
                      fibers: FiberArray, wavelength_nm: float,
                      bounds=DEFAULT_BOUNDS, coarse_grid: int = 41,
                      rel_step_tol: float = 1e-4, max_refine_evals: int = 500,
                      boundary_factor: float = 1.0,
                      lateral_sigma_mm: float | None = None) -> OpticalFit:
    """Recover (mu_eff, mu_s') by coarse log-spaced grid search plus Nelder-Mead.

    The refinement runs in log-parameter space so the relative step tolerance
    maps directly onto the simplex size criterion; a second simplex restart
    within the evaluation budget guards against collapse along the shallow
    valley that couples the two parameters.
    """
    if shares.shape[1] < 3:
        raise ValueError("need at least three fibers to fit two parameters")
    if selection.count < 1:
        raise NoSignalError("empty pixel selection")
    weights = selection.weights
    model = _ShareModel(selection, grid, fibers, boundary_factor, lateral_sigma_mm)
    n_pix = shares.shape[0]

    def objective_log(theta):
        resid = shares - model.shares(np.exp(theta[0]), np.exp(theta[1]))
        return float(weights @ (resid ** 2).mean(axis=1)) / n_pix

    (me_lo, me_hi), (ms_lo, ms_hi) = bounds
    me_axis = np.log(np.geomspace(me_lo, me_hi, coarse_grid))
    ms_axis = np.log(np.geomspace(ms_lo, ms_hi, coarse_grid))
    best_val, best_theta = np.inf, None
    for le in me_axis:
        for ls in ms_axis:
            val = objective_log((le, ls))
            if val < best_val:
                best_val, best_theta = val, (le, ls)
    n_evals = coarse_grid * coarse_grid

    log_bounds = [(np.log(me_lo), np.log(me_hi)), (np.log(ms_lo), np.log(ms_hi))]
    options = {"xatol": rel_step_tol, "fatol": 1e-15}
    result = minimize(objective_log, best_theta, method="Nelder-Mead",
                      bounds=log_bounds,
                      options={**options, "maxfev": max(max_refine_evals // 2, 50)})
    n_evals += result.nfev
    budget = max_refine_evals - result.nfev
    if budget > 10:
        second = minimize(objective_log, result.x, method="Nelder-Mead",
                          bounds=log_bounds, options={**options, "maxfev": budget})
        n_evals += second.nfev
        if second.fun <= result.fun:
            result = second
    theta = result.x if result.fun <= best_val else np.asarray(best_theta)
    value = min(float(result.fun), best_val)
    return OpticalFit(
        wavelength_nm=float(wavelength_nm),
        mu_eff_cm=float(np.exp(theta[0])),
        mu_s_prime_cm=float(np.exp(theta[1])),
        objective=value,
        n_evaluations=n_evals,
        converged=bool(result.success),
        bounds=tuple(tuple(b) for b in bounds),
        n_pixels=selection.count,
    )


def fit_volume(volume: IQVolume, noise_roi: Roi, min_depth_mm: float = 2.0,
               bounds=DEFAULT_BOUNDS, coarse_grid: int = 41,
               rel_step_tol: float = 1e-4, max_refine_evals: int = 500,
               boundary_factor: float = 1.0, lateral_sigma_mm: float | None = None,
               threads: int = 1) -> list[OpticalFit | None]:
    """Per-wavelength fits; entries are None where no pixel cleared the threshold."""

    def fit_one(lam):
        try:
            selection = select_pixels(volume, lam, noise_roi, min_depth_mm)
        except NoSignalError:
            return None
        shares, selection = normalize_pa(volume, selection, lam)
        return fit_optical_props(shares, selection, volume.grid, _fibers_of(volume),
                                 lam, bounds, coarse_grid, rel_step_tol,
                                 max_refine_evals, boundary_factor, lateral_sigma_mm)

    lams = volume.wavelengths_nm
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fit_one, lams))
    return [fit_one(lam) for lam in lams]


def _fibers_of(volume: IQVolume) -> FiberArray:
    fibers = volume.meta.get("fibers")
    if fibers is None:
        raise ValueError("volume metadata carries no fiber geometry; "
                         "pass fibers explicitly or attach meta['fibers']")
    return fibers if isinstance(fibers, FiberArray) else FiberArray.from_doc(fibers)


def pairwise_reduce(arrays: list[np.ndarray]) -> np.ndarray:
    """Deterministic pairwise-tree sum, independent of worker scheduling."""
    items = list(arrays)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        items = [items[k] + items[k + 1] if k + 1 < len(items) else items[k]
                 for k in range(0, len(items), 2)]
    return items[0]


@dataclass(frozen=True)
class CompensationResult:
    """Fluence-compensated data: per-fiber volume, per-wavelength images, compound."""

    volume: IQVolume                 # per-fiber compensated IQ
    images: np.ndarray               # (n_lambda, nz, nx) coherent fiber sums
    compound: np.ndarray             # (nz, nx) coherent wavelength compound
    valid_mask: np.ndarray           # (n_lambda, nz, nx); False = masked pixel
    fits: tuple[OpticalFit, ...]


def compensate_volume(volume: IQVolume, fits, fibers: FiberArray | None = None,
                      energies: dict[float, float] | None = None,
                      boundary_factor: float = 1.0,
                      near_field_multiple: float = 2.0,
                      eps_rel: float = 1e-12) -> CompensationResult:
    """Divide each wavelength's data by the modeled fluence sum times pulse energy.

    ``fits`` must contain one OpticalFit per volume wavelength. Pixels where
    the fluence denominator falls below ``eps_rel`` times its maximum, or that
    sit in the near field of the fitted transport mean free path, are masked
    (set to zero, flagged False in the validity mask).
    """
    fits = list(fits)
    if len(fits) != volume.n_wavelengths or any(f is None for f in fits):
        raise ValueError("need a successful fit for every wavelength")
    fibers = fibers or _fibers_of(volume)
    grid = volume.grid
    out = np.empty_like(volume.data)
    images = np.empty((volume.n_wavelengths, grid.nz, grid.nx), dtype=complex)
    valid = np.ones((volume.n_wavelengths, grid.nz, grid.nx), dtype=bool)

    points = grid_points_mm(grid)
    for j, (lam, fit) in enumerate(zip(volume.wavelengths_nm, fits)):
        phi = fiber_fluence_matrix(points, fibers, fit.mu_eff_cm, fit.mu_s_prime_cm,
                                   boundary_factor=boundary_factor)
        phi = phi.T.reshape(fibers.count, grid.nz, grid.nx)
        energy = 1.0 if energies is None else float(energies[lam])
        denom = phi.sum(axis=0) * energy
        floor = eps_rel * denom.max()
        bad = denom <= floor
        near = grid.z_centers() < near_field_multiple * cm_to_mm(1.0 / fit.mu_s_prime_cm)
        valid[j] = ~bad & ~near[:, None]
        safe = np.where(bad, 1.0, denom)
        out[j] = np.where(bad[None, :, :], 0.0, volume.data[j] / safe[None, :, :])
        images[j] = out[j].sum(axis=0)

    compound = pairwise_reduce([images[j] for j in range(images.shape[0])])
    comp_volume = volume.with_data(out, stage="compensate")
    return CompensationResult(comp_volume, images, compound, valid, tuple(fits))
