"""Imaging-depth sensitivity analysis: C-scan formation, thresholded ROI
statistics, dB-domain weighted linear fits, and maximum-depth estimation.

Signal decays near-exponentially with depth, so points on a dB scale are fit
with a straight line; the maximum imaging depth is where the line meets the
noise floor, with its uncertainty propagated to first order from the fit
covariance (all dB quantities are shift-invariant, so the dB reference only
needs to be consistent within a series).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import Grid, Roi

DB_PER_LN = 20.0 / np.log(10.0)


def to_db(values, ref: float = 1.0):
    return 20.0 * np.log10(np.asarray(values, dtype=float) / ref)


def linear_std_to_db(mean, std):
    """First-order dB error of a linear-scale mean +/- std."""
    return DB_PER_LN * np.asarray(std, dtype=float) / np.asarray(mean, dtype=float)


def cscan_from_volume(images: np.ndarray, grid: Grid, center_depth_mm: float,
                      range_mm: float) -> np.ndarray:
    """En-face image: axial envelope mean over a depth window.

    ``images`` is an (n_elevation, nz, nx) stack of B-scan magnitudes; the
    window [center - range/2, center + range/2] must lie inside the grid and
    cover at least one pixel row.
    """
    images = np.abs(np.asarray(images))
    if images.ndim != 3 or images.shape[1] != grid.nz or images.shape[2] != grid.nx:
        raise ValueError("expected an (n_elevation, nz, nx) stack matching the grid")
    lo = center_depth_mm - range_mm / 2.0
    hi = center_depth_mm + range_mm / 2.0
    if lo < grid.z0 or hi > grid.z0 + grid.nz * grid.dz:
        raise ValueError("averaging window extends outside the grid")
    z = grid.z_centers()
    window = (z >= lo) & (z <= hi)
    if not window.any():
        raise ValueError("averaging window covers no axial pixel")
    return images[:, window, :].mean(axis=1)


@dataclass(frozen=True)
class SignalStats:
    """Thresholded ROI statistics; ``below_sensitivity`` means nothing selected."""

    mean: float
    std: float
    n_selected: int
    noise_mean: float
    noise_std: float
    threshold: float
    below_sensitivity: bool


def roi_signal_stats(image: np.ndarray, target_roi: Roi, noise_roi: Roi,
                     use_mean_threshold: bool = False) -> SignalStats:
    """Mean/std of target-ROI pixels above the noise threshold.

    The threshold is noise mean + 3 sigma, or just the noise mean when the
    fallback flag is set (for signals hugging the floor). An empty selection
    is reported as a below-sensitivity result, not an error.
    """
    if target_roi.overlaps(noise_roi):
        raise ValueError("target and noise ROIs overlap")
    mags = np.abs(np.asarray(image))
    noise = noise_roi.extract(mags)
    noise_mean = float(noise.mean())
    noise_std = float(noise.std())
    threshold = noise_mean if use_mean_threshold else noise_mean + 3.0 * noise_std
    target = target_roi.extract(mags)
    selected = target[target > threshold]
    if selected.size == 0:
        return SignalStats(np.nan, np.nan, 0, noise_mean, noise_std, threshold, True)
    return SignalStats(float(selected.mean()), float(selected.std()), int(selected.size),
                       noise_mean, noise_std, threshold, False)


@dataclass(frozen=True)
class DepthSeries:
    """Signal-vs-depth points in dB for one modality."""

    modality: str
    depths_mm: np.ndarray
    signal_db: np.ndarray
    std_db: np.ndarray | None = None
    noise_floor_db: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        depths = np.asarray(self.depths_mm, dtype=float)
        signal = np.asarray(self.signal_db, dtype=float)
        object.__setattr__(self, "depths_mm", depths)
        object.__setattr__(self, "signal_db", signal)
        if depths.size != signal.size:
            raise ValueError("depth and signal lengths differ")
        if depths.size >= 2 and not np.all(np.diff(depths) > 0):
            raise ValueError("depths must be strictly increasing")
        if self.std_db is not None:
            std = np.asarray(self.std_db, dtype=float)
            object.__setattr__(self, "std_db", std)
            if std.size != depths.size:
                raise ValueError("std length differs from depths")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["depth_mm", "signal_db", "std_db"])
            std = np.zeros(self.depths_mm.size) if self.std_db is None else self.std_db
            for d, s, e in zip(self.depths_mm, self.signal_db, std):
                writer.writerow([f"{d:.6g}", repr(float(s)), repr(float(e))])

    @classmethod
    def from_csv(cls, path, modality: str = "PA", noise_floor_db: float = 0.0):
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                try:
                    rows.append([float(c) for c in row if c.strip() != ""])
                except ValueError:
                    continue  # header
        data = np.asarray(rows, dtype=float)
        std = data[:, 2] if data.shape[1] >= 3 and np.any(data[:, 2] > 0) else None
        return cls(modality, data[:, 0], data[:, 1], std_db=std,
                   noise_floor_db=noise_floor_db)


@dataclass(frozen=True)
class DepthFit:
    """dB-domain line fit and the depth where it meets the noise floor."""

    slope_db_per_mm: float
    slope_std: float
    intercept_db: float
    intercept_std: float
    r_squared: float
    covariance: np.ndarray            # 2x2, order (intercept, slope)
    max_depth_mm: float
    max_depth_std_mm: float
    noise_floor_db: float

    def to_doc(self) -> dict:
        return {
            "slope_db_per_mm": self.slope_db_per_mm,
            "slope_std": self.slope_std,
            "intercept_db": self.intercept_db,
            "intercept_std": self.intercept_std,
            "r_squared": self.r_squared,
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "max_depth_mm": self.max_depth_mm,
            "max_depth_std_mm": self.max_depth_std_mm,
            "noise_floor_db": self.noise_floor_db,
        }


def max_imaging_depth(slope: float, intercept: float, noise_floor: float,
                      covariance=None, floor_std: float = 0.0) -> tuple[float, float]:
    """Depth where slope*d + intercept = noise_floor, with first-order error."""
    if slope == 0:
        raise ValueError("flat fit never meets the noise floor")
    depth = (noise_floor - intercept) / slope
    if covariance is None:
        return depth, 0.0
    cov = np.asarray(covariance, dtype=float)
    # gradient wrt (intercept, slope, floor)
    g_b = -1.0 / slope
    g_a = -(noise_floor - intercept) / slope ** 2
    var = (g_b ** 2 * cov[0, 0] + g_a ** 2 * cov[1, 1] + 2 * g_a * g_b * cov[0, 1]
           + (1.0 / slope) ** 2 * floor_std ** 2)
    return depth, float(np.sqrt(max(var, 0.0)))


def fit_depth_decay(series: DepthSeries, floor_std_db: float = 0.0) -> DepthFit:
    """Weighted least squares of signal_db against depth (weights 1/std^2).

    Parameter errors are scaled by the reduced chi-square, so exact-line input
    reports zero uncertainty regardless of the supplied stds.
    """
    x = series.depths_mm
    y = series.signal_db
    if x.size < 2:
        raise ValueError("need at least two points to fit a line")
    if np.ptp(x) == 0:
        raise ValueError("all depths equal; system is singular")
    if series.std_db is None:
        w = np.ones_like(x)
    else:
        if np.any(series.std_db <= 0):
            raise ValueError("std_db values must be positive when provided")
        w = 1.0 / series.std_db ** 2
    s = w.sum()
    sx = (w * x).sum()
    sy = (w * y).sum()
    sxx = (w * x * x).sum()
    sxy = (w * x * y).sum()
    delta = s * sxx - sx * sx
    slope = (s * sxy - sx * sy) / delta
    intercept = (sxx * sy - sx * sxy) / delta

    residual = y - (intercept + slope * x)
    chi2 = float((w * residual ** 2).sum())
    dof = x.size - 2
    scale = chi2 / dof if dof > 0 else 0.0
    cov = scale / delta * np.array([[sxx, -sx], [-sx, s]])

    y_mean = sy / s
    total = float((w * (y - y_mean) ** 2).sum())
    r_squared = 1.0 - chi2 / total if total > 0 else 1.0

    depth, depth_std = max_imaging_depth(slope, intercept, series.noise_floor_db,
                                         cov, floor_std_db)
    return DepthFit(
        slope_db_per_mm=float(slope),
        slope_std=float(np.sqrt(max(cov[1, 1], 0.0))),
        intercept_db=float(intercept),
        intercept_std=float(np.sqrt(max(cov[0, 0], 0.0))),
        r_squared=float(r_squared),
        covariance=cov,
        max_depth_mm=float(depth),
        max_depth_std_mm=depth_std,
        noise_floor_db=series.noise_floor_db,
    )


def series_from_stats(depths_mm, stats: list[SignalStats], modality: str = "PA",
                      noise_floor_db: float | None = None, ref: float = 1.0) -> DepthSeries:
    """Convert per-depth linear ROI statistics into a dB series.

    The noise floor defaults to the deepest acquisition's noise mean,
    expressed against the same reference.
    """
    usable = [(d, st) for d, st in zip(depths_mm, stats) if not st.below_sensitivity]
    if not usable:
        raise ValueError("no depth produced a detectable signal")
    depths = np.array([d for d, _ in usable])
    means = np.array([st.mean for _, st in usable])
    stds = np.array([st.std for _, st in usable])
    if noise_floor_db is None:
        noise_floor_db = float(to_db(usable[-1][1].noise_mean, ref))
    return DepthSeries(modality, depths, to_db(means, ref),
                       std_db=linear_std_to_db(means, stds),
                       noise_floor_db=noise_floor_db)


def synthetic_nirf_series(slope_db_per_mm: float = -0.15, intercept_db: float = 4.41,
                          depths_mm=(2.0, 4.0, 6.0, 8.0, 10.0), noise_db: float = 0.0,
                          noise_floor_db: float = 2.97, seed: int = 0) -> DepthSeries:
    """Toy exponential-decay series for exercising the fit path (no light transport)."""
    depths = np.asarray(depths_mm, dtype=float)
    rng = np.random.default_rng(seed)
    signal = intercept_db + slope_db_per_mm * depths
    if noise_db > 0:
        signal = signal + rng.normal(0.0, noise_db, depths.size)
    std = np.full(depths.size, noise_db) if noise_db > 0 else None
    return DepthSeries("NIRF", depths, signal, std_db=std,
                       noise_floor_db=noise_floor_db)
