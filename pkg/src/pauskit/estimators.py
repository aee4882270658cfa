"""sklearn-style estimator facades over the processing chain.

Each stage is a transformer over IQ volumes, so the whole chain composes in a
scikit-learn ``Pipeline`` and plays with ``get_params``/``set_params``
tooling. The numerical work lives in :mod:`compensate`, :mod:`declutter` and
:mod:`unmix`; these classes only manage fitted state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .compensate import DEFAULT_BOUNDS, compensate_volume, fit_volume
from .declutter import CompressionConfig, declutter_volume
from .model import Roi
from .simulate import IQVolume
from .unmix import agent_weighted_image, ncc_map, sigmoid_weight


class FluenceCompensator(BaseEstimator, TransformerMixin):
    """Learns per-wavelength optical properties, divides out the fluence.

    ``fit`` estimates (mu_eff, mu_s') per wavelength from the fiber-share
    variation; ``transform`` returns the per-fiber compensated volume.
    Fitted state: ``fits_``, ``mu_eff_``, ``mu_s_prime_``.
    """

    def __init__(self, noise_roi: Roi = Roi(0, 0), min_depth_mm: float = 2.0,
                 bounds=DEFAULT_BOUNDS, coarse_grid: int = 41,
                 rel_step_tol: float = 1e-4, max_refine_evals: int = 500,
                 lateral_sigma_mm: float | None = None,
                 energies: dict | None = None, threads: int = 1):
        self.noise_roi = noise_roi
        self.min_depth_mm = min_depth_mm
        self.bounds = bounds
        self.coarse_grid = coarse_grid
        self.rel_step_tol = rel_step_tol
        self.max_refine_evals = max_refine_evals
        self.lateral_sigma_mm = lateral_sigma_mm
        self.energies = energies
        self.threads = threads

    def fit(self, volume: IQVolume, y=None):
        fits = fit_volume(volume, self.noise_roi, self.min_depth_mm, self.bounds,
                          self.coarse_grid, self.rel_step_tol,
                          self.max_refine_evals,
                          lateral_sigma_mm=self.lateral_sigma_mm,
                          threads=self.threads)
        if any(f is None for f in fits):
            missing = [lam for lam, f in zip(volume.wavelengths_nm, fits) if f is None]
            raise ValueError(f"no signal to fit at {missing} nm")
        self.fits_ = tuple(fits)
        self.mu_eff_ = np.array([f.mu_eff_cm for f in fits])
        self.mu_s_prime_ = np.array([f.mu_s_prime_cm for f in fits])
        return self

    def transform(self, volume: IQVolume) -> IQVolume:
        if not hasattr(self, "fits_"):
            raise NotFittedError("call fit before transform")
        result = compensate_volume(volume, self.fits_, energies=self.energies)
        return result.volume


class CompressedAverager(BaseEstimator, TransformerMixin):
    """Stateless fiber-axis reduction by p-th-root compressed averaging."""

    def __init__(self, exponent: float = 0.25, enabled: bool = True):
        self.exponent = exponent
        self.enabled = enabled

    def fit(self, volume: IQVolume, y=None):
        return self

    def transform(self, volume: IQVolume) -> IQVolume:
        return declutter_volume(volume, CompressionConfig(self.exponent, self.enabled))


class AgentSpectrumWeighter(BaseEstimator, TransformerMixin):
    """Compounds a fiber-reduced volume over wavelengths and weights it by the
    sigmoid-sharpened spectral correlation against a reference spectrum."""

    def __init__(self, reference_values=(), slope: float = 300.0, midpoint: float = 0.978):
        self.reference_values = reference_values
        self.slope = slope
        self.midpoint = midpoint

    def fit(self, volume: IQVolume, y=None):
        return self

    def transform(self, volume: IQVolume) -> np.ndarray:
        stack = volume.data[:, 0] if volume.n_fibers == 1 else volume.fiber_sum()
        scores = ncc_map(np.abs(stack), np.asarray(self.reference_values, dtype=float))
        weights = sigmoid_weight(scores, self.slope, self.midpoint)
        compound = np.abs(stack.sum(axis=0))
        return agent_weighted_image(compound, weights)
