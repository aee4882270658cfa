"""Reference-absorber calibration: recover an agent's heat-generating
absorption spectrum from paired tube measurements.

Two tubes imaged at the same location in the same scattering bath see the
same fluence, so the ratio of their background-subtracted envelopes equals
the ratio of their absorption coefficients; multiplying by the reference
absorber's known spectrum yields the agent spectrum, with the relative
measurement errors adding in quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .model import Roi
from .simulate import IQVolume
from .spectra import SpectrumTable


def roi_magnitude(image: np.ndarray, roi: Roi, noise_roi: Roi) -> tuple[float, float, bool]:
    """Background-subtracted mean envelope over a pixel box.

    Returns (magnitude, noise level, clamped): negative differences clamp to
    zero with the flag set. The two boxes must not overlap.
    """
    if roi.overlaps(noise_roi):
        raise ValueError("signal and noise ROIs overlap")
    mags = np.abs(np.asarray(image))
    nz, nx = mags.shape
    for box in (roi, noise_roi):
        if not (0 <= box.ix0 and box.ix0 + box.nx <= nx
                and 0 <= box.iz0 and box.iz0 + box.nz <= nz):
            raise ValueError("ROI extends outside the image")
    signal = float(roi.extract(mags).mean())
    noise = float(noise_roi.extract(mags).mean())
    diff = signal - noise
    clamped = diff < 0
    return (0.0 if clamped else diff, noise, clamped)


@dataclass(frozen=True)
class TubePair:
    """Per-wavelength envelopes of the agent and reference tubes."""

    wavelengths_nm: np.ndarray
    pa_agent: np.ndarray
    pa_ref: np.ndarray
    std_agent: np.ndarray
    std_ref: np.ndarray
    alpha_ref: SpectrumTable

    def __post_init__(self):
        for name in ("wavelengths_nm", "pa_agent", "pa_ref", "std_agent", "std_ref"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.wavelengths_nm.size
        for name in ("pa_agent", "pa_ref", "std_agent", "std_ref"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} length does not match the wavelength axis")
        if np.any(self.std_agent < 0) or np.any(self.std_ref < 0):
            raise ValueError("standard deviations must be nonnegative")


def measure_tube_pair(volume_agent: IQVolume, volume_ref: IQVolume, roi: Roi,
                      noise_roi: Roi, alpha_ref: SpectrumTable,
                      pool_noise_std: bool = True) -> TubePair:
    """Extract per-wavelength tube envelopes from two simulated/acquired volumes.

    The envelope error is the std of the noise-box pixel values pooled across
    all wavelengths (one scalar per tube) unless ``pool_noise_std`` is False,
    in which case it is computed per wavelength.
    """
    if volume_agent.wavelengths_nm != volume_ref.wavelengths_nm:
        raise CalibrationError("tube volumes were not acquired at the same wavelengths")
    lams = np.asarray(volume_agent.wavelengths_nm)
    pa, noise_values = {}, {}
    for tag, volume in (("agent", volume_agent), ("ref", volume_ref)):
        summed = np.abs(volume.fiber_sum())
        pa[tag] = np.array([roi_magnitude(summed[j], roi, noise_roi)[0]
                            for j in range(lams.size)])
        noise_values[tag] = np.stack([noise_roi.extract(summed[j])
                                      for j in range(lams.size)])
    if pool_noise_std:
        std_agent = np.full(lams.size, noise_values["agent"].std())
        std_ref = np.full(lams.size, noise_values["ref"].std())
    else:
        std_agent = noise_values["agent"].std(axis=(1, 2))
        std_ref = noise_values["ref"].std(axis=(1, 2))
    return TubePair(lams, pa["agent"], pa["ref"], std_agent, std_ref, alpha_ref)


def agent_spectrum(pair: TubePair) -> np.ndarray:
    """Agent absorption per wavelength: envelope ratio times the reference spectrum."""
    bad = pair.pa_ref <= 0
    if np.any(bad):
        lam = pair.wavelengths_nm[bad][0]
        raise CalibrationError(f"reference envelope is not positive at {lam:g} nm")
    return pair.pa_agent / pair.pa_ref * pair.alpha_ref.sample(pair.wavelengths_nm)


def agent_spectrum_std(pair: TubePair, alpha_agent: np.ndarray) -> np.ndarray:
    """First-order error: relative envelope errors added in quadrature."""
    if np.any(pair.pa_agent == 0) or np.any(pair.pa_ref == 0):
        raise CalibrationError("zero envelope magnitude; cannot propagate errors")
    rel_sq = (pair.std_agent / pair.pa_agent) ** 2 + (pair.std_ref / pair.pa_ref) ** 2
    return np.asarray(alpha_agent) * np.sqrt(rel_sq)


@dataclass(frozen=True)
class PolynomialModel:
    """Least-squares polynomial on a [-1, 1]-scaled wavelength axis."""

    coefficients: tuple[float, ...]    # in the scaled basis
    domain: tuple[float, float]        # wavelength range mapped onto the window
    window: tuple[float, float]
    rms_residual: float

    def evaluate(self, wavelength_nm):
        poly = np.polynomial.Polynomial(np.asarray(self.coefficients),
                                        domain=self.domain, window=self.window)
        return poly(np.asarray(wavelength_nm, dtype=float))

    def to_doc(self) -> dict:
        return {
            "basis": "power series on scaled axis",
            "coefficients": list(self.coefficients),
            "domain_nm": list(self.domain),
            "window": list(self.window),
            "rms_residual": self.rms_residual,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PolynomialModel":
        return cls(tuple(doc["coefficients"]), tuple(doc["domain_nm"]),
                   tuple(doc["window"]), doc["rms_residual"])


def smooth_spectrum(wavelengths_nm, values, order: int = 9) -> PolynomialModel:
    """Fit a smoothing polynomial on a conditioned (scaled) wavelength axis."""
    lam = np.asarray(wavelengths_nm, dtype=float)
    vals = np.asarray(values, dtype=float)
    if lam.size <= order:
        raise ValueError(f"need more than {order} points for an order-{order} fit")
    poly = np.polynomial.Polynomial.fit(lam, vals, deg=order)
    residual = vals - poly(lam)
    return PolynomialModel(
        coefficients=tuple(float(c) for c in poly.coef),
        domain=(float(poly.domain[0]), float(poly.domain[1])),
        window=(float(poly.window[0]), float(poly.window[1])),
        rms_residual=float(np.sqrt(np.mean(residual ** 2))),
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Recovered agent spectrum with errors, its polynomial smoothing, and the
    radiative remainder when a total-absorption table is supplied."""

    spectrum: SpectrumTable
    poly: PolynomialModel
    radiative: SpectrumTable | None = None


def calibrate_agent(pair: TubePair, order: int = 9,
                    total_spectrum: SpectrumTable | None = None) -> CalibrationResult:
    """Full calibration: ratio spectrum, error propagation, polynomial smoothing."""
    values = agent_spectrum(pair)
    std = agent_spectrum_std(pair, values)
    spectrum = SpectrumTable(pair.wavelengths_nm, values, std=std,
                             unit=pair.alpha_ref.unit)
    poly = smooth_spectrum(pair.wavelengths_nm, values, order)
    radiative = None
    if total_spectrum is not None:
        total = total_spectrum.sample(pair.wavelengths_nm)
        radiative = SpectrumTable(pair.wavelengths_nm, total - values,
                                  unit=total_spectrum.unit)
    return CalibrationResult(spectrum, poly, radiative)
