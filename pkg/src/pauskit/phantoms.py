"""Bundled digital phantoms used by the tests, the CLI demos, and the docs."""

from __future__ import annotations

import numpy as np

from .scene import Scene
from .simulate import PSFModel, synthesize_volume
from .spectra import (
    IMAGING_WAVELENGTHS_NM,
    CALIBRATION_WAVELENGTHS_NM,
    synthetic_agent_spectrum,
    synthetic_blood_spectrum,
    synthetic_copper_sulfate_spectrum,
)


def _muscle_medium_doc(wavelengths) -> dict:
    lam = np.asarray(wavelengths, dtype=float)
    mu_a = 0.16 + 0.14 * np.exp(-(lam - 700.0) / 60.0)
    mu_sp = 11.5 - 0.012 * (lam - 700.0)
    return {
        "mu_a": {"wavelength_nm": lam.tolist(), "value": mu_a.tolist(), "unit": "cm^-1"},
        "mu_s_prime": {"wavelength_nm": lam.tolist(), "value": mu_sp.tolist(), "unit": "cm^-1"},
    }


def _milk_medium_doc(wavelengths) -> dict:
    lam = np.asarray(wavelengths, dtype=float)
    mu_a = 0.020 + 5e-5 * (lam - 700.0)
    mu_sp = 7.0 - 0.008 * (lam - 700.0)
    return {
        "mu_a": {"wavelength_nm": lam.tolist(), "value": mu_a.tolist(), "unit": "cm^-1"},
        "mu_s_prime": {"wavelength_nm": lam.tolist(), "value": mu_sp.tolist(), "unit": "cm^-1"},
    }


def _fibers_doc(wavelengths, count=20, aperture_mm=12.8, elevation_mm=1.0) -> dict:
    per_row = count // 2
    xs = np.linspace(-aperture_mm / 2, aperture_mm / 2, per_row)
    lam = np.asarray(wavelengths, dtype=float)
    # smooth per-wavelength pulse-energy variation, peaking near 790 nm
    energy = 0.14 * (1.0 - 0.25 * ((lam - 790.0) / 90.0) ** 2)
    return {
        "x_mm": np.concatenate([xs, xs]).tolist(),
        "y_mm": ([elevation_mm] * per_row + [-elevation_mm] * per_row),
        "angle_rad": [0.0] * count,
        "side": ["A"] * per_row + ["B"] * per_row,
        "pulse_energy_mj": {f"{l:g}": float(e) for l, e in zip(lam, energy)},
    }


def injected_agent_doc(noise_sigma: float = 2e-5, clutter: bool = True,
               distractor: bool = True, background: bool = True,
               seed: int = 20240917) -> dict:
    """Injected-agent phantom: agent bolus at 8 mm depth, nine wavelengths.

    Flags switch off the blood-spectrum distractor, the surface-echo clutter,
    and the diffuse blood background, leaving the bare round-trip scene.
    """
    wavelengths = IMAGING_WAVELENGTHS_NM
    absorbers = [{
        "name": "agent",
        "spectrum": synthetic_agent_spectrum(wavelengths).to_doc(),
        "grueneisen": 1.0,
        "map": {"kind": "disk", "x_mm": 0.0, "z_mm": 8.0, "radius_mm": 0.8, "value": 1.0},
    }]
    if distractor:
        absorbers.append({
            "name": "blood-distractor",
            "spectrum": synthetic_blood_spectrum(wavelengths).to_doc(),
            "grueneisen": 1.0,
            "map": {"kind": "disk", "x_mm": -5.0, "z_mm": 8.0, "radius_mm": 0.8, "value": 1.1},
        })
    if background:
        absorbers.append({
            "name": "blood-background",
            "spectrum": synthetic_blood_spectrum(wavelengths).to_doc(),
            "grueneisen": 1.0,
            "map": {"kind": "uniform", "value": 0.02},
        })
    scatterers = []
    if clutter:
        scatterers = [
            {"x_mm": -5.7, "z_mm": 5.2, "reflectivity": 1.0},
            {"x_mm": -2.6, "z_mm": 6.1, "reflectivity": 0.8},
            {"x_mm": 3.9, "z_mm": 6.9, "reflectivity": 0.9},
        ]
    return {
        "format": "pauskit-scene-v1",
        "grid": {"nx": 128, "nz": 150, "dx_mm": 0.2, "dz_mm": 0.1,
                 "x0_mm": -12.8, "z0_mm": 0.0},
        "fibers": _fibers_doc(wavelengths),
        "medium": _muscle_medium_doc(wavelengths),
        "absorbers": absorbers,
        "surface_absorption": 0.05 if clutter else 0.0,
        "clutter_scatterers": scatterers,
        "noise_sigma": noise_sigma,
        "seed": seed,
    }


def point_target_doc(depth_mm: float = 8.0, wavelengths=(795.0,),
                     mu_a_cm: float = 0.15, mu_s_prime_cm: float = 10.0,
                     noise_sigma: float = 0.0, seed: int = 7) -> dict:
    """Single-pixel absorber: the sub-resolution worst case for share fitting."""
    lam = np.asarray(wavelengths, dtype=float)
    return {
        "format": "pauskit-scene-v1",
        "grid": {"nx": 96, "nz": 120, "dx_mm": 0.2, "dz_mm": 0.1,
                 "x0_mm": -9.6, "z0_mm": 0.0},
        "fibers": _fibers_doc(lam),
        "medium": {
            "mu_a": {"wavelength_nm": lam.tolist(),
                     "value": [mu_a_cm] * lam.size, "unit": "cm^-1"},
            "mu_s_prime": {"wavelength_nm": lam.tolist(),
                           "value": [mu_s_prime_cm] * lam.size, "unit": "cm^-1"},
        },
        "absorbers": [{
            "name": "target",
            "spectrum": {"wavelength_nm": lam.tolist(),
                         "value": [1.0] * lam.size, "unit": "cm^-1"},
            "grueneisen": 1.0,
            "map": {"kind": "point", "x_mm": 0.0, "z_mm": depth_mm, "value": 1.0},
        }],
        "surface_absorption": 0.0,
        "clutter_scatterers": [],
        "noise_sigma": noise_sigma,
        "seed": seed,
    }


def diffuse_absorber_doc(wavelengths=(795.0,), mu_a_cm: float = 0.15,
                         mu_s_prime_cm: float = 10.0, noise_sigma: float = 0.0,
                         seed: int = 23) -> dict:
    """Uniform absorber throughout the medium: the optical-recovery workhorse.

    Distributed signal is the regime the fiber-share fit is built for (every
    pixel's envelope reflects the fluence at that pixel); compact isolated
    targets carry a resolution-cell bias documented in the tests.
    """
    doc = point_target_doc(wavelengths=wavelengths, mu_a_cm=mu_a_cm,
                           mu_s_prime_cm=mu_s_prime_cm, noise_sigma=noise_sigma,
                           seed=seed)
    doc["absorbers"] = [{
        "name": "diffuse",
        "spectrum": {"wavelength_nm": list(np.asarray(wavelengths, dtype=float)),
                     "value": [0.05] * len(wavelengths), "unit": "cm^-1"},
        "grueneisen": 1.0,
        "map": {"kind": "uniform", "value": 1.0},
    }]
    return doc


def tube_doc(spectrum_doc: dict, name: str, depth_mm: float = 8.0,
             radius_mm: float = 0.5, seed: int = 11) -> dict:
    """One calibration tube in the scattering bath, imaged at 35 wavelengths."""
    wavelengths = CALIBRATION_WAVELENGTHS_NM
    return {
        "format": "pauskit-scene-v1",
        "grid": {"nx": 96, "nz": 120, "dx_mm": 0.2, "dz_mm": 0.1,
                 "x0_mm": -9.6, "z0_mm": 0.0},
        "fibers": _fibers_doc(wavelengths),
        "medium": _milk_medium_doc(wavelengths),
        "absorbers": [{
            "name": name,
            "spectrum": spectrum_doc,
            "grueneisen": 1.0,
            "map": {"kind": "disk", "x_mm": 0.0, "z_mm": depth_mm,
                    "radius_mm": radius_mm, "value": 1.0},
        }],
        "surface_absorption": 0.0,
        "clutter_scatterers": [],
        "noise_sigma": 0.0,
        "seed": seed,
    }


def tube_pair_docs(agent_spectrum=None, reference_spectrum=None) -> tuple[dict, dict]:
    """Agent and reference tubes at the identical position in the identical bath."""
    agent = agent_spectrum or synthetic_agent_spectrum(CALIBRATION_WAVELENGTHS_NM)
    ref = reference_spectrum or synthetic_copper_sulfate_spectrum(CALIBRATION_WAVELENGTHS_NM)
    return (tube_doc(agent.to_doc(), "agent-tube"),
            tube_doc(ref.to_doc(), "reference-tube"))


def depth_target_doc(depth_mm: float, wavelength_nm: float = 795.0,
                     half_width_mm: float = 3.0, noise_sigma: float = 1e-5,
                     seed: int = 31) -> dict:
    """Thin absorbing slab at a given depth for sensitivity-vs-depth studies."""
    lam = [float(wavelength_nm)]
    return {
        "format": "pauskit-scene-v1",
        "grid": {"nx": 96, "nz": 160, "dx_mm": 0.2, "dz_mm": 0.1,
                 "x0_mm": -9.6, "z0_mm": 0.0},
        "fibers": _fibers_doc(lam),
        "medium": _muscle_medium_doc(lam),
        "absorbers": [{
            "name": "slab",
            "spectrum": {"wavelength_nm": lam, "value": [1.0], "unit": "cm^-1"},
            "grueneisen": 1.0,
            "map": {"kind": "rect", "x_mm": 0.0, "z_mm": depth_mm,
                    "half_width_mm": half_width_mm, "half_height_mm": 0.2, "value": 1.0},
        }],
        "surface_absorption": 0.0,
        "clutter_scatterers": [],
        "noise_sigma": noise_sigma,
        "seed": seed + int(depth_mm * 10),
    }


def sigma_for_snr(doc: dict, psf: PSFModel, snr_db: float,
                  wavelength_nm: float | None = None,
                  reference: str = "per_fiber",
                  depth_mm: float | None = None) -> float:
    """Per-quadrature noise std giving the requested peak envelope SNR.

    ``reference="per_fiber"`` measures SNR on the single-fiber images the
    share fit consumes (peak per-fiber envelope over the mean noise envelope
    sigma * sqrt(pi/2)); ``"fiber_sum"`` measures it on the coherent N-fiber
    sum, whose noise mean carries the extra sqrt(N). With ``depth_mm`` set,
    the peak is taken within the pixel row nearest that depth, anchoring the
    SNR at the object depth rather than at the brightest shallow pixel.
    """
    quiet = dict(doc)
    quiet["noise_sigma"] = 0.0
    scene = Scene.from_doc(quiet)
    volume = synthesize_volume(scene, psf)
    j = 0 if wavelength_nm is None else volume.wavelength_index(wavelength_nm)
    if reference == "per_fiber":
        stack = np.abs(volume.data[j])
        crowd = 1.0
    elif reference == "fiber_sum":
        stack = np.abs(volume.fiber_sum()[j])
        crowd = np.sqrt(scene.fibers.count)
    else:
        raise ValueError(f"unknown SNR reference {reference!r}")
    if depth_mm is not None:
        iz = scene.grid.nearest_index(0.0, depth_mm)[1]
        stack = stack[..., iz, :]
    peak = float(stack.max())
    target_mean = peak / 10.0 ** (snr_db / 20.0)
    return target_mean / (crowd * np.sqrt(np.pi / 2.0))
