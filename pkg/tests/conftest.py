"""Shared fixtures: phantoms are simulated once per session and reused."""

import numpy as np
import pytest

from pauskit.model import Roi
from pauskit.phantoms import (
    diffuse_absorber_doc,
    point_target_doc,
    injected_agent_doc,
    tube_pair_docs,
)
from pauskit.scene import Scene
from pauskit.simulate import PSFModel, synthesize_components, synthesize_volume

NOISE_ROI = Roi(2, 2, 6, 6)


@pytest.fixture(scope="session")
def psf():
    return PSFModel()


@pytest.fixture(scope="session")
def clean_scene():
    """Agent disk at 8 mm, nine wavelengths, nothing else, noiseless."""
    return Scene.from_doc(injected_agent_doc(noise_sigma=0.0, clutter=False,
                                     distractor=False, background=False))


@pytest.fixture(scope="session")
def clean_volume(clean_scene, psf):
    return synthesize_volume(clean_scene, psf)


@pytest.fixture(scope="session")
def full_scene():
    """Everything on: agent, distractor, background, clutter, noise."""
    return Scene.from_doc(injected_agent_doc())


@pytest.fixture(scope="session")
def full_components(full_scene, psf):
    return synthesize_components(full_scene, psf)


@pytest.fixture(scope="session")
def point_scene():
    return Scene.from_doc(point_target_doc())


@pytest.fixture(scope="session")
def point_volume(point_scene, psf):
    return synthesize_volume(point_scene, psf)


@pytest.fixture(scope="session")
def diffuse_scene():
    return Scene.from_doc(diffuse_absorber_doc())


@pytest.fixture(scope="session")
def diffuse_volume(diffuse_scene, psf):
    return synthesize_volume(diffuse_scene, psf)


@pytest.fixture(scope="session")
def tube_volumes(psf):
    agent_doc, ref_doc = tube_pair_docs()
    volumes = {}
    for tag, doc in (("agent", agent_doc), ("reference", ref_doc)):
        scene = Scene.from_doc(doc)
        volumes[tag] = (scene, synthesize_volume(scene, psf))
    return volumes


@pytest.fixture(scope="session")
def full_chain(full_scene, psf):
    """One full processing chain on the everything-on phantom, shared by the
    unmixing tests and the acceptance suite (the fits dominate the cost)."""
    import numpy as np

    from pauskit.compensate import compensate_volume, fit_volume
    from pauskit.declutter import CompressionConfig, declutter_volume
    from pauskit.spectra import synthetic_agent_spectrum
    from pauskit.unmix import agent_weighted_image, ncc_map, sigmoid_weight

    volume = synthesize_volume(full_scene, psf)
    fits = fit_volume(volume, NOISE_ROI, lateral_sigma_mm=psf.sigma_x_mm,
                      coarse_grid=21, threads=4)
    energies = {lam: full_scene.fibers.energy(lam) for lam in volume.wavelengths_nm}
    result = compensate_volume(volume, fits, energies=energies)
    reduced = declutter_volume(result.volume, CompressionConfig(0.25, True))
    stack = reduced.data[:, 0]
    compound = np.abs(stack.sum(axis=0))
    reference = synthetic_agent_spectrum(volume.wavelengths_nm).values
    scores = ncc_map(np.abs(stack), reference)
    weights = sigmoid_weight(scores)
    weighted = agent_weighted_image(compound, weights)
    return {
        "volume": volume, "fits": fits, "compensated": result,
        "reduced": reduced, "stack": stack, "compound": compound,
        "reference": reference, "scores": scores, "weights": weights,
        "weighted": weighted,
    }


def small_demo_doc(seed=5150, noise_sigma=3e-5):
    """Compact three-wavelength scene exercising every pipeline stage quickly."""
    doc = injected_agent_doc(noise_sigma=noise_sigma, seed=seed)
    doc["grid"] = {"nx": 64, "nz": 90, "dx_mm": 0.2, "dz_mm": 0.1,
                   "x0_mm": -6.4, "z0_mm": 0.0}
    lams = [744.0, 795.0, 842.0]
    for absorber in doc["absorbers"]:
        spec = absorber["spectrum"]
        keep = [i for i, w in enumerate(spec["wavelength_nm"]) if w in lams]
        absorber["spectrum"] = {
            "wavelength_nm": [spec["wavelength_nm"][i] for i in keep],
            "value": [spec["value"][i] for i in keep],
            "unit": spec["unit"],
        }
        if absorber["map"].get("x_mm", 0.0) < -4.0:
            absorber["map"]["x_mm"] = -3.0
    for key in ("mu_a", "mu_s_prime"):
        spec = doc["medium"][key]
        keep = [i for i, w in enumerate(spec["wavelength_nm"]) if w in lams]
        doc["medium"][key] = {
            "wavelength_nm": [spec["wavelength_nm"][i] for i in keep],
            "value": [spec["value"][i] for i in keep],
            "unit": spec["unit"],
        }
    fibers = doc["fibers"]
    fibers["x_mm"] = list(np.linspace(-3.2, 3.2, 5)) * 2
    fibers["y_mm"] = [1.0] * 5 + [-1.0] * 5
    fibers["angle_rad"] = [0.0] * 10
    fibers["side"] = ["A"] * 5 + ["B"] * 5
    fibers["pulse_energy_mj"] = {k: v for k, v in fibers["pulse_energy_mj"].items()
                                 if float(k) in lams}
    doc["clutter_scatterers"] = [{"x_mm": -1.5, "z_mm": 2.8, "reflectivity": 1.0}]
    # keep the echo clearly above the stationary background in its region
    doc["surface_absorption"] = 0.6
    for absorber in doc["absorbers"]:
        if absorber["map"].get("kind") == "uniform":
            absorber["map"]["value"] = 0.005
    return doc
