"""End-to-end pipeline: simulate, compensate, suppress clutter, weight by
spectrum, emit figures and a machine-readable report.

Every stage's volume is persisted and reloaded before the next stage consumes
it, so re-running a stage from its persisted input reproduces the single-shot
pipeline byte for byte. Wall-clock timings go to a separate ``timings.json``
so ``report.json`` stays deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .compensate import compensate_volume, fit_volume, pairwise_reduce
from .declutter import CompressionConfig, declutter_volume
from .errors import PauskitError
from .figures import emit_figure, write_rgb_png
from .model import Roi
from .scene import Scene, canonical_json, load_scene, restrict_wavelengths
from .simulate import PSFModel, bmode_proxy, synthesize_volume
from .spectra import SpectrumTable, synthetic_agent_spectrum
from .unmix import agent_weighted_image, ncc_map, overlay, sigmoid_weight
from .volume_io import file_sha256, load_volume, save_volume


@dataclass
class PipelineConfig:
    """Everything a full run needs; serializable to the run-config JSON."""

    scene_path: str
    output_dir: str
    psf: PSFModel = field(default_factory=PSFModel)
    wavelengths: tuple[float, ...] | None = None  # None = all in the scene
    compensate: bool = True
    declutter_exponent: float | None = 0.25
    unmix_slope: float = 300.0
    unmix_midpoint: float = 0.978
    reference_spectrum_path: str | None = None
    noise_roi: Roi = field(default_factory=lambda: Roi(2, 2, 6, 6))
    min_depth_mm: float = 2.0
    fit_coarse_grid: int = 41
    seed: int | None = None
    threads: int = 1
    figure_floor_db: float = -40.0

    def to_doc(self) -> dict:
        return {
            "scene": self.scene_path,
            "output_dir": self.output_dir,
            "psf": self.psf.to_doc(),
            "wavelengths": None if self.wavelengths is None else list(self.wavelengths),
            "compensate": self.compensate,
            "declutter": "off" if self.declutter_exponent is None else self.declutter_exponent,
            "unmix": {"slope": self.unmix_slope, "midpoint": self.unmix_midpoint,
                      "reference_csv": self.reference_spectrum_path},
            "noise_roi": self.noise_roi.to_doc(),
            "min_depth_mm": self.min_depth_mm,
            "fit_coarse_grid": self.fit_coarse_grid,
            "seed": self.seed,
            "threads": self.threads,
            "figure_floor_db": self.figure_floor_db,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PipelineConfig":
        declutter = doc.get("declutter", 0.25)
        unmix_doc = doc.get("unmix", {})
        wavelengths = doc.get("wavelengths")
        return cls(
            scene_path=doc["scene"],
            output_dir=doc["output_dir"],
            psf=PSFModel.from_doc(doc.get("psf", {})),
            wavelengths=None if wavelengths is None else tuple(wavelengths),
            compensate=doc.get("compensate", True),
            declutter_exponent=None if declutter in ("off", None) else float(declutter),
            unmix_slope=unmix_doc.get("slope", 300.0),
            unmix_midpoint=unmix_doc.get("midpoint", 0.978),
            reference_spectrum_path=unmix_doc.get("reference_csv"),
            noise_roi=Roi.from_doc(doc.get("noise_roi", {"ix0": 2, "iz0": 2, "nx": 6, "nz": 6})),
            min_depth_mm=doc.get("min_depth_mm", 2.0),
            fit_coarse_grid=doc.get("fit_coarse_grid", 41),
            seed=doc.get("seed"),
            threads=doc.get("threads", 1),
            figure_floor_db=doc.get("figure_floor_db", -40.0),
        )

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_doc(json.load(fh))

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_doc()).encode()).hexdigest()


def clutter_region_mask(scene: Scene, halfwidth_mm: float = 1.5,
                        halfheight_mm: float = 0.8) -> np.ndarray:
    """Boxes around the double-depth echo positions of the scene's scatterers."""
    mask = np.zeros((scene.grid.nz, scene.grid.nx), dtype=bool)
    x = scene.grid.x_centers()
    z = scene.grid.z_centers()
    for scat in scene.scatterers:
        cols = np.abs(x - scat.x_mm) <= halfwidth_mm
        rows = np.abs(z - 2.0 * scat.z_mm) <= halfheight_mm
        mask |= rows[:, None] & cols[None, :]
    return mask


def _spectrum_figure(path, wavelengths, compensated, uncompensated, reference):
    def normalized(v):
        v = np.asarray(v, dtype=float)
        return v / v.max() if v.max() > 0 else v

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(wavelengths, normalized(reference), "k-", label="reference")
    ax.plot(wavelengths, normalized(compensated), "ro-", label="corrected")
    ax.plot(wavelengths, normalized(uncompensated), "b^--", label="original")
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("normalized absorption")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute the full chain; returns the report dict (also written to disk).

    On a stage failure the partial outputs stay on disk and the report marks
    the failed stage before the exception propagates.
    """
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    volumes_dir = os.path.join(out, "volumes")
    images_dir = os.path.join(out, "images")
    os.makedirs(volumes_dir, exist_ok=True)
    os.makedirs(images_dir, exist_ok=True)

    scene = load_scene(config.scene_path)
    if config.wavelengths is not None or config.seed is not None:
        doc = scene.to_doc()
        if config.wavelengths is not None:
            doc = restrict_wavelengths(doc, config.wavelengths)
        if config.seed is not None:
            doc["seed"] = int(config.seed)
        scene = Scene.from_doc(doc)
    if len(scene.wavelengths_nm) < 2:
        raise PauskitError("spectral weighting needs at least two wavelengths")

    report = {
        "version": __version__,
        "config": config.to_doc(),
        "config_hash": config.hash(),
        "scene_hash": scene.hash(),
        "stages": {},
    }
    timings = {}

    def record(stage, path):
        rel = os.path.relpath(path, out)
        report["stages"].setdefault(stage, {})[rel] = file_sha256(path)

    def run_stage(name, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            report["failed_stage"] = name
            report["error"] = str(exc)
            _write_report(out, report, timings)
            raise
        timings[name] = time.perf_counter() - start
        return result

    provenance = {"scene_hash": scene.hash(), "config_hash": config.hash()}

    # --- simulate ---------------------------------------------------------
    def stage_simulate():
        volume = synthesize_volume(scene, config.psf, threads=config.threads)
        volume = volume.with_data(volume.data, config_hash=config.hash())
        path = save_volume(volume, os.path.join(volumes_dir, "raw.iq"))
        record("simulate", path)
        record("simulate", path + ".json")
        return load_volume(path, expected_scene_hash=scene.hash())

    raw = run_stage("simulate", stage_simulate)

    # --- compensate -------------------------------------------------------
    energies = {lam: scene.fibers.energy(lam) for lam in raw.wavelengths_nm}

    def stage_compensate():
        if not config.compensate:
            return raw, None
        fits = fit_volume(raw, config.noise_roi, config.min_depth_mm,
                          coarse_grid=config.fit_coarse_grid,
                          lateral_sigma_mm=config.psf.sigma_x_mm,
                          threads=config.threads)
        if any(f is None for f in fits):
            missing = [lam for lam, f in zip(raw.wavelengths_nm, fits) if f is None]
            raise PauskitError(f"no signal to fit at {missing} nm")
        result = compensate_volume(raw, fits, energies=energies)
        path = save_volume(result.volume, os.path.join(volumes_dir, "compensated.iq"))
        record("compensate", path)
        record("compensate", path + ".json")
        fit_path = os.path.join(out, "fit_report.json")
        with open(fit_path, "w") as fh:
            json.dump({"fits": [f.to_doc() for f in fits]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        record("compensate", fit_path)
        report["fits"] = [f.to_doc() for f in fits]
        return load_volume(path), fits

    compensated, fits = run_stage("compensate", stage_compensate)

    # --- fiber reduction (plain and clutter-suppressed) --------------------
    def stage_reduce():
        plain = declutter_volume(compensated, CompressionConfig(1.0, True))
        plain_path = save_volume(plain, os.path.join(volumes_dir, "reduced_plain.iq"))
        record("reduce", plain_path)
        record("reduce", plain_path + ".json")
        if config.declutter_exponent is not None:
            suppressed = declutter_volume(
                compensated, CompressionConfig(config.declutter_exponent, True))
            ca_path = save_volume(suppressed, os.path.join(volumes_dir, "reduced_ca.iq"))
            record("reduce", ca_path)
            record("reduce", ca_path + ".json")
            return load_volume(plain_path), load_volume(ca_path)
        return load_volume(plain_path), None

    plain_reduced, ca_reduced = run_stage("reduce", stage_reduce)
    working = ca_reduced if ca_reduced is not None else plain_reduced

    mask = clutter_region_mask(scene)
    if mask.any():
        plain_energy = float((np.abs(plain_reduced.data[:, 0])[:, mask] ** 2).sum())
        report["clutter_region_energy"] = {"plain_average": plain_energy}
        if ca_reduced is not None:
            ca_energy = float((np.abs(ca_reduced.data[:, 0])[:, mask] ** 2).sum())
            report["clutter_region_energy"]["compressed_average"] = ca_energy
            report["clutter_region_energy"]["ratio_db"] = (
                10.0 * np.log10(ca_energy / plain_energy) if plain_energy > 0 else None)

    # --- compound + weighting ----------------------------------------------
    if config.reference_spectrum_path:
        reference = SpectrumTable.from_csv(config.reference_spectrum_path)
    else:
        reference = synthetic_agent_spectrum()
    ref_values = reference.sample(np.asarray(working.wavelengths_nm))

    def stage_unmix():
        floor = config.figure_floor_db
        compound_plain = pairwise_reduce(list(plain_reduced.data[:, 0]))
        emit_figure(np.abs(compound_plain), os.path.join(images_dir, "compound_fc.png"),
                    floor_db=floor, colormap="hot", extra=provenance)
        compound = compound_plain
        if ca_reduced is not None:
            compound = pairwise_reduce(list(ca_reduced.data[:, 0]))
            emit_figure(np.abs(compound), os.path.join(images_dir, "compound_fc_ca.png"),
                        floor_db=floor, colormap="hot", extra=provenance)
        stack = working.data[:, 0]
        scores = ncc_map(np.abs(stack), ref_values)
        weights = sigmoid_weight(scores, config.unmix_slope, config.unmix_midpoint)
        weighted = agent_weighted_image(np.abs(compound), weights)
        emit_figure(scores, os.path.join(images_dir, "ncc_map.png"),
                    floor_db=-6.0, ref=1.0, extra=provenance)
        emit_figure(weighted, os.path.join(images_dir, "weighted.png"),
                    floor_db=floor, colormap="hot", extra=provenance)
        anatomy = bmode_proxy(scene, config.psf)
        write_rgb_png(overlay(weighted, anatomy, floor_db=floor),
                      os.path.join(images_dir, "overlay.png"),
                      extra={**provenance, "floor_db": floor, "colormap": "hot"})

        peak = np.unravel_index(np.argmax(weighted), weighted.shape)
        spectrum_fc = np.abs(stack[:, peak[0], peak[1]])
        spectrum_raw = np.abs(raw.fiber_sum()[:, peak[0], peak[1]])
        spectrum_path = os.path.join(images_dir, "spectrum.png")
        _spectrum_figure(spectrum_path, working.wavelengths_nm,
                         spectrum_fc, spectrum_raw, ref_values)
        with open(spectrum_path + ".json", "w") as fh:
            json.dump({**provenance, "pixel": [int(peak[0]), int(peak[1])]},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name in ("compound_fc.png", "compound_fc_ca.png", "ncc_map.png",
                     "weighted.png", "overlay.png", "spectrum.png"):
            path = os.path.join(images_dir, name)
            if os.path.exists(path):
                record("unmix", path)
                record("unmix", path + ".json")
        report["weighted_peak_pixel"] = [int(peak[0]), int(peak[1])]
        return weighted

    run_stage("unmix", stage_unmix)

    _write_report(out, report, timings)
    record_path = os.path.join(out, "report.json")
    return {"report_path": record_path, **report}


def _write_report(out_dir: str, report: dict, timings: dict):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        json.dump({"seconds": timings}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def verify_run(out_dir: str) -> dict:
    """Re-hash every artifact recorded in a run report; returns the summary."""
    with open(os.path.join(out_dir, "report.json")) as fh:
        report = json.load(fh)
    mismatches = []
    for stage, artifacts in report.get("stages", {}).items():
        for rel, digest in artifacts.items():
            path = os.path.join(out_dir, rel)
            if not os.path.exists(path):
                mismatches.append((stage, rel, "missing"))
            elif file_sha256(path) != digest:
                mismatches.append((stage, rel, "checksum"))
    return {"report": report, "mismatches": mismatches}
