"""Digital phantom: absorber maps, clutter scatterers, JSON document + hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .model import FiberArray, Grid, MediumOptics
from .spectra import SpectrumTable


def render_map(grid: Grid, spec) -> np.ndarray:
    """Render a concentration-map document onto the grid.

    ``spec`` is either a list of primitives or a single primitive dict with a
    ``kind`` of ``disk``, ``rect``, ``uniform``, ``point`` or ``array``.
    Primitives add together.
    """
    if isinstance(spec, list):
        out = np.zeros((grid.nz, grid.nx))
        for item in spec:
            out += render_map(grid, item)
        return out
    kind = spec["kind"]
    if kind == "array":
        arr = np.asarray(spec["values"], dtype=float)
        if arr.shape != (grid.nz, grid.nx):
            raise ValueError(f"array map shape {arr.shape} != grid ({grid.nz}, {grid.nx})")
        return arr.copy()
    value = float(spec.get("value", 1.0))
    out = np.zeros((grid.nz, grid.nx))
    if kind == "uniform":
        out[:] = value
    elif kind == "point":
        ix, iz = grid.nearest_index(spec["x_mm"], spec["z_mm"])
        out[iz, ix] = value
    elif kind == "disk":
        xx, zz = np.meshgrid(grid.x_centers(), grid.z_centers())
        r2 = (xx - spec["x_mm"]) ** 2 + (zz - spec["z_mm"]) ** 2
        out[r2 <= spec["radius_mm"] ** 2] = value
    elif kind == "rect":
        xx, zz = np.meshgrid(grid.x_centers(), grid.z_centers())
        inside = ((np.abs(xx - spec["x_mm"]) <= spec["half_width_mm"])
                  & (np.abs(zz - spec["z_mm"]) <= spec["half_height_mm"]))
        out[inside] = value
    else:
        raise ValueError(f"unknown map primitive kind {kind!r}")
    return out


@dataclass(frozen=True)
class Absorber:
    """Chromophore with a unit-concentration absorption spectrum and a map."""

    name: str
    spectrum: SpectrumTable
    concentration: np.ndarray  # (nz, nx), dimensionless, >= 0
    grueneisen: float = 1.0
    map_doc: object = None     # original primitive spec, kept for serialization

    def __post_init__(self):
        conc = np.asarray(self.concentration, dtype=float)
        object.__setattr__(self, "concentration", conc)
        if np.any(conc < 0):
            raise ValueError("concentration map must be nonnegative")

    def mu_a_map(self, wavelength_nm: float) -> np.ndarray:
        """Absorber contribution to mu_a at this wavelength (cm^-1 map)."""
        return self.concentration * self.spectrum.sample(wavelength_nm)


@dataclass(frozen=True)
class ClutterScatterer:
    """Acoustic heterogeneity echoing the surface-generated ultrasound."""

    x_mm: float
    z_mm: float
    reflectivity: float

    def __post_init__(self):
        if self.reflectivity < 0:
            raise ValueError("reflectivity must be nonnegative")


@dataclass(frozen=True)
class Scene:
    """Complete digital phantom shared by the simulator and the inverse chain."""

    grid: Grid
    fibers: FiberArray
    medium: MediumOptics
    absorbers: tuple[Absorber, ...]
    surface_absorption: float = 0.0
    scatterers: tuple[ClutterScatterer, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.surface_absorption < 0:
            raise ValueError("surface_absorption must be nonnegative")
        for absorber in self.absorbers:
            if absorber.concentration.shape != (self.grid.nz, self.grid.nx):
                raise ValueError(f"absorber {absorber.name!r} map does not match the grid")

    @property
    def wavelengths_nm(self) -> np.ndarray:
        return self.medium.mu_a.wavelengths_nm

    def total_mu_a_map(self, wavelength_nm: float) -> np.ndarray:
        """Grueneisen-weighted absorber mu_a summed over chromophores (cm^-1 map)."""
        out = np.zeros((self.grid.nz, self.grid.nx))
        for absorber in self.absorbers:
            out += absorber.grueneisen * absorber.mu_a_map(wavelength_nm)
        return out

    def to_doc(self) -> dict:
        absorbers = []
        for a in self.absorbers:
            map_doc = a.map_doc
            if map_doc is None:
                map_doc = {"kind": "array",
                           "values": [[float(v) for v in row] for row in a.concentration]}
            absorbers.append({
                "name": a.name,
                "spectrum": a.spectrum.to_doc(),
                "grueneisen": float(a.grueneisen),
                "map": map_doc,
            })
        return {
            "format": "pauskit-scene-v1",
            "grid": self.grid.to_doc(),
            "fibers": self.fibers.to_doc(),
            "medium": self.medium.to_doc(),
            "absorbers": absorbers,
            "surface_absorption": float(self.surface_absorption),
            "clutter_scatterers": [
                {"x_mm": s.x_mm, "z_mm": s.z_mm, "reflectivity": s.reflectivity}
                for s in self.scatterers
            ],
            "noise_sigma": float(self.noise_sigma),
            "seed": int(self.seed),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Scene":
        if doc.get("format") != "pauskit-scene-v1":
            raise ValueError("not a pauskit scene document")
        grid = Grid.from_doc(doc["grid"])
        absorbers = tuple(
            Absorber(
                name=a["name"],
                spectrum=SpectrumTable.from_doc(a["spectrum"]),
                concentration=render_map(grid, a["map"]),
                grueneisen=a.get("grueneisen", 1.0),
                map_doc=a["map"],
            )
            for a in doc.get("absorbers", [])
        )
        return cls(
            grid=grid,
            fibers=FiberArray.from_doc(doc["fibers"]),
            medium=MediumOptics.from_doc(doc["medium"]),
            absorbers=absorbers,
            surface_absorption=doc.get("surface_absorption", 0.0),
            scatterers=tuple(
                ClutterScatterer(s["x_mm"], s["z_mm"], s["reflectivity"])
                for s in doc.get("clutter_scatterers", [])
            ),
            noise_sigma=doc.get("noise_sigma", 0.0),
            seed=doc.get("seed", 0),
        )

    def hash(self) -> str:
        return scene_hash(self.to_doc())


def canonical_json(doc: dict) -> str:
    """Deterministic JSON encoding used for hashing and persisted documents."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scene_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def restrict_wavelengths(doc: dict, wavelengths) -> dict:
    """Scene document restricted to a wavelength subset.

    Spectral tables are resampled at the requested wavelengths (which must
    lie inside every table's range); pulse energies are filtered.
    """
    lams = sorted(float(w) for w in wavelengths)
    if not lams:
        raise ValueError("need at least one wavelength")
    out = json.loads(canonical_json(doc))

    def resample(table_doc):
        table = SpectrumTable.from_doc(table_doc)
        values = table.sample(np.asarray(lams))
        new = {"wavelength_nm": lams, "value": [float(v) for v in values],
               "unit": table.unit}
        if table.std is not None:
            new["std"] = [float(v) for v in
                          np.interp(lams, table.wavelengths_nm, table.std)]
        return new

    out["medium"] = {key: resample(out["medium"][key]) for key in out["medium"]}
    for absorber in out.get("absorbers", []):
        absorber["spectrum"] = resample(absorber["spectrum"])
    energies = out["fibers"].get("pulse_energy_mj", {})
    if energies:
        filtered = {f"{lam:g}": energies[f"{lam:g}"] for lam in lams
                    if f"{lam:g}" in energies}
        if len(filtered) != len(lams):
            missing = [lam for lam in lams if f"{lam:g}" not in energies]
            raise ValueError(f"no pulse energy configured for {missing} nm")
        out["fibers"]["pulse_energy_mj"] = filtered
    return out


def save_scene(scene_or_doc, path):
    doc = scene_or_doc.to_doc() if isinstance(scene_or_doc, Scene) else scene_or_doc
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_doc(json.load(fh))
