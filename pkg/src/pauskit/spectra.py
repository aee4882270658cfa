"""Wavelength-indexed spectra: table type, interpolation, CSV IO, synthetic curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectrumTable:
    """Tabulated spectrum with optional per-point standard deviations.

    Wavelengths are in nm and must be strictly increasing; values are in the
    unit named by ``unit`` (``cm^-1`` or ``relative``).
    """

    wavelengths_nm: np.ndarray
    values: np.ndarray
    std: np.ndarray | None = None
    unit: str = "cm^-1"

    def __post_init__(self):
        wl = np.asarray(self.wavelengths_nm, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "wavelengths_nm", wl)
        object.__setattr__(self, "values", vals)
        if wl.ndim != 1 or wl.size < 1:
            raise ValueError("need a 1-D wavelength axis with at least one point")
        if vals.shape != wl.shape:
            raise ValueError("values and wavelengths must have matching length")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("spectrum values must be finite")
        if self.std is not None:
            std = np.asarray(self.std, dtype=float)
            object.__setattr__(self, "std", std)
            if std.shape != wl.shape:
                raise ValueError("std and wavelengths must have matching length")
            if np.any(std < 0):
                raise ValueError("std must be nonnegative")

    def sample(self, wavelength_nm):
        """Linear interpolation between nodes; exact at nodes; no extrapolation."""
        lam = np.asarray(wavelength_nm, dtype=float)
        lo, hi = self.wavelengths_nm[0], self.wavelengths_nm[-1]
        if np.any(lam < lo) or np.any(lam > hi):
            raise ValueError(
                f"wavelength outside table range [{lo:g}, {hi:g}] nm"
            )
        out = np.interp(lam, self.wavelengths_nm, self.values)
        return float(out) if np.isscalar(wavelength_nm) else out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.std is None:
                writer.writerow(["wavelength_nm", f"value_{self.unit}"])
                for lam, val in zip(self.wavelengths_nm, self.values):
                    writer.writerow([f"{lam:.6g}", repr(float(val))])
            else:
                writer.writerow(["wavelength_nm", f"value_{self.unit}", "std"])
                for lam, val, sd in zip(self.wavelengths_nm, self.values, self.std):
                    writer.writerow([f"{lam:.6g}", repr(float(val)), repr(float(sd))])

    @classmethod
    def from_csv(cls, path, unit=None):
        """Read a 2- or 3-column CSV (wavelength, value[, std]); header optional."""
        rows = []
        header_unit = "cm^-1"
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                try:
                    rows.append([float(cell) for cell in row if cell.strip() != ""])
                except ValueError:
                    # header line; recover the unit tag if present
                    if len(row) >= 2 and row[1].startswith("value_"):
                        header_unit = row[1][len("value_"):]
        if not rows:
            raise ValueError(f"no numeric rows in {path}")
        data = np.asarray(rows, dtype=float)
        std = data[:, 2] if data.shape[1] >= 3 else None
        return cls(data[:, 0], data[:, 1], std=std, unit=unit or header_unit)

    def to_doc(self) -> dict:
        doc = {
            "wavelength_nm": [float(v) for v in self.wavelengths_nm],
            "value": [float(v) for v in self.values],
            "unit": self.unit,
        }
        if self.std is not None:
            doc["std"] = [float(v) for v in self.std]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SpectrumTable":
        return cls(
            np.asarray(doc["wavelength_nm"], dtype=float),
            np.asarray(doc["value"], dtype=float),
            std=np.asarray(doc["std"], dtype=float) if "std" in doc else None,
            unit=doc.get("unit", "cm^-1"),
        )


def sample_spectrum(table: SpectrumTable, wavelength_nm):
    """Module-level alias for :meth:`SpectrumTable.sample`."""
    return table.sample(wavelength_nm)


# Default wavelength grids used throughout: the nine-wavelength imaging set and
# the 35-point calibration set (700-870 nm, 5 nm step).
IMAGING_WAVELENGTHS_NM = (730.0, 744.0, 758.0, 772.0, 786.0, 795.0, 814.0, 828.0, 842.0)
CALIBRATION_WAVELENGTHS_NM = tuple(float(w) for w in range(700, 871, 5))


def _grid(wavelengths):
    return np.asarray(
        CALIBRATION_WAVELENGTHS_NM if wavelengths is None else wavelengths, dtype=float
    )


def synthetic_agent_spectrum(wavelengths_nm=None) -> SpectrumTable:
    """Bundled agent-like spectrum: single broad peak near 795 nm.

    Stands in for the heat-generating absorption of an ICG-conjugate contrast
    agent; values are in cm^-1 at unit concentration.
    """
    lam = _grid(wavelengths_nm)
    vals = 0.10 + 1.15 * np.exp(-(((lam - 795.0) / 38.0) ** 2))
    return SpectrumTable(lam, vals, unit="cm^-1")


def synthetic_blood_spectrum(wavelengths_nm=None) -> SpectrumTable:
    """Bundled blood-like distractor spectrum: declining through the NIR window."""
    lam = _grid(wavelengths_nm)
    vals = 0.18 + 1.05 * np.exp(-(lam - 700.0) / 75.0)
    return SpectrumTable(lam, vals, unit="cm^-1")


def synthetic_copper_sulfate_spectrum(wavelengths_nm=None) -> SpectrumTable:
    """Bundled reference-absorber spectrum: smooth broad rise peaking near 810 nm."""
    lam = _grid(wavelengths_nm)
    vals = 0.35 + 0.85 * np.exp(-(((lam - 810.0) / 90.0) ** 2))
    return SpectrumTable(lam, vals, unit="cm^-1")
