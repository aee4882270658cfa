"""Core geometry and optics types: image grid, fiber array, medium, ROIs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectra import SpectrumTable
from .units import MM_PER_CM


@dataclass(frozen=True)
class Grid:
    """Regular B-scan pixel grid; x along the array, z = depth below the surface (mm)."""

    nx: int
    nz: int
    dx: float
    dz: float
    x0: float = 0.0
    z0: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ValueError("grid needs at least one pixel per axis")
        if self.dx <= 0 or self.dz <= 0:
            raise ValueError("pixel pitch must be positive")

    def pixel_center(self, ix: int, iz: int) -> tuple[float, float]:
        """Physical center (x_mm, z_mm) of pixel (ix, iz)."""
        if not (0 <= ix < self.nx and 0 <= iz < self.nz):
            raise IndexError(f"pixel ({ix}, {iz}) outside {self.nx}x{self.nz} grid")
        return (self.x0 + (ix + 0.5) * self.dx, self.z0 + (iz + 0.5) * self.dz)

    def nearest_index(self, x_mm: float, z_mm: float) -> tuple[int, int]:
        """Indices of the pixel whose center is closest to (x_mm, z_mm)."""
        ix = int(np.clip(np.floor((x_mm - self.x0) / self.dx), 0, self.nx - 1))
        iz = int(np.clip(np.floor((z_mm - self.z0) / self.dz), 0, self.nz - 1))
        return ix, iz

    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    def z_centers(self) -> np.ndarray:
        return self.z0 + (np.arange(self.nz) + 0.5) * self.dz

    def to_doc(self) -> dict:
        return {
            "nx": self.nx, "nz": self.nz,
            "dx_mm": self.dx, "dz_mm": self.dz,
            "x0_mm": self.x0, "z0_mm": self.z0,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Grid":
        return cls(doc["nx"], doc["nz"], doc["dx_mm"], doc["dz_mm"],
                   doc.get("x0_mm", 0.0), doc.get("z0_mm", 0.0))


@dataclass(frozen=True)
class Roi:
    """Rectangular pixel box [ix0, ix0+nx) x [iz0, iz0+nz)."""

    ix0: int
    iz0: int
    nx: int = 3
    nz: int = 3

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ValueError("ROI must contain at least one pixel")

    @property
    def n_pixels(self) -> int:
        return self.nx * self.nz

    def check_inside(self, grid: Grid):
        if not (0 <= self.ix0 and self.ix0 + self.nx <= grid.nx
                and 0 <= self.iz0 and self.iz0 + self.nz <= grid.nz):
            raise ValueError("ROI extends outside the grid")

    def overlaps(self, other: "Roi") -> bool:
        return not (self.ix0 + self.nx <= other.ix0 or other.ix0 + other.nx <= self.ix0
                    or self.iz0 + self.nz <= other.iz0 or other.iz0 + other.nz <= self.iz0)

    def extract(self, image: np.ndarray) -> np.ndarray:
        """Slice a (nz, nx)-ordered image down to this box."""
        return image[self.iz0:self.iz0 + self.nz, self.ix0:self.ix0 + self.nx]

    def to_doc(self) -> dict:
        return {"ix0": self.ix0, "iz0": self.iz0, "nx": self.nx, "nz": self.nz}

    @classmethod
    def from_doc(cls, doc: dict) -> "Roi":
        return cls(doc["ix0"], doc["iz0"], doc.get("nx", 3), doc.get("nz", 3))


@dataclass(frozen=True)
class FiberArray:
    """Illumination fibers at the tissue surface.

    ``x_mm``/``y_mm`` are surface positions (y is the elevation offset of the
    two rows flanking the transducer), ``angle_rad`` the incidence angle from
    the surface normal, and ``pulse_energy_mj`` maps wavelength (nm) to the
    per-pulse energy shared by all fibers.
    """

    x_mm: np.ndarray
    y_mm: np.ndarray
    angle_rad: np.ndarray
    side: tuple[str, ...]
    pulse_energy_mj: dict[float, float] = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x_mm, dtype=float)
        y = np.asarray(self.y_mm, dtype=float)
        ang = np.asarray(self.angle_rad, dtype=float)
        object.__setattr__(self, "x_mm", x)
        object.__setattr__(self, "y_mm", y)
        object.__setattr__(self, "angle_rad", ang)
        n = x.size
        if n < 2:
            raise ValueError("need at least two fibers")
        if y.size != n or ang.size != n or len(self.side) != n:
            raise ValueError("fiber attribute lengths disagree")
        if np.any(np.abs(ang) >= np.pi / 2):
            raise ValueError("incidence angles must satisfy |angle| < pi/2")
        if any(e <= 0 for e in self.pulse_energy_mj.values()):
            raise ValueError("pulse energies must be positive")

    @property
    def count(self) -> int:
        return int(self.x_mm.size)

    def energy(self, wavelength_nm: float) -> float:
        """Pulse energy at a configured wavelength (mJ); defaults to 1.0 if none set."""
        if not self.pulse_energy_mj:
            return 1.0
        key = float(wavelength_nm)
        if key not in self.pulse_energy_mj:
            raise KeyError(f"no pulse energy configured for {wavelength_nm} nm")
        return self.pulse_energy_mj[key]

    def entry_points(self) -> np.ndarray:
        """(N, 3) surface entry points (x, y, z=0) in mm."""
        return np.column_stack([self.x_mm, self.y_mm, np.zeros(self.count)])

    def to_doc(self) -> dict:
        return {
            "x_mm": [float(v) for v in self.x_mm],
            "y_mm": [float(v) for v in self.y_mm],
            "angle_rad": [float(v) for v in self.angle_rad],
            "side": list(self.side),
            "pulse_energy_mj": {f"{k:g}": float(v) for k, v in self.pulse_energy_mj.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FiberArray":
        return cls(
            np.asarray(doc["x_mm"], dtype=float),
            np.asarray(doc["y_mm"], dtype=float),
            np.asarray(doc["angle_rad"], dtype=float),
            tuple(doc["side"]),
            {float(k): float(v) for k, v in doc.get("pulse_energy_mj", {}).items()},
        )


def linear_fiber_array(count: int = 20, aperture_mm: float = 12.8,
                       elevation_mm: float = 1.0, angle_rad: float = 0.0,
                       pulse_energy_mj: dict[float, float] | None = None) -> FiberArray:
    """Two rows of ``count/2`` fibers spanning the array aperture at y = +/-elevation."""
    if count % 2 or count < 2:
        raise ValueError("count must be an even number >= 2")
    per_row = count // 2
    xs = np.linspace(-aperture_mm / 2, aperture_mm / 2, per_row)
    x = np.concatenate([xs, xs])
    y = np.concatenate([np.full(per_row, elevation_mm), np.full(per_row, -elevation_mm)])
    side = tuple(["A"] * per_row + ["B"] * per_row)
    ang = np.full(count, angle_rad)
    return FiberArray(x, y, ang, side, pulse_energy_mj or {})


@dataclass(frozen=True)
class MediumOptics:
    """Background optical properties per wavelength (cm^-1 tables).

    The diffusion coefficient excludes absorption: D = 1/(3 mu_s'), so the
    transport mean free path is 3D = 1/mu_s'.
    """

    mu_a: SpectrumTable
    mu_s_prime: SpectrumTable

    def __post_init__(self):
        if np.any(self.mu_a.values <= 0) or np.any(self.mu_s_prime.values <= 0):
            raise ValueError("optical coefficients must be positive")

    def mu_a_cm(self, wavelength_nm):
        return self.mu_a.sample(wavelength_nm)

    def mu_s_prime_cm(self, wavelength_nm):
        return self.mu_s_prime.sample(wavelength_nm)

    def diffusion_cm(self, wavelength_nm):
        """D = 1/(3 mu_s') in cm."""
        return 1.0 / (3.0 * self.mu_s_prime_cm(wavelength_nm))

    def mu_eff_cm(self, wavelength_nm):
        """Effective attenuation sqrt(3 mu_a mu_s') in cm^-1."""
        return np.sqrt(3.0 * self.mu_a_cm(wavelength_nm) * self.mu_s_prime_cm(wavelength_nm))

    def transport_mfp_cm(self, wavelength_nm):
        """Transport mean free path 1/mu_s' (= 3D) in cm."""
        return 1.0 / self.mu_s_prime_cm(wavelength_nm)

    def transport_mfp_mm(self, wavelength_nm):
        return self.transport_mfp_cm(wavelength_nm) * MM_PER_CM

    def to_doc(self) -> dict:
        return {"mu_a": self.mu_a.to_doc(), "mu_s_prime": self.mu_s_prime.to_doc()}

    @classmethod
    def from_doc(cls, doc: dict) -> "MediumOptics":
        return cls(SpectrumTable.from_doc(doc["mu_a"]),
                   SpectrumTable.from_doc(doc["mu_s_prime"]))

    @classmethod
    def uniform(cls, wavelengths_nm, mu_a_cm, mu_s_prime_cm) -> "MediumOptics":
        """Medium from per-wavelength arrays (or scalars broadcast over the grid)."""
        lam = np.asarray(wavelengths_nm, dtype=float)
        mu_a = np.broadcast_to(np.asarray(mu_a_cm, dtype=float), lam.shape).copy()
        mu_sp = np.broadcast_to(np.asarray(mu_s_prime_cm, dtype=float), lam.shape).copy()
        return cls(SpectrumTable(lam, mu_a), SpectrumTable(lam, mu_sp))
