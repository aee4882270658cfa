"""pauskit: swept-illumination photoacoustic-ultrasound simulation and
spectroscopic processing.

Forward model: multi-fiber, multi-wavelength complex IQ image synthesis for
digital phantoms (true signal, fiber-locked surface-echo clutter, seeded
noise). Inverse chain: optical-property estimation from fiber shares, fluence
compensation, compressed-averaging clutter suppression, spectral-correlation
agent weighting, reference-absorber spectrum calibration, and depth
sensitivity fits.
"""

__version__ = "0.1.0"

from .model import FiberArray, Grid, MediumOptics, Roi, linear_fiber_array
from .spectra import (
    SpectrumTable,
    sample_spectrum,
    IMAGING_WAVELENGTHS_NM,
    CALIBRATION_WAVELENGTHS_NM,
    synthetic_agent_spectrum,
    synthetic_blood_spectrum,
    synthetic_copper_sulfate_spectrum,
)
from .scene import (
    Absorber,
    ClutterScatterer,
    Scene,
    load_scene,
    restrict_wavelengths,
    save_scene,
)
from .fluence import (
    DipolePair,
    fluence_at,
    fluence_field,
    fiber_fluence_matrix,
    near_field_mask,
    normalize_over_fibers,
    place_dipoles,
)
from .simulate import (
    IQVolume,
    PSFModel,
    SimulatedComponents,
    synthesize_clutter,
    synthesize_components,
    synthesize_pa,
    synthesize_volume,
)
from .volume_io import load_volume, save_volume, storage_quantize
from .calibrate import (
    CalibrationResult,
    PolynomialModel,
    TubePair,
    agent_spectrum,
    agent_spectrum_std,
    calibrate_agent,
    measure_tube_pair,
    roi_magnitude,
    smooth_spectrum,
)
from .compensate import (
    CompensationResult,
    OpticalFit,
    PixelSelection,
    compensate_volume,
    fit_optical_props,
    fit_volume,
    normalize_pa,
    select_pixels,
)
from .declutter import CompressionConfig, compress, compressed_average, declutter_volume, decompress
from .unmix import agent_weighted_image, ncc_map, nnls_unmix, overlay, pixel_ncc, sigmoid_weight
from .depthfit import (
    DepthFit,
    DepthSeries,
    SignalStats,
    cscan_from_volume,
    fit_depth_decay,
    max_imaging_depth,
    roi_signal_stats,
    synthetic_nirf_series,
)
from .estimators import AgentSpectrumWeighter, CompressedAverager, FluenceCompensator
from .pipeline import PipelineConfig, run_pipeline, verify_run
