"""Sub-pixel joint-space-narrowing measurement with partial-image phase-only correlation."""
from .metrics import SeriesResult, indirect_mean_and_sigma, mean_error, pearson, rmsd, rmsd_to_mean_error
from .phantom import PhantomSpec, render_joint, render_sweep
from .pipoc import JsnMeasurement, MeasureConfig, calibrate_window, jsn_series, pipoc_region, quantify_jsn
from .raster import GrayImage, WindowRect, extract_window, load_image, save_pgm
from .segmentation import RegionMasks, segment
from .spectral import DisplacementEstimate, PocConfig, fipoc

__version__ = "0.1.0"

__all__ = [
    "GrayImage",
    "WindowRect",
    "load_image",
    "save_pgm",
    "extract_window",
    "PocConfig",
    "DisplacementEstimate",
    "fipoc",
    "RegionMasks",
    "segment",
    "MeasureConfig",
    "JsnMeasurement",
    "calibrate_window",
    "pipoc_region",
    "quantify_jsn",
    "jsn_series",
    "PhantomSpec",
    "render_joint",
    "render_sweep",
    "SeriesResult",
    "mean_error",
    "rmsd",
    "indirect_mean_and_sigma",
    "rmsd_to_mean_error",
    "pearson",
]
