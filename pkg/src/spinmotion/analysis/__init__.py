"""Peak fitting, Delta scans, calibration and model comparison."""

from .calibration import (
    CalibrationError,
    CalibrationResult,
    CouplingCalibration,
    DickeCalibrator,
    GapResult,
    PeakNotFoundError,
    TrapCalibration,
    WindowError,
    ZeemanCalibration,
    calibrate_traps,
    calibrate_zeeman,
    fit_couplings,
    min_gap,
)
from .compare import (
    ComparisonResult,
    compare_models,
    match_ridges,
    simplified_lines,
    simplified_scan,
    simplified_spectrum,
)
from .peaks import FitResult, GaussianPeakFitter, Peak, find_peaks, fit_gaussians, locate_peak, noise_level
from .scan import DeltaScan, SpectrumSynthesizer, add_noise, scan_b0, scan_delta
from .tuneout import LinearTuningFit, LineFit, fit_line, synthetic_tuneout

__all__ = [
    "CalibrationError", "CalibrationResult", "ComparisonResult", "CouplingCalibration", "DeltaScan",
    "DickeCalibrator", "FitResult", "GapResult", "GaussianPeakFitter", "LineFit", "LinearTuningFit",
    "Peak", "PeakNotFoundError", "SpectrumSynthesizer", "TrapCalibration", "WindowError",
    "ZeemanCalibration", "add_noise", "calibrate_traps", "calibrate_zeeman", "compare_models",
    "find_peaks", "fit_couplings", "fit_gaussians", "fit_line", "locate_peak", "match_ridges",
    "min_gap", "noise_level", "scan_b0", "scan_delta", "simplified_lines", "simplified_scan",
    "simplified_spectrum", "synthetic_tuneout",
]
