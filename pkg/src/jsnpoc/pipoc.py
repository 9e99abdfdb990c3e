"""Partial-image phase-only correlation and joint-space-narrowing measurement.

Each window is reduced to its phase-only image (the inverse DFT of its
unit-modulus spectrum). Multiplying the two phase-only images by the same
region mask and correlating the results isolates the displacement of that
region, so the upper and lower bone are measured separately without
in-painting the other one away.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .raster import as_array, hanning_window, median_filter
from .segmentation import RegionMasks, gully_range, segment
from .spectral import (
    DisplacementEstimate,
    PocConfig,
    correlation_surface,
    cross_phase_spectrum,
    fipoc_spectra,
    fit_subpixel_peak,
    forward_dft,
    phase_spectrum,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CalibrationError",
    "MaskError",
    "JsnMeasurement",
    "MeasureConfig",
    "SeriesMeasurement",
    "phase_only_image",
    "shift_integer",
    "calibrate_window",
    "align_followup",
    "pipoc_region",
    "quantify_jsn",
    "jsn_series",
]


class CalibrationError(RuntimeError):
    """FIPOC flagged a mismatch on every calibration round."""


class MaskError(ValueError):
    """Region mask empty or smaller than the minimum area."""


@dataclass(frozen=True)
class MeasureConfig:
    poc: PocConfig = field(default_factory=PocConfig)
    median_radius: int = 1
    calibration_rounds: int = 3
    i_min: int | None = None
    i_max: int | None = None
    mask_margin: int = 0
    min_mask_fraction: float = 0.10
    second_window: bool = False

    def gully_widths(self, spacing: float) -> tuple[int, int]:
        if self.i_min is not None and self.i_max is not None:
            return self.i_min, self.i_max
        lo, hi = gully_range(spacing)
        return self.i_min or lo, self.i_max or hi


@dataclass(frozen=True)
class JsnMeasurement:
    upper: DisplacementEstimate
    lower: DisplacementEstimate
    jsn_px: float
    jsn_mm: float
    calibration_offset: tuple[int, int]
    mismatch: bool


def _spacing(img, default=1.0):
    return getattr(img, "spacing", default)


def phase_only_image(img, window: bool = True, full_taper: bool = False) -> np.ndarray:
    """Real inverse DFT of the (windowed) unit-modulus spectrum of ``img``."""
    return np.fft.ifft2(phase_spectrum(img, window, full_taper)).real


def shift_integer(arr, dx: int, dy: int) -> np.ndarray:
    """Translate so that ``out(x, y) = arr(x - dx, y - dy)``, edges replicated."""
    arr = np.asarray(arr)
    if dx == 0 and dy == 0:
        return arr.copy()
    return ndi.shift(arr, (dy, dx), order=0, mode="nearest")


def calibrate_window(baseline, followup, config: MeasureConfig = MeasureConfig()):
    """Integer pre-alignment of ``followup`` onto ``baseline``.

    Both windows are median filtered and registered with FIPOC; the rounded
    displacement accumulates into the offset and the follow-up is
    translated back by it. Rounds repeat until the residual drops below
    half a pixel per axis.

    Returns ``(offset, residual)`` with ``offset`` as ``(dx, dy)``; use
    `align_followup` to apply it.
    """
    f = as_array(baseline)
    g = as_array(followup)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    return _calibrate_prepared(_Prepared(f, config), _Prepared(g, config), config)


def align_followup(followup, offset) -> np.ndarray:
    """``out(x, y) = followup(x + dx, y + dy)`` with edges replicated."""
    return shift_integer(as_array(followup), -offset[0], -offset[1])


def _check_mask(mask, min_fraction):
    area = mask.mean()
    if area == 0 or area < min_fraction:
        raise MaskError(f"mask covers {area:.1%} of the window (minimum {min_fraction:.0%})")


def _region_from_phase_images(fh, gh, mask, config: PocConfig, second_window: bool) -> DisplacementEstimate:
    fh = fh * mask
    gh = gh * mask
    if second_window:
        w = hanning_window(fh.shape[1], fh.shape[0], config.full_taper)
        fh, gh = fh * w, gh * w
    r = cross_phase_spectrum(forward_dft(gh), forward_dft(fh))
    r[0, 0] = 0.0
    w = config.weight(r.shape)
    if w is not None:
        r = r * w
    sigma = config.weight_sigma if config.weighting else None
    return fit_subpixel_peak(correlation_surface(r), sigma, radius=config.fit_radius,
                             peak_threshold=config.peak_threshold)


def pipoc_region(f, g, mask, config: PocConfig = PocConfig(), *,
                 min_fraction: float = 0.10, second_window: bool = False) -> DisplacementEstimate:
    """Displacement of region ``mask`` from ``f`` to ``g`` (same sign as `fipoc`)."""
    f = as_array(f)
    g = as_array(g)
    mask = np.asarray(mask, dtype=bool)
    if f.shape != g.shape or mask.shape != f.shape:
        raise ValueError("f, g and mask must share one shape")
    _check_mask(mask, min_fraction)
    fh = phase_only_image(f, config.window, config.full_taper)
    gh = phase_only_image(g, config.window, config.full_taper)
    return _region_from_phase_images(fh, gh, mask, config, second_window)


class _Prepared:
    """Per-window intermediates reused across the pairs of a series."""

    def __init__(self, arr, config: MeasureConfig):
        self.arr = arr
        self.config = config
        self._median = None
        self._median_spec = None
        self._phase_image = None

    @property
    def median(self):
        if self._median is None:
            r = self.config.median_radius
            self._median = median_filter(self.arr, r) if r else self.arr
        return self._median

    @property
    def median_spectrum(self):
        if self._median_spec is None:
            poc = self.config.poc
            self._median_spec = phase_spectrum(self.median, poc.window, poc.full_taper)
        return self._median_spec

    @property
    def phase_image(self):
        if self._phase_image is None:
            poc = self.config.poc
            self._phase_image = phase_only_image(self.arr, poc.window, poc.full_taper)
        return self._phase_image


def _calibrate_prepared(fp: _Prepared, gp: _Prepared, config: MeasureConfig):
    total = np.zeros(2, dtype=int)
    residual = None
    matched = False
    poc = config.poc

    def measure():
        if not total.any():
            return fipoc_spectra(fp.median_spectrum, gp.median_spectrum, poc)
        return fipoc_spectra(fp.median_spectrum,
                             phase_spectrum(shift_integer(gp.median, -total[0], -total[1]),
                                            poc.window, poc.full_taper), poc)

    for _ in range(max(1, config.calibration_rounds)):
        residual = measure()
        if residual.mismatch:
            continue
        matched = True
        if abs(residual.alpha) < 0.5 and abs(residual.beta) < 0.5:
            break
        total += np.rint([residual.alpha, residual.beta]).astype(int)
    else:
        if matched:
            residual = measure()
    if not matched:
        raise CalibrationError("FIPOC mismatch on every calibration round")
    return (int(total[0]), int(total[1])), residual


def _quantify_prepared(fp: _Prepared, gp: _Prepared, masks: RegionMasks,
                       config: MeasureConfig, spacing: float) -> JsnMeasurement:
    offset, _ = _calibrate_prepared(fp, gp, config)
    if offset == (0, 0):
        gh = gp.phase_image
    else:
        poc = config.poc
        gh = phase_only_image(align_followup(gp.arr, offset), poc.window, poc.full_taper)
    masks = masks.eroded(config.mask_margin)
    for m in (masks.s0, masks.s1):
        _check_mask(m, config.min_mask_fraction)
    upper = _region_from_phase_images(fp.phase_image, gh, masks.s0, config.poc, config.second_window)
    lower = _region_from_phase_images(fp.phase_image, gh, masks.s1, config.poc, config.second_window)
    jsn_px = upper.beta - lower.beta
    return JsnMeasurement(upper, lower, jsn_px, jsn_px * spacing, offset,
                          upper.mismatch or lower.mismatch)


def quantify_jsn(baseline, followup, masks: RegionMasks | None = None,
                 config: MeasureConfig = MeasureConfig(), spacing: float | None = None) -> JsnMeasurement:
    """JSN from ``baseline`` to ``followup``; positive means the gap narrowed.

    Calibration uses median-filtered copies; the region displacements are
    measured on the original pixels. Masks default to the segmentation of
    the baseline window.
    """
    if spacing is None:
        spacing = _spacing(baseline)
    f = as_array(baseline)
    g = as_array(followup)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    if masks is None:
        masks = segment(f, *config.gully_widths(spacing))
    return _quantify_prepared(_Prepared(f, config), _Prepared(g, config), masks, config, spacing)


@dataclass
class SeriesMeasurement:
    """Pairwise results for an ordered series of windows.

    ``direct[f, g]`` holds JSN from image f to image g in millimetres for
    every ordered pair (the lower triangle mirrors the upper one with the
    sign flipped); ``pairs[(f, g)]`` keeps the raw measurement for ``f < g``
    or the exception that stopped it.
    """

    n: int
    direct: np.ndarray
    mismatch: np.ndarray
    failed: np.ndarray
    pairs: dict

    def indirect(self, f: int, g: int, include_endpoints: bool = False) -> np.ndarray:
        """``JSN_fk + JSN_kg`` over the admissible intermediate images ``k``."""
        ks = [k for k in range(self.n) if include_endpoints or k not in (f, g)]
        return np.array([self.direct[f, k] + self.direct[k, g] for k in ks])


def jsn_series(windows, config: MeasureConfig = MeasureConfig(), spacing: float | None = None,
               masks: RegionMasks | None = None) -> SeriesMeasurement:
    """All pairwise JSN values with masks taken from the first window."""
    windows = list(windows)
    n = len(windows)
    if n < 2:
        raise ValueError("a series needs at least two windows")
    shapes = {as_array(w).shape for w in windows}
    if len(shapes) != 1:
        raise ValueError("all windows in a series must share one shape")
    if spacing is None:
        spacing = _spacing(windows[0])
    if masks is None:
        masks = segment(as_array(windows[0]), *config.gully_widths(spacing))

    prepared = [_Prepared(as_array(w), config) for w in windows]
    direct = np.zeros((n, n))
    mismatch = np.zeros((n, n), dtype=bool)
    failed = np.zeros((n, n), dtype=bool)
    pairs = {}
    for f in range(n):
        for g in range(f + 1, n):
            try:
                m = _quantify_prepared(prepared[f], prepared[g], masks, config, spacing)
            except (ValueError, RuntimeError) as exc:
                logger.warning("pair (%d, %d) failed: %s", f, g, exc)
                pairs[(f, g)] = exc
                failed[f, g] = failed[g, f] = True
                direct[f, g] = direct[g, f] = np.nan
                continue
            pairs[(f, g)] = m
            direct[f, g], direct[g, f] = m.jsn_mm, -m.jsn_mm
            mismatch[f, g] = mismatch[g, f] = m.mismatch
    return SeriesMeasurement(n, direct, mismatch, failed, pairs)
