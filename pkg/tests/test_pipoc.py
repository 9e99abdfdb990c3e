import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fourier_shift, smooth_texture
from jsnpoc.phantom import PhantomSpec, render_joint
from jsnpoc.pipoc import (
    CalibrationError,
    MaskError,
    MeasureConfig,
    align_followup,
    calibrate_window,
    jsn_series,
    phase_only_image,
    pipoc_region,
    quantify_jsn,
    shift_integer,
)
from jsnpoc.raster import GrayImage
from jsnpoc.segmentation import region_masks, segment
from jsnpoc.spectral import PocConfig

SPEC = PhantomSpec()


def joint(jsw, offset=(0.0, 0.0), spec=SPEC):
    return render_joint(spec, jsw, offset)


def upper_half(shape):
    return region_masks(np.full(shape[1], shape[0] // 2), shape)


@pytest.fixture
def texture(rng):
    return smooth_texture(rng)


# -- calibration ---------------------------------------------------------------

def test_calibrate_identical(texture):
    offset, res = calibrate_window(texture, texture)
    assert offset == (0, 0)
    assert abs(res.alpha) < 1e-3 and abs(res.beta) < 1e-3


def test_calibrate_integer_cyclic_shift(texture):
    g = np.roll(texture, (-6, 4), axis=(0, 1))
    offset, _ = calibrate_window(texture, g)
    assert offset == (4, -6)


def test_calibrate_subpixel_residual():
    # radiograph-like content; on very smooth textures the median filter and
    # the half-height window border bias small residuals towards zero
    f = joint(1.7).samples
    offset, res = calibrate_window(f, fourier_shift(f, 2.4, -1.3))
    assert offset == (2, -1)
    assert abs(res.alpha - 0.4) < 0.05 and abs(res.beta + 0.3) < 0.05


def test_calibrate_unrelated_windows_fail(rng):
    a, b = smooth_texture(rng), smooth_texture(rng)
    cfg = MeasureConfig(poc=PocConfig(peak_threshold=0.9))
    with pytest.raises(CalibrationError):
        calibrate_window(a, b, cfg)


def test_calibrate_shape_mismatch(texture):
    with pytest.raises(ValueError):
        calibrate_window(texture, texture[:64])


def test_shift_and_align_roundtrip():
    a = np.arange(64.0).reshape(8, 8)
    s = shift_integer(a, 2, -1)
    assert s[3, 4] == a[4, 2]  # out(x, y) = a(x - 2, y + 1)
    back = align_followup(s, (2, -1))
    assert np.array_equal(back[1:-2, 2:-2], a[1:-2, 2:-2])
    assert shift_integer(a, 0, 0) is not a


# -- pipoc_region --------------------------------------------------------------

def test_phase_only_image_is_real_and_impulsive(texture):
    h = phase_only_image(texture)
    assert h.shape == texture.shape and np.isrealobj(h)
    assert abs(h.mean()) < 1e-12  # DC removed


def test_region_self(texture):
    mask = upper_half(texture.shape).s0
    est = pipoc_region(texture, texture, mask)
    assert abs(est.alpha) < 1e-9 and abs(est.beta) < 1e-9
    assert est.peak > 0.5


def test_region_global_shift(texture):
    g = fourier_shift(texture, 0.7, 0.2)
    est = pipoc_region(texture, g, upper_half(texture.shape).s0)
    assert abs(est.alpha - 0.7) < 0.03 and abs(est.beta - 0.2) < 0.03


def composite(up_dy, lo_dy, jsw=1.7):
    """Upper rows from one render, lower rows from another; the seam is the
    gap centre, where both are flat background."""
    a = joint(jsw, (0.0, up_dy)).samples
    b = joint(jsw, (0.0, lo_dy)).samples
    c = SPEC.canvas // 2
    out = np.vstack([a[:c], b[c:]])
    return GrayImage(out, SPEC.spacing), c


def test_region_two_part_composite():
    base = joint(1.7)
    moved, c = composite(0.20, -0.10)
    masks = region_masks(np.full(SPEC.canvas, c), base.shape)
    up = pipoc_region(base, moved, masks.s0)
    lo = pipoc_region(base, moved, masks.s1)
    assert abs(up.beta - 0.20) < 0.05
    # the smaller, opposite lower-bone shift is pulled towards the upper one
    assert lo.beta < 0


def test_region_mask_validation(texture):
    with pytest.raises(MaskError):
        pipoc_region(texture, texture, np.zeros(texture.shape, bool))
    tiny = np.zeros(texture.shape, bool)
    tiny[:5] = True
    with pytest.raises(MaskError):
        pipoc_region(texture, texture, tiny)
    with pytest.raises(ValueError):
        pipoc_region(texture, texture, tiny[:64])


# -- quantify_jsn --------------------------------------------------------------

def test_quantify_identical():
    a = joint(1.7)
    m = quantify_jsn(a, a)
    assert abs(m.jsn_px) < 2e-3
    assert m.calibration_offset == (0, 0) and not m.mismatch


def test_quantify_invariants():
    a, b = joint(1.7), joint(1.6)
    m = quantify_jsn(a, b)
    assert m.jsn_px == m.upper.beta - m.lower.beta
    assert m.jsn_mm == pytest.approx(m.jsn_px * 0.15, abs=1e-15)


def test_quantify_tenth_mm_narrowing():
    m = quantify_jsn(joint(1.7), joint(1.6))
    assert abs(m.jsn_mm - 0.10) < 0.02


def test_quantify_widening_is_negative():
    m = quantify_jsn(joint(1.7), joint(1.9))
    assert abs(m.jsn_mm + 0.20) < 0.04


def test_quantify_water_noise():
    rng = np.random.default_rng(3)
    a = joint(1.7).samples + rng.normal(0, 0.02, (128, 128))
    b = joint(1.6).samples + rng.normal(0, 0.02, (128, 128))
    m = quantify_jsn(GrayImage(np.clip(a, 0, 1), 0.15), GrayImage(np.clip(b, 0, 1), 0.15))
    assert abs(m.jsn_mm - 0.10) < 0.04


def test_global_shift_null():
    a = joint(1.7)
    b = joint(1.7, (0.6, -0.4))
    assert abs(quantify_jsn(a, b).jsn_px) <= 0.02


@settings(max_examples=6, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.sampled_from([1.4, 1.7, 2.0]))
def test_global_shift_null_property(dx, dy, jsw):
    a = joint(jsw)
    b = joint(jsw, (dx, dy))
    assert abs(quantify_jsn(a, b).jsn_px) <= 0.02


def test_mask_swap_negates():
    a, b = joint(1.7), joint(1.55)
    masks = segment(a.samples)
    m = quantify_jsn(a, b, masks)
    s = quantify_jsn(a, b, masks.swapped())
    assert abs(m.jsn_px + s.jsn_px) < 4e-3


@pytest.mark.parametrize("c", [0.5, 0.9, 1.2])
def test_intensity_scale_invariance(c):
    a, b = joint(1.7), joint(1.6)
    m = quantify_jsn(a, b)
    s = quantify_jsn(a, GrayImage(np.clip(b.samples * c, 0, 1), 0.15))
    assert abs(m.jsn_px - s.jsn_px) < 1e-3


def test_mask_margin_still_measures():
    cfg = MeasureConfig(mask_margin=2)
    m = quantify_jsn(joint(1.7), joint(1.6), config=cfg)
    assert abs(m.jsn_mm - 0.10) < 0.02


def test_antisymmetry_without_calibration_shift():
    a, b = joint(1.7), joint(1.6)
    masks = segment(a.samples)
    fg = quantify_jsn(a, b, masks)
    gf = quantify_jsn(b, a, masks)
    assert fg.calibration_offset == gf.calibration_offset == (0, 0)
    assert abs(fg.jsn_px + gf.jsn_px) < 4e-3


@pytest.mark.xfail(strict=True, reason=(
    "integer calibration translates only the follow-up window with edge "
    "replication, so reversing the pair moves different pixels; calibrated "
    "phantom pairs disagree by up to ~0.035 px"))
def test_antisymmetry_across_series():
    jsws = [1.2, 1.5, 1.7, 2.0, 2.2]
    imgs = [joint(j) for j in jsws]
    masks = segment(imgs[0].samples)
    worst = 0.0
    for f in range(len(jsws)):
        for g in range(f + 1, len(jsws)):
            fg = quantify_jsn(imgs[f], imgs[g], masks).jsn_px
            gf = quantify_jsn(imgs[g], imgs[f], masks).jsn_px
            worst = max(worst, abs(fg + gf))
    assert worst < 4e-3


# -- series --------------------------------------------------------------------

def test_series_identical_images():
    a = joint(1.7)
    s = jsn_series([a, a, a])
    assert np.abs(s.direct).max() < 4e-3 * 0.15
    for f in range(3):
        for g in range(3):
            if f != g:
                assert np.abs(s.indirect(f, g)).max() < 4e-3 * 0.15


def test_series_triple():
    s = jsn_series([joint(1.70), joint(1.65), joint(1.60)])
    assert abs(s.direct[0, 2] - 0.10) < 0.02
    assert abs(s.direct[0, 1] + s.direct[1, 2] - 0.10) < 0.02
    assert s.direct[2, 0] == -s.direct[0, 2]
    np.testing.assert_allclose(s.indirect(0, 2), [s.direct[0, 1] + s.direct[1, 2]])


def test_series_marks_failed_pairs():
    blank = GrayImage(np.full((128, 128), 0.3), 0.15)
    s = jsn_series([joint(1.7), joint(1.6), blank])
    assert s.failed[0, 2] and s.failed[2, 1]
    assert np.isnan(s.direct[0, 2])
    assert not s.failed[0, 1] and np.isfinite(s.direct[0, 1])
    assert isinstance(s.pairs[(0, 2)], Exception)


def test_series_validation():
    with pytest.raises(ValueError):
        jsn_series([joint(1.7)])
    with pytest.raises(ValueError):
        jsn_series([joint(1.7), GrayImage(np.zeros((64, 64)), 0.15)])


def test_series_matches_pairwise_quantify():
    imgs = [joint(1.7), joint(1.6), joint(1.9)]
    s = jsn_series(imgs)
    masks = segment(imgs[0].samples, *MeasureConfig().gully_widths(0.15))
    assert s.direct[1, 2] == quantify_jsn(imgs[1], imgs[2], masks).jsn_mm


@pytest.mark.xfail(strict=True, reason=(
    "static-mask leakage contracts each PIPOC estimate by 10-18% in a "
    "shift-dependent way, so JSN_fg and JSN_fk + JSN_kg differ by up to "
    "~0.11 px on noiseless triples"))
def test_consistency_on_noiseless_triples():
    jsws = [1.2, 1.4, 1.7, 1.9, 2.2]
    s = jsn_series([joint(j) for j in jsws])
    worst = 0.0
    for f in range(5):
        for g in range(f + 1, 5):
            for k in range(5):
                if k in (f, g):
                    continue
                worst = max(worst, abs(s.direct[f, g] - s.direct[f, k] - s.direct[k, g]) / 0.15)
    assert worst < 0.02
