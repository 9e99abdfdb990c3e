import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jsnpoc.raster import (
    ChannelError,
    GrayImage,
    ImageReadError,
    MissingSpacingError,
    WindowOutOfBoundsError,
    WindowRect,
    extract_window,
    hanning_window,
    load_image,
    median_filter,
    save_pgm,
    write_sidecar,
)


def _write_pgm(path, arr, maxval):
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    path.write_bytes(header + arr.astype(dtype).tobytes())


# -- GrayImage / WindowRect --------------------------------------------------

def test_grayimage_rejects_out_of_range():
    with pytest.raises(ValueError):
        GrayImage(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((4, 4)), spacing=0)
    with pytest.raises(ValueError):
        GrayImage(np.full((4, 4), np.nan))


def test_grayimage_is_read_only():
    img = GrayImage(np.zeros((4, 5)), 0.2)
    assert img.width == 5 and img.height == 4
    with pytest.raises(ValueError):
        img.samples[0, 0] = 1.0


@pytest.mark.parametrize("w,h,rot", [(30, 64, 0.0), (64, 33, 0.0), (64, 64, -np.pi / 2), (64, 64, 2.0)])
def test_windowrect_invariants(w, h, rot):
    with pytest.raises(ValueError):
        WindowRect((100, 100), w, h, rot)


def test_windowrect_accepts_half_pi():
    WindowRect((100, 100), 32, 32, np.pi / 2)


# -- load_image ----------------------------------------------------------------

def test_load_16bit_pgm_full_scale(tmp_path):
    p = tmp_path / "a.pgm"
    _write_pgm(p, np.full((5, 7), 65535), 65535)
    img = load_image(p, spacing=0.15)
    assert img.shape == (5, 7)
    assert np.all(img.samples == 1.0)


def test_load_8bit_png_zero(tmp_path):
    from PIL import Image

    p = tmp_path / "z.png"
    Image.fromarray(np.zeros((6, 9), dtype=np.uint8)).save(p)
    img = load_image(p, spacing=0.1)
    assert img.shape == (6, 9)
    assert np.all(img.samples == 0.0)


def test_load_16bit_png_scaling(tmp_path):
    from PIL import Image

    arr = np.array([[0, 1000], [65535, 32768]], dtype=np.uint16)
    p = tmp_path / "w.png"
    Image.fromarray(arr).save(p)
    img = load_image(p, spacing=0.1)
    np.testing.assert_allclose(img.samples, arr / 65535.0)


def test_roundtrip_pgm_bit_identical(tmp_path, rng):
    codes = rng.integers(0, 65536, (64, 64))
    img = GrayImage(codes / 65535.0, 0.175)
    p = save_pgm(tmp_path / "r.pgm", img, sidecar=True)
    back = load_image(p)
    assert back.spacing == 0.175
    assert np.array_equal(back.samples, img.samples)


def test_sidecar_spacing(tmp_path):
    p = tmp_path / "s.pgm"
    _write_pgm(p, np.zeros((4, 4)), 255)
    write_sidecar(p, 0.2)
    assert json.loads((tmp_path / "s.json").read_text()) == {"spacing_mm": 0.2}
    assert load_image(p).spacing == 0.2
    assert load_image(p, spacing=0.3).spacing == 0.3


def test_missing_spacing(tmp_path):
    p = tmp_path / "n.pgm"
    _write_pgm(p, np.zeros((4, 4)), 255)
    with pytest.raises(MissingSpacingError):
        load_image(p)


def test_multichannel_png(tmp_path):
    from PIL import Image

    p = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(p)
    with pytest.raises(ChannelError):
        load_image(p, spacing=1.0)


def test_unreadable(tmp_path):
    p = tmp_path / "junk.pgm"
    p.write_bytes(b"hello world")
    with pytest.raises(ImageReadError):
        load_image(p, spacing=1.0)
    with pytest.raises(ImageReadError):
        load_image(tmp_path / "missing.pgm", spacing=1.0)
    trunc = tmp_path / "t.pgm"
    trunc.write_bytes(b"P5\n10 10\n255\n" + bytes(20))
    with pytest.raises(ImageReadError):
        load_image(trunc, spacing=1.0)


def test_error_types_are_distinct():
    assert not issubclass(MissingSpacingError, ImageReadError)
    assert issubclass(ChannelError, ImageReadError)


# -- extract_window ------------------------------------------------------------

def test_zero_rotation_crop_is_exact(rng):
    img = GrayImage(rng.random((100, 120)))
    win = extract_window(img, WindowRect((60, 50), 64, 32))
    assert np.array_equal(win.samples, img.samples[34:66, 28:92])


def test_quarter_turn_is_permutation(rng):
    img = GrayImage(rng.random((80, 80)))
    win = extract_window(img, WindowRect((40, 40), 32, 32, np.pi / 2)).samples
    # local (u, v) -> parent (x, y) = (cx - v, cy + u)
    sub = img.samples[24:56, 25:57]  # rows cy-16..cy+15, cols cx-15..cx+16
    expected = sub[:, ::-1].T
    np.testing.assert_allclose(win, expected, atol=1e-12)


def test_rotated_ramp_matches_analytic():
    yy, xx = np.mgrid[0:200, 0:200].astype(float)
    img = GrayImage((0.3 * xx + 0.7 * yy) / 400.0)
    rect = WindowRect((100.25, 97.5), 64, 48, 0.3)
    win = extract_window(img, rect).samples
    x, y = rect.sample_grid()
    np.testing.assert_allclose(win, (0.3 * x + 0.7 * y) / 400.0, atol=1e-6)


def test_window_out_of_bounds():
    img = GrayImage(np.zeros((64, 64)))
    with pytest.raises(WindowOutOfBoundsError):
        extract_window(img, WindowRect((20, 32), 64, 64))
    with pytest.raises(WindowOutOfBoundsError):
        extract_window(img, WindowRect((32, 32), 64, 64, 0.2))


def test_extract_window_preserves_spacing():
    img = GrayImage(np.zeros((64, 64)), 0.33)
    assert extract_window(img, WindowRect((32, 32), 32, 32)).spacing == 0.33


# -- median_filter -------------------------------------------------------------

def _median_oracle(a, r):
    p = np.pad(a, r, mode="edge")
    out = np.empty_like(a)
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            out[y, x] = np.sort(p[y:y + 2 * r + 1, x:x + 2 * r + 1].ravel())[(2 * r + 1) ** 2 // 2]
    return out


def test_median_constant():
    a = np.full((10, 12), 0.4)
    assert np.array_equal(median_filter(a), a)


def test_median_removes_impulse():
    a = np.zeros((9, 9))
    a[4, 4] = 1.0
    assert np.all(median_filter(a, 1) == 0)


@pytest.mark.parametrize("radius", [1, 2])
def test_median_matches_sort_oracle(rng, radius):
    a = rng.random((16, 16))
    assert np.array_equal(median_filter(a, radius), _median_oracle(a, radius))


def test_median_returns_grayimage():
    img = GrayImage(np.zeros((8, 8)), 0.5)
    out = median_filter(img)
    assert isinstance(out, GrayImage) and out.spacing == 0.5


def test_median_radius_validation():
    with pytest.raises(ValueError):
        median_filter(np.zeros((4, 4)), 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
              elements=st.floats(0, 1, allow_nan=False)))
def test_median_stays_within_range(a):
    out = median_filter(a, 1)
    assert out.min() >= a.min() and out.max() <= a.max()


# -- hanning_window ------------------------------------------------------------

@pytest.mark.parametrize("M,N", [(2, 2), (8, 6), (128, 128), (33, 17)])
def test_hanning_centre_is_one(M, N):
    w = hanning_window(M, N)
    assert w[N // 2, M // 2] == 1.0


def test_hanning_left_border_half():
    w = hanning_window(64, 32)
    assert w[16, 0] == pytest.approx(0.5, abs=1e-15)


def test_hanning_slice_formula():
    M = 50
    w = hanning_window(M, 20)
    x = np.arange(M) - M // 2
    np.testing.assert_allclose(w[10], (1 + np.cos(np.pi * x / M)) / 2, atol=1e-12)


def test_hanning_separable():
    w = hanning_window(40, 30)
    rebuilt = np.outer(w[:, 20], w[15, :])
    np.testing.assert_allclose(w, rebuilt, atol=1e-12)


def test_full_taper_reaches_zero():
    w = hanning_window(64, 64, full_taper=True)
    assert w[32, 0] == pytest.approx(0.0, abs=1e-15)
    assert w[32, 32] == 1.0


def test_hanning_validation():
    with pytest.raises(ValueError):
        hanning_window(1, 8)
