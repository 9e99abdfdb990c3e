import numpy as np
import pytest


def fourier_shift(img, dx, dy):
    """Band-limited circular shift: ``out(x, y) = img(x - dx, y - dy)``."""
    rows, cols = img.shape
    fy = np.fft.fftfreq(rows)[:, None]
    fx = np.fft.fftfreq(cols)[None, :]
    spec = np.fft.fft2(img) * np.exp(-2j * np.pi * (fx * dx + fy * dy))
    if rows % 2 == 0:
        spec[rows // 2, :] = spec[rows // 2, :].real  # keep the result real
    if cols % 2 == 0:
        spec[:, cols // 2] = spec[:, cols // 2].real
    return np.fft.ifft2(spec).real


def smooth_texture(rng, shape=(128, 128), sigma=1.0):
    from scipy import ndimage as ndi

    t = ndi.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    t -= t.min()
    return t / t.max()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
