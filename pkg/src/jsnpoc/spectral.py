"""Phase-only correlation machinery.

Arrays follow numpy's ``(rows, cols) == (y, x)`` layout; displacements are
reported as ``(alpha, beta) == (dx, dy)``. Spectra are unnormalised DFTs with
DC at index ``(0, 0)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .raster import as_array, hanning_window

logger = logging.getLogger(__name__)

__all__ = [
    "PocConfig",
    "DisplacementEstimate",
    "PeakOnBorderError",
    "ConstantImageError",
    "forward_dft",
    "inverse_dft",
    "phase_extract",
    "cross_phase_spectrum",
    "gaussian_weight",
    "correlation_surface",
    "peak_kernel",
    "poc_peak_model",
    "fit_subpixel_peak",
    "phase_spectrum",
    "fipoc",
    "fipoc_spectra",
]

AMP_EPSILON = 1e-12


class PeakOnBorderError(ValueError):
    """The correlation maximum sits too close to the surface border to fit."""


class ConstantImageError(ValueError):
    """An input has no spectral content outside DC."""


@dataclass(frozen=True)
class PocConfig:
    """Knobs shared by FIPOC and PIPOC.

    weighting : apply a Gaussian low-pass to the cross phase spectrum.
    weight_sigma : Gaussian sigma as a fraction of the Nyquist frequency.
    peak_threshold : normalised peak height below which a match is flagged.
    fit_radius : half-size of the fitting patch (2 -> 5x5).
    window : taper the mean-removed input before the DFT.
    full_taper : use a taper that reaches zero at the border instead of the
        default raised cosine, which is still 0.5 there.
    """

    weighting: bool = True
    weight_sigma: float = 0.5
    peak_threshold: float = 0.1
    fit_radius: int = 2
    window: bool = True
    full_taper: bool = False

    def weight(self, shape):
        if not self.weighting:
            return None
        return gaussian_weight(shape, self.weight_sigma)


@dataclass(frozen=True)
class DisplacementEstimate:
    alpha: float
    beta: float
    peak: float
    mismatch: bool
    integer_peak: tuple[int, int] = (0, 0)
    converged: bool = True

    def __iter__(self):
        yield self.alpha
        yield self.beta


def forward_dft(img) -> np.ndarray:
    return np.fft.fft2(as_array(img))


def inverse_dft(spec) -> np.ndarray:
    return np.fft.ifft2(spec)


def phase_extract(spec, amp_epsilon: float = AMP_EPSILON, zero_dc: bool = True) -> np.ndarray:
    """Divide every bin by its modulus.

    Bins below ``amp_epsilon * max|bin|`` become exactly zero, as does the
    DC bin when ``zero_dc`` is set.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    mod = np.abs(spec)
    floor = amp_epsilon * mod.max() if mod.size else 0.0
    keep = (mod >= floor) & (mod > 0)
    out = np.zeros_like(spec)
    out[keep] = spec[keep] / mod[keep]
    if zero_dc and out.size:
        out[(0,) * out.ndim] = 0.0
    return out


def cross_phase_spectrum(a, b, amp_epsilon: float = AMP_EPSILON) -> np.ndarray:
    """Normalised cross spectrum ``a * conj(b) / |a * conj(b)|``.

    Accepts arbitrary complex spectra; bins where the product vanishes (either
    factor zero) stay zero.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return phase_extract(a * np.conj(b), amp_epsilon, zero_dc=False)


def gaussian_weight(shape, sigma: float = 0.5) -> np.ndarray:
    """Separable Gaussian low-pass over DFT bins.

    ``sigma`` is in units of the Nyquist frequency (0.5 cycles/pixel).
    """
    rows, cols = shape
    s = sigma * 0.5
    fy = np.fft.fftfreq(rows)
    fx = np.fft.fftfreq(cols)
    return np.outer(np.exp(-fy ** 2 / (2 * s * s)), np.exp(-fx ** 2 / (2 * s * s)))


def correlation_surface(r, check_imag: bool = True) -> np.ndarray:
    """Inverse DFT of a cross phase spectrum, zero displacement centred.

    The result satisfies ``surface[rows//2 + dy, cols//2 + dx] == r_hat(dx, dy)``.
    """
    r = np.asarray(r, dtype=np.complex128)
    spatial = np.fft.ifft2(r)
    if check_imag:
        resid = np.abs(spatial.imag).max()
        if resid > 1e-6:
            logger.debug("discarding imaginary residue %.3g of correlation surface", resid)
    return np.fft.fftshift(spatial.real)


# ---------------------------------------------------------------------------
# peak model

def _axis_weight(n: int, sigma: float | None) -> tuple[np.ndarray, np.ndarray]:
    u = np.fft.fftfreq(n) * n
    if sigma is None:
        return u, np.ones(n)
    s = sigma * 0.5
    return u, np.exp(-(u / n) ** 2 / (2 * s * s))


def peak_kernel(t, n: int, sigma: float | None = None, derivative: bool = False):
    """1-D correlation peak for a displacement residual ``t``.

    Continuous extension of the inverse DFT of the (possibly weighted)
    unit-phase spectrum: ``(1/n) sum_u H(u) cos(2 pi u t / n)``. With no
    weighting and odd ``n`` this is the ratio-of-sines kernel
    ``sin(pi t) / (n sin(pi t / n))``.
    """
    u, h = _axis_weight(n, sigma)
    t = np.asarray(t, dtype=np.float64)
    phase = 2 * np.pi * np.multiply.outer(t, u) / n
    val = (np.cos(phase) * h).sum(-1) / n
    if not derivative:
        return val
    dval = (-np.sin(phase) * h * (2 * np.pi * u / n)).sum(-1) / n
    return val, dval


class _PeakModel:
    """``p * (Kx(x - a) Ky(y - b) - dc)`` on the grid ``ys x xs``.

    ``p`` is the height relative to a perfect match, so a self-correlation
    fits ``p = 1`` with or without spectral weighting; ``k0`` is the raw
    height such a match reaches.
    """

    def __init__(self, shape, sigma, zero_dc=True):
        self.rows, self.cols = shape
        self.sigma = sigma
        self.dc = 1.0 / (self.rows * self.cols) if zero_dc else 0.0
        self.k0 = peak_kernel(0.0, self.cols, sigma) * peak_kernel(0.0, self.rows, sigma) - self.dc

    def __call__(self, xs, ys, p, a, b, jac=False):
        """``xs`` (columns) and ``ys`` (rows) are 1-D; output is ``(len(ys), len(xs))``."""
        kx, dkx = peak_kernel(np.asarray(xs, dtype=np.float64) - a, self.cols, self.sigma, derivative=True)
        ky, dky = peak_kernel(np.asarray(ys, dtype=np.float64) - b, self.rows, self.sigma, derivative=True)
        base = np.outer(ky, kx) - self.dc
        v = p * base
        if not jac:
            return v
        J = np.stack([base, -p * np.outer(ky, dkx), -p * np.outer(dky, kx)], axis=-1)
        return v, J


def poc_peak_model(shape, alpha, beta, peak=1.0, sigma=None, zero_dc=True) -> np.ndarray:
    """Ideal centred correlation surface for displacement ``(alpha, beta)``."""
    rows, cols = shape
    xs = np.arange(cols) - cols // 2
    ys = np.arange(rows) - rows // 2
    return _PeakModel(shape, sigma, zero_dc)(xs, ys, peak, alpha, beta)


def _parabolic(m, c, p):
    denom = m - 2 * c + p
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (m - p) / denom, -1.0, 1.0))


def fit_subpixel_peak(surface, sigma: float | None = None, *, radius: int = 2,
                      peak_threshold: float = 0.1, zero_dc: bool = True,
                      max_iter: int = 50, tol: float = 1e-7) -> DisplacementEstimate:
    """Least-squares fit of the POC peak model around the surface maximum.

    ``sigma`` must match the spectral weighting used to build the surface
    (``None`` for none). The fit is Gauss-Newton over the ``(2r+1)**2``
    patch, seeded at the integer maximum; if it does not converge in
    ``max_iter`` steps or leaves the +/-1 pixel box, per-axis parabolic
    interpolation is used instead.
    """
    surface = np.asarray(surface, dtype=np.float64)
    rows, cols = surface.shape
    iy, ix = np.unravel_index(np.argmax(surface), surface.shape)
    if iy < radius or ix < radius or iy >= rows - radius or ix >= cols - radius:
        raise PeakOnBorderError(f"correlation peak at ({ix}, {iy}) lies on the border frame")
    cy, cx = rows // 2, cols // 2
    px, py = ix - cx, iy - cy

    offs = np.arange(-radius, radius + 1)
    data = surface[iy - radius:iy + radius + 1, ix - radius:ix + radius + 1].ravel()
    xs = (px + offs).astype(np.float64)
    ys = (py + offs).astype(np.float64)

    model = _PeakModel(surface.shape, sigma, zero_dc)
    theta = np.array([surface[iy, ix] / model.k0, float(px), float(py)])
    converged = False
    for _ in range(max_iter):
        v, J = model(xs, ys, *theta, jac=True)
        step, *_ = np.linalg.lstsq(J.reshape(-1, 3), data - v.ravel(), rcond=None)
        theta = theta + step
        if not np.all(np.isfinite(theta)):
            break
        if np.max(np.abs(step[1:])) < tol and abs(step[0]) < tol * max(1.0, abs(theta[0])):
            converged = True
            break
    if converged and (abs(theta[1] - px) > 1 or abs(theta[2] - py) > 1):
        converged = False

    if converged:
        p, alpha, beta = theta
    else:
        c = surface[iy, ix]
        alpha = px + _parabolic(surface[iy, ix - 1], c, surface[iy, ix + 1])
        beta = py + _parabolic(surface[iy - 1, ix], c, surface[iy + 1, ix])
        p = c / model.k0
    p = float(np.clip(p, 0.0, 1.0))
    return DisplacementEstimate(float(alpha), float(beta), p, p < peak_threshold,
                                (int(px), int(py)), converged)


# ---------------------------------------------------------------------------
# full-image POC

def phase_spectrum(img, window: bool = True, full_taper: bool = False) -> np.ndarray:
    """Windowed DFT of ``img`` reduced to unit-modulus phase (DC zeroed).

    The mean is removed before windowing; otherwise the taper itself leaks
    a static low-frequency blob into both spectra that pulls the peak
    towards zero displacement.
    """
    arr = as_array(img)
    arr = arr - arr.mean()
    if window:
        arr = arr * hanning_window(arr.shape[1], arr.shape[0], full_taper)
    spec = forward_dft(arr)
    mod = np.abs(spec)
    mod[0, 0] = 0.0
    if mod.max() <= 1e-9 * max(1.0, abs(spec[0, 0])):
        raise ConstantImageError("image has no structure outside DC")
    return phase_extract(spec)


def fipoc_spectra(fp, gp, config: PocConfig = PocConfig()) -> DisplacementEstimate:
    """`fipoc` on precomputed phase spectra (see `phase_spectrum`)."""
    r = cross_phase_spectrum(gp, fp)
    w = config.weight(r.shape)
    if w is not None:
        r = r * w
    surface = correlation_surface(r)
    sigma = config.weight_sigma if config.weighting else None
    return fit_subpixel_peak(surface, sigma, radius=config.fit_radius,
                             peak_threshold=config.peak_threshold)


def fipoc(f, g, config: PocConfig = PocConfig()) -> DisplacementEstimate:
    """Displacement of ``g`` relative to ``f``: ``g(x, y) ~ f(x - alpha, y - beta)``."""
    f = as_array(f)
    g = as_array(g)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    fp = phase_spectrum(f, config.window, config.full_taper)
    gp = phase_spectrum(g, config.window, config.full_taper)
    return fipoc_spectra(fp, gp, config)
