"""Synthetic joint radiographs with exactly known joint space width.

Two bones face each other across a vertical gap: the upper one ends in a
convex circular head, the lower one in a concave cup of larger radius. Each
bone has a bright cortical rim around a darker cancellous interior carrying
a faint band-limited trabecular texture that moves with the bone. Shapes are
evaluated analytically on a 16x supersampled grid and box-averaged, so
sub-pixel placement is exact without any Fourier shifting.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .raster import GrayImage, save_pgm, write_sidecar, _atomic_write

__all__ = [
    "PhantomSpec",
    "PhantomManifest",
    "ManifestImage",
    "NOISE_PRESETS",
    "REFERENCE_JSW",
    "COARSE_SWEEP",
    "FINE_SWEEP",
    "render_joint",
    "render_sweep",
    "jsw_sweep",
    "bone_shifts_px",
    "truth_matrix",
    "load_manifest",
    "render_hand_silhouette",
    "HandTruth",
]

REFERENCE_JSW = 1.70
NOISE_PRESETS = {"none": 0.0, "air": 0.005, "water": 0.02}


def jsw_sweep(start: float, stop: float, step: float) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 6) for k in range(n)]


COARSE_SWEEP = jsw_sweep(1.20, 2.20, 0.10)
FINE_SWEEP = jsw_sweep(1.65, 1.75, 0.01)


@dataclass(frozen=True)
class PhantomSpec:
    spacing: float = 0.15
    canvas: int = 128
    bone_width: float = 10.0
    head_radius: float = 7.0
    cup_radius: float = 9.0
    cortex_thickness: float = 0.9
    background_intensity: float = 0.08
    cancellous_intensity: float = 0.45
    cortex_intensity: float = 0.80
    texture_amplitude: float = 0.04
    jsw_sequence: tuple[float, ...] = tuple(COARSE_SWEEP)
    noise_sigma: float = NOISE_PRESETS["air"]
    seed: int = 0
    supersample: int = 16
    texture_seed: int | None = None
    psf_sigma: float = 0.6

    def __post_init__(self):
        if not (self.background_intensity < self.cancellous_intensity < self.cortex_intensity):
            raise ValueError("intensities must satisfy background < cancellous < cortex")
        if any(j <= 0 for j in self.jsw_sequence):
            raise ValueError("joint space widths must be positive")
        if self.spacing <= 0 or self.canvas < 32:
            raise ValueError("invalid spacing or canvas")
        object.__setattr__(self, "jsw_sequence", tuple(float(j) for j in self.jsw_sequence))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jsw_sequence"] = list(self.jsw_sequence)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        d["jsw_sequence"] = tuple(d.get("jsw_sequence", COARSE_SWEEP))
        return cls(**d)


@dataclass(frozen=True)
class ManifestImage:
    file: str
    true_jsw_mm: float
    true_upper_shift_px: float
    true_lower_shift_px: float


@dataclass(frozen=True)
class PhantomManifest:
    spec: PhantomSpec
    images: tuple[ManifestImage, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        return json.dumps({"spec": self.spec.to_dict(),
                           "images": [asdict(im) for im in self.images]}, indent=2)

    @property
    def ids(self) -> list[str]:
        return [Path(im.file).stem for im in self.images]


def load_manifest(path) -> PhantomManifest:
    d = json.loads(Path(path).read_text())
    return PhantomManifest(PhantomSpec.from_dict(d["spec"]),
                           tuple(ManifestImage(**im) for im in d["images"]))


def bone_shifts_px(spec: PhantomSpec, jsw: float) -> tuple[float, float]:
    """Vertical displacement of (upper, lower) bone from the 1.70 mm pose."""
    delta = (jsw - REFERENCE_JSW) / 2.0 / spec.spacing
    return -delta, delta


def truth_matrix(jsws) -> np.ndarray:
    """``T[f, g] = jsw_f - jsw_g``: narrowing from image f to image g is positive."""
    j = np.asarray(jsws, dtype=np.float64)
    return j[:, None] - j[None, :]


def _texture_params(seed: int, which: int, n: int = 48):
    rng = np.random.default_rng([seed, 7919, which])
    wavelength = rng.uniform(0.5, 2.0, n)  # mm
    theta = rng.uniform(0, np.pi, n)
    k = 2 * np.pi / wavelength
    return k * np.cos(theta), k * np.sin(theta), rng.uniform(0, 2 * np.pi, n)


def _texture(x, y, params, amplitude):
    """Sum of plane waves on the grid ``x`` (1, n) by ``y`` (m, 1)."""
    if amplitude == 0:
        return np.zeros((y.shape[0], x.shape[1]))
    kx, ky, ph = params
    ex = np.exp(1j * np.outer(kx, x.ravel()))
    ey = np.exp(1j * (np.outer(y.ravel(), ky) + ph))
    return amplitude * (ey @ ex).real / np.sqrt(len(kx) / 2.0)


def _supersampled_grid(spec: PhantomSpec, offset):
    s = spec.supersample
    n = spec.canvas
    sub = (np.arange(n * s) + 0.5) / s - 0.5  # pixel i spans [i - .5, i + .5)
    # mm coordinates; canvas centre (n//2, n//2) is the origin
    x = (sub - n // 2 - offset[0]) * spec.spacing
    y = (sub - n // 2 - offset[1]) * spec.spacing
    return x[None, :], y[:, None]


def render_joint(spec: PhantomSpec, jsw: float, global_offset=(0.0, 0.0)) -> GrayImage:
    """Noiseless phantom with joint space ``jsw`` shifted by ``global_offset`` px.

    The trabecular texture is drawn from ``spec.texture_seed`` (falling back
    to ``spec.seed``); noise and the JSW sequence play no part here, so
    renders are cached on the remaining geometry.
    """
    tex_seed = spec.seed if spec.texture_seed is None else spec.texture_seed
    key = replace(spec, jsw_sequence=(REFERENCE_JSW,), noise_sigma=0.0, seed=tex_seed, texture_seed=None)
    samples = _render_cached(key, float(jsw), (float(global_offset[0]), float(global_offset[1])))
    return GrayImage(samples, spec.spacing)


@lru_cache(maxsize=64)
def _render_cached(spec: PhantomSpec, jsw: float, global_offset) -> np.ndarray:
    if not 0.5 <= jsw <= 5.0:
        raise ValueError(f"jsw {jsw} outside [0.5, 5] mm")
    if max(abs(global_offset[0]), abs(global_offset[1])) > 4:
        raise ValueError("global offsets are limited to 4 px")
    half_field = spec.canvas // 2 * spec.spacing
    if spec.bone_width / 2 + 4 * spec.spacing >= half_field or jsw / 2 + 5 * spec.spacing >= half_field:
        raise ValueError("phantom geometry exceeds the canvas")

    x, y = _supersampled_grid(spec, global_offset)
    half_w = spec.bone_width / 2
    ax = np.abs(x)
    side = half_w - ax  # distance to the side walls, > 0 inside the strip

    up_apex = -REFERENCE_JSW / 2 - (jsw - REFERENCE_JSW) / 2
    lo_apex = REFERENCE_JSW / 2 + (jsw - REFERENCE_JSW) / 2
    R, Rc = spec.head_radius, spec.cup_radius

    # upper bone: strip above a convex head (circle centred above the apex)
    cy_u = up_apex - R
    r_u = np.sqrt(x * x + (y - cy_u) ** 2)
    d_head = np.where(y > cy_u, R - r_u, np.inf)
    d_upper = np.minimum(side, d_head)

    # lower bone: strip below a concave cup (outside a circle above the apex)
    cy_l = lo_apex - Rc
    r_l = np.sqrt(x * x + (y - cy_l) ** 2)
    d_cup = np.where(y > cy_l, r_l - Rc, -np.inf)
    d_lower = np.minimum(side, d_cup)

    img = np.full(np.broadcast(x, y).shape, spec.background_intensity)
    t = spec.cortex_thickness
    for d, apex, which in ((d_upper, up_apex, 0), (d_lower, lo_apex, 1)):
        inside = d > 0
        if t > 0:
            cortex = inside & (d <= t)
            img[cortex] = spec.cortex_intensity
            core = inside & (d > t)
        else:
            core = inside
        tex = _texture(x, y - apex, _texture_params(spec.seed, which), spec.texture_amplitude)
        img[core] = spec.cancellous_intensity + tex[core]

    s = spec.supersample
    n = spec.canvas
    if spec.psf_sigma > 0:
        # detector blur on an intermediate 4x grid, then the final box average
        k = 4 if s % 4 == 0 else 1
        mid = img.reshape(n * k, s // k, n * k, s // k).mean(axis=(1, 3))
        mid = ndi.gaussian_filter(mid, spec.psf_sigma * k, mode="nearest")
        out = mid.reshape(n, k, n, k).mean(axis=(1, 3))
    else:
        out = img.reshape(n, s, n, s).mean(axis=(1, 3))
    out = np.clip(out, 0.0, 1.0)
    out.setflags(write=False)
    return out


def _file_name(index: int, jsw: float) -> str:
    return f"phantom_{index:02d}_{jsw:.2f}.pgm"


def render_sweep(spec: PhantomSpec, out_dir=None) -> tuple[PhantomManifest, list[GrayImage]]:
    """Render one noisy image per JSW value and (optionally) write them.

    Noise for image ``i`` comes from ``default_rng([seed, i])`` so renders are
    reproducible image by image. With ``out_dir`` the images are written as
    16-bit PGM with spacing sidecars plus ``manifest.json``.
    """
    if not spec.jsw_sequence:
        raise ValueError("empty JSW sequence")
    images, entries = [], []
    for i, jsw in enumerate(spec.jsw_sequence):
        img = render_joint(spec, jsw)
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, i])
            noisy = img.samples + rng.normal(0.0, spec.noise_sigma, img.shape)
            img = img.with_samples(np.clip(noisy, 0.0, 1.0))
        up, lo = bone_shifts_px(spec, jsw)
        entries.append(ManifestImage(_file_name(i, jsw), jsw, up, lo))
        images.append(img)
    manifest = PhantomManifest(spec, tuple(entries))
    if out_dir is not None:
        out_dir = Path(out_dir)
        for entry, img in zip(entries, images):
            save_pgm(out_dir / entry.file, img)
            write_sidecar(out_dir / entry.file, spec.spacing)
        _atomic_write(out_dir / "manifest.json", manifest.to_json().encode())
    return manifest, images


# ---------------------------------------------------------------------------
# hand silhouettes for the detection pipeline


@dataclass(frozen=True)
class HandTruth:
    """Ground truth for `render_hand_silhouette` (full-resolution pixels).

    ``angles`` are finger tilts in radians (positive: tip leans towards +x),
    ``bases`` the ``(x, y)`` centre of each finger root, ``tips`` the tip
    centres and ``joints`` the ``(x, y)`` centres of the dark bands, listed
    tip to palm per finger.
    """

    angles: tuple[float, ...]
    bases: tuple[tuple[float, float], ...]
    tips: tuple[tuple[float, float], ...]
    joints: tuple[tuple[tuple[float, float], ...], ...]


def render_hand_silhouette(finger_count: int = 5, angles=None, seed: int = 0, *,
                           height: int = 800, width: int = 700, jitter: float = 1.0,
                           spacing: float = 0.175, rotation: float = 0.0) -> tuple[GrayImage, HandTruth]:
    """Comb-shaped hand: a palm block entering from the bottom edge plus
    rounded fingers with dark joint bands.

    ``angles`` tilt single fingers and ``rotation`` turns the whole hand
    about the bottom centre (radians, positive tilts tips towards +x); the
    truth angles include both. ``jitter`` perturbs finger lengths and
    widths (a few pixels) and the silhouette outline (about one pixel) from
    ``seed``.
    """
    if not 1 <= finger_count <= 5:
        raise ValueError("finger_count must be in [1, 5]")
    rng = np.random.default_rng(seed)
    if angles is None:
        angles = np.zeros(finger_count)
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (finger_count,):
        raise ValueError("need one angle per finger")

    palm_top = int(height * 0.62)
    pitch = width * 0.78 / 5
    x0 = width / 2 - pitch * (finger_count - 1) / 2
    finger_w = pitch * 0.58
    lengths = np.array([0.55, 0.72, 0.8, 0.74, 0.6])[:finger_count] * palm_top
    if finger_count < 5:
        lengths = np.full(finger_count, 0.72 * palm_top)
    widths = np.full(finger_count, finger_w)
    if jitter:
        lengths = lengths + rng.uniform(-6, 6, finger_count) * jitter
        widths = widths + rng.uniform(-3, 3, finger_count) * jitter

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    pivot = np.array([width / 2, float(height)])
    c, s = np.cos(rotation), np.sin(rotation)
    if rotation:
        # sample the unrotated hand frame
        px, py = xx - pivot[0], yy - pivot[1]
        xx, yy = pivot[0] + c * px + s * py, pivot[1] - s * px + c * py

    def to_image(p):
        q = np.asarray(p) - pivot
        return (float(pivot[0] + c * q[0] - s * q[1]), float(pivot[1] + s * q[0] + c * q[1]))
    if jitter:
        # about a pixel of outline jitter
        from scipy import ndimage as ndi

        wob = ndi.gaussian_filter(rng.standard_normal((height, width)), 2.0)
        wob *= jitter / (wob.std() + 1e-12)
        xx_j, yy_j = xx + wob, yy + np.roll(wob, 17, axis=0)
    else:
        xx_j, yy_j = xx, yy

    tissue, band, background = 0.72, 0.52, 0.06
    img = np.full((height, width), background)
    margin = max(20.0, 0.06 * width)
    palm_l = x0 - finger_w / 2 - margin * 0.5
    palm_r = x0 + pitch * (finger_count - 1) + finger_w / 2 + margin * 0.5
    palm = (yy_j >= palm_top) & (xx_j >= palm_l) & (xx_j <= palm_r)
    img[palm] = tissue

    bases, tips, joints = [], [], []
    overlap = finger_w * 0.8  # fingers root inside the palm
    for k in range(finger_count):
        bx, by = x0 + k * pitch, float(palm_top)
        th = angles[k]
        # axis pointing from base to tip
        dx, dy = np.sin(th), -np.cos(th)
        rx, ry = xx_j - bx, yy_j - by
        along = rx * dx + ry * dy
        across = rx * dy - ry * dx
        hw = widths[k] / 2
        L = lengths[k]
        body = (np.abs(across) <= hw) & (along >= -overlap) & (along <= L - hw)
        cap = ((along - (L - hw)) ** 2 + across ** 2 <= hw * hw) & (along > L - hw)
        finger = body | cap
        img[finger] = tissue
        n_joints = 2 if (finger_count == 5 and k == 0) else 3
        fr = [0.78, 0.5, 0.08] if n_joints == 3 else [0.62, 0.08]
        centres = []
        for f in fr:
            a = f * L
            sel = finger & (np.abs(along - a) <= 3.0)
            img[sel] = band
            centres.append(to_image((bx + a * dx, by + a * dy)))
        bases.append(to_image((bx, by)))
        tips.append(to_image((bx + L * dx, by + L * dy)))
        joints.append(tuple(centres))

    return (GrayImage(img, spacing),
            HandTruth(tuple(float(a + rotation) for a in angles), tuple(bases), tuple(tips), tuple(joints)))
