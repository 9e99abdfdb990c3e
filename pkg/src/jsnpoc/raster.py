"""Grayscale rasters: representation, file I/O, windowing and filtering.

Images are held as ``(height, width)`` float64 arrays in ``[0, 1]`` (row
index ``y``, column index ``x``) together with an isotropic pixel spacing in
millimetres.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

__all__ = [
    "GrayImage",
    "WindowRect",
    "ImageReadError",
    "ChannelError",
    "MissingSpacingError",
    "WindowOutOfBoundsError",
    "load_image",
    "save_pgm",
    "write_sidecar",
    "extract_window",
    "median_filter",
    "hanning_window",
    "as_array",
]


class ImageReadError(ValueError):
    """The file could not be read as an 8/16-bit grayscale PNG or PGM."""


class ChannelError(ImageReadError):
    """The file holds more than one channel."""


class MissingSpacingError(ValueError):
    """No pixel spacing was given and no sidecar metadata exists."""


class WindowOutOfBoundsError(ValueError):
    """A window rectangle does not fit inside its parent image."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale raster with isotropic pixel spacing (mm/pixel)."""

    samples: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("samples must lie in [0, 1]")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def with_samples(self, samples) -> "GrayImage":
        return GrayImage(samples, self.spacing)


@dataclass(frozen=True)
class WindowRect:
    """Rotated rectangle inside a parent image.

    ``center`` is ``(x, y)`` in parent pixel coordinates. Local pixel
    ``(width // 2, height // 2)`` of the extracted window lands on
    ``center``. ``rotation`` (radians) turns the window's vertical axis; a
    positive angle tilts the window's "up" direction towards +x.
    """

    center: tuple[float, float]
    width: int = 128
    height: int = 128
    rotation: float = 0.0

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if v < 32 or v % 2:
                raise ValueError(f"{name} must be even and >= 32, got {v}")
        if not -np.pi / 2 < self.rotation <= np.pi / 2:
            raise ValueError("rotation must lie in (-pi/2, pi/2]")

    def sample_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Parent ``(x, y)`` coordinates of every window pixel."""
        u = np.arange(self.width) - self.width // 2
        v = np.arange(self.height) - self.height // 2
        uu, vv = np.meshgrid(u, v)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        x = self.center[0] + c * uu - s * vv
        y = self.center[1] + s * uu + c * vv
        return x, y

    def corners(self) -> np.ndarray:
        x, y = self.sample_grid()
        return np.array([[x[i, j], y[i, j]] for i in (0, -1) for j in (0, -1)])


def as_array(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.samples
    return np.asarray(img, dtype=np.float64)


# ---------------------------------------------------------------------------
# file I/O

def _read_pgm(data: bytes) -> tuple[np.ndarray, int]:
    magic = data[:2]
    if magic == b"P6" or magic == b"P3":
        raise ChannelError("PPM colour files are not supported")
    if magic != b"P5":
        raise ImageReadError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageReadError("truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise ImageReadError(f"invalid PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - pos < count * dtype.itemsize:
        raise ImageReadError("truncated PGM pixel data")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(height, width), maxval


def _read_png(path: Path) -> tuple[np.ndarray, int]:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            if len(im.getbands()) != 1:
                raise ChannelError(f"{path}: {len(im.getbands())}-channel image")
            arr = np.array(im)
            mode = im.mode
    except ChannelError:
        raise
    except Exception as exc:  # PIL raises a zoo of types
        raise ImageReadError(f"{path}: {exc}") from exc
    if mode in ("L", "P"):
        return arr.astype(np.uint8), 255
    if mode.startswith("I"):
        return arr, 65535
    if mode == "1":
        return arr.astype(np.uint8), 1
    raise ImageReadError(f"{path}: unsupported PNG mode {mode}")


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def load_image(path, spacing: float | None = None) -> GrayImage:
    """Read an 8/16-bit grayscale PNG or PGM into a `GrayImage`.

    Samples are scaled by ``1 / maxval`` (``2**bitdepth - 1``). The pixel
    spacing comes from ``spacing`` when given, otherwise from a JSON sidecar
    ``<stem>.json`` holding ``{"spacing_mm": ...}``.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"{path}: {exc}") from exc
    if raw[:2] in (b"P5", b"P6", b"P3", b"P2"):
        if raw[:2] == b"P2":
            raise ImageReadError(f"{path}: ASCII PGM is not supported")
        arr, maxval = _read_pgm(raw)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        arr, maxval = _read_png(path)
    else:
        raise ImageReadError(f"{path}: unrecognised file format")

    if spacing is None:
        side = _sidecar_path(path)
        if not side.exists():
            raise MissingSpacingError(f"{path}: no spacing given and no sidecar {side.name}")
        try:
            spacing = float(json.loads(side.read_text())["spacing_mm"])
        except (KeyError, ValueError, TypeError) as exc:
            raise MissingSpacingError(f"{side}: invalid sidecar ({exc})") from exc
    return GrayImage(arr.astype(np.float64) / maxval, spacing)


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pgm(path, img, *, sidecar: bool = False) -> Path:
    """Write a 16-bit binary PGM (values rounded to the nearest code)."""
    path = Path(path)
    arr = np.clip(as_array(img), 0.0, 1.0)
    codes = np.rint(arr * 65535).astype(">u2")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii")
    _atomic_write(path, header + codes.tobytes())
    if sidecar:
        if not isinstance(img, GrayImage):
            raise TypeError("a sidecar needs a GrayImage with spacing")
        write_sidecar(path, img.spacing)
    return path


def write_sidecar(path, spacing: float) -> Path:
    side = _sidecar_path(Path(path))
    _atomic_write(side, json.dumps({"spacing_mm": spacing}).encode())
    return side


# ---------------------------------------------------------------------------
# geometry and filters

def extract_window(img: GrayImage, rect: WindowRect) -> GrayImage:
    """Resample ``rect`` out of ``img`` with bilinear interpolation.

    Raises `WindowOutOfBoundsError` when any sample falls outside the
    parent raster.
    """
    arr = as_array(img)
    x, y = rect.sample_grid()
    eps = 1e-9
    if (x.min() < -eps or y.min() < -eps or x.max() > arr.shape[1] - 1 + eps
            or y.max() > arr.shape[0] - 1 + eps):
        raise WindowOutOfBoundsError(f"{rect} exceeds image of shape {arr.shape}")
    if rect.rotation == 0.0 and float(rect.center[0]).is_integer() and float(rect.center[1]).is_integer():
        x0 = int(rect.center[0]) - rect.width // 2
        y0 = int(rect.center[1]) - rect.height // 2
        out = arr[y0:y0 + rect.height, x0:x0 + rect.width].copy()
    else:
        out = ndi.map_coordinates(arr, [y, x], order=1, mode="nearest")
    spacing = img.spacing if isinstance(img, GrayImage) else 1.0
    return GrayImage(np.clip(out, 0.0, 1.0), spacing)


def median_filter(img, radius: int = 1):
    """Median over the ``(2r+1)**2`` neighbourhood with edge replication."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    out = ndi.median_filter(as_array(img), size=2 * radius + 1, mode="nearest")
    if isinstance(img, GrayImage):
        return img.with_samples(out)
    return out


def hanning_window(M: int, N: int, full_taper: bool = False) -> np.ndarray:
    """Raised-cosine taper of ``N`` rows by ``M`` columns.

    Coordinates are centred (``x`` in ``[-M/2, M/2)``), so the taper is 1 at
    sample ``(N//2, M//2)``. By default ``w = (1 + cos(pi x / M)) / 2`` per
    axis, which is still 0.5 on the first row and column. ``full_taper``
    treats ``M`` as the half-width instead, ``(1 + cos(2 pi x / M)) / 2``,
    which reaches zero at the border.
    """
    if M < 2 or N < 2:
        raise ValueError("window dimensions must be >= 2")
    k = 2.0 if full_taper else 1.0
    x = np.arange(M) - M // 2
    y = np.arange(N) - N // 2
    wx = (1.0 + np.cos(k * np.pi * x / M)) / 2.0
    wy = (1.0 + np.cos(k * np.pi * y / N)) / 2.0
    return np.outer(wy, wx)
