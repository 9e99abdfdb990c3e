"""Upper/lower bone separation along the deepest horizontal gully.

A depth map scores how much each pixel looks like the floor of a dark
valley between brighter blocks above and below. Dynamic programming over
that map finds the left-to-right path (one row step per column at most)
with the largest accumulated depth; the rows above and below the path form
the two bone regions.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .raster import as_array

__all__ = [
    "GeometryError",
    "RegionMasks",
    "depth_map",
    "integral_map",
    "segmentation_curve",
    "region_masks",
    "segment",
    "gully_range",
    "dump_debug",
]


class GeometryError(ValueError):
    """Window too small for the requested gully widths."""


@dataclass(frozen=True, eq=False)
class RegionMasks:
    """Disjoint boolean masks; ``s0`` above the curve, ``s1`` below."""

    s0: np.ndarray
    s1: np.ndarray
    curve: np.ndarray

    def swapped(self) -> "RegionMasks":
        return RegionMasks(self.s1, self.s0, self.curve)

    def eroded(self, margin: int) -> "RegionMasks":
        """Drop ``margin`` rows next to the curve from both masks."""
        if margin <= 0:
            return self
        rows = np.arange(self.s0.shape[0])[:, None]
        c = self.curve[None, :]
        return RegionMasks(self.s0 & (rows < c - margin), self.s1 & (rows > c + margin), self.curve)


def gully_range(spacing: float, i_min: int = 1, i_max: int = 9, reference: float = 0.175) -> tuple[int, int]:
    """Scale the default 1..9 px gully widths (at 0.175 mm/px) to ``spacing``."""

    def odd(v):
        # nearest odd integer, ties upwards
        return max(1, 2 * int(np.floor((v - 1) / 2 + 0.5)) + 1)

    scale = reference / spacing
    lo, hi = odd(i_min * scale), odd(i_max * scale)
    return lo, max(lo, hi)


def _block_means(padded: np.ndarray, height: int) -> np.ndarray:
    """Means of 3-wide, ``height``-tall blocks anchored at each top-left.

    Direct sums rather than an integral image, so identical neighbourhoods
    give bit-identical means (flat regions score exactly zero depth).
    """
    s = ndi.correlate1d(padded, np.ones(height), axis=0, mode="constant", origin=-(height // 2))
    s = ndi.correlate1d(s, np.ones(3), axis=1, mode="constant", origin=-1)
    return s[: padded.shape[0] - height + 1, : padded.shape[1] - 2] / (3.0 * height)


def depth_map(win, i_min: int = 1, i_max: int = 9) -> np.ndarray:
    """Max-pooled gully depth over odd widths ``i`` in ``[i_min, i_max]``.

    For width ``i`` the centre block spans rows ``y-(i-1)/2 .. y+(i-1)/2``
    over columns ``x-1..x+1``; its mean is subtracted from the mean of the
    equally sized block directly below (``g_ia``) and above (``g_ib``). The
    depth is ``max(0, min(g_ia, g_ib))``. Borders replicate edge pixels.
    """
    f = as_array(win)
    rows, cols = f.shape
    if i_min < 1 or i_min % 2 == 0 or i_max % 2 == 0 or i_min > i_max:
        raise GeometryError(f"gully widths must be odd with 1 <= i_min <= i_max, got {i_min}, {i_max}")
    if rows <= 3 * i_max:
        raise GeometryError(f"window height {rows} must exceed 3 * i_max = {3 * i_max}")
    out = np.zeros_like(f)
    for i in range(i_min, i_max + 1, 2):
        h = (i - 1) // 2
        pad = h + i
        p = np.pad(f, ((pad, pad), (1, 1)), mode="edge")
        means = _block_means(p, i)  # row r <-> block starting at padded row r
        # block covering rows [y + a, y + a + i) starts at padded row y + a + pad
        centre = means[pad - h: pad - h + rows]
        below = means[pad + h + 1: pad + h + 1 + rows]
        above = means[pad - h - i: pad - h - i + rows]
        g = np.minimum(below - centre, above - centre)
        np.maximum(out, g, out=out)
    return out


def integral_map(d) -> np.ndarray:
    """Accumulated best path score from the left border to each pixel."""
    d = np.asarray(d, dtype=np.float64)
    acc = np.empty_like(d)
    acc[:, 0] = d[:, 0]
    for x in range(1, d.shape[1]):
        prev = acc[:, x - 1]
        best = prev.copy()
        best[1:] = np.maximum(best[1:], prev[:-1])
        best[:-1] = np.maximum(best[:-1], prev[1:])
        acc[:, x] = best + d[:, x]
    return acc


def segmentation_curve(acc) -> np.ndarray:
    """Backtrack the maximum-sum path; ties resolve to the smaller row."""
    acc = np.asarray(acc)
    rows, cols = acc.shape
    c = np.empty(cols, dtype=np.int64)
    c[-1] = int(np.argmax(acc[:, -1]))
    for x in range(cols - 2, -1, -1):
        lo = max(0, c[x + 1] - 1)
        hi = min(rows, c[x + 1] + 2)
        c[x] = lo + int(np.argmax(acc[lo:hi, x]))
    return c


def region_masks(curve, shape) -> RegionMasks:
    """Masks for ``y < c(x)`` and ``y > c(x)``; ``shape`` is ``(rows, cols)``."""
    curve = np.asarray(curve, dtype=np.int64)
    rows, cols = shape
    if curve.shape != (cols,):
        raise ValueError(f"curve length {curve.shape} does not match width {cols}")
    if curve.min() < 0 or curve.max() >= rows:
        raise ValueError("curve rows out of range")
    y = np.arange(rows)[:, None]
    return RegionMasks(y < curve[None, :], y > curve[None, :], curve)


def segment(win, i_min: int = 1, i_max: int = 9) -> RegionMasks:
    arr = as_array(win)
    curve = segmentation_curve(integral_map(depth_map(arr, i_min, i_max)))
    return region_masks(curve, arr.shape)


def dump_debug(directory, win, i_min: int = 1, i_max: int = 9, stem: str = "segmentation") -> list[Path]:
    """Write the depth map (16-bit PGM, scaled to its max) and curve CSV."""
    from .raster import _atomic_write, save_pgm

    directory = Path(directory)
    d = depth_map(win, i_min, i_max)
    curve = segmentation_curve(integral_map(d))
    peak = d.max()
    pgm = save_pgm(directory / f"{stem}_depth.pgm", d / peak if peak > 0 else d)
    csv = directory / f"{stem}_curve.csv"
    _atomic_write(csv, ("column,row\n" + "".join(f"{x},{y}\n" for x, y in enumerate(curve))).encode())
    return [pgm, csv]
