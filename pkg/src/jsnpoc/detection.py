"""Finger midlines and joint-window proposals from a hand radiograph.

The geometry runs on a 1/5-scale copy: Otsu binarization, morphological
smoothing, extrema of the simplified hand outline (tips and the valleys
between fingers), then a total-least-squares midline per finger. Joint
windows are proposed at full resolution from dark valleys in the intensity
profile sampled along each midline.

Coordinates are ``(x, y)`` pixels with ``y`` growing downwards; the hand is
expected to enter the image from the bottom edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from scipy.signal import find_peaks

from .raster import GrayImage, WindowOutOfBoundsError, WindowRect, as_array

__all__ = [
    "DetectionError",
    "DetectConfig",
    "FingerRegion",
    "JointProposal",
    "HandDetection",
    "otsu_binarize",
    "smooth_mask",
    "contour_extrema",
    "fit_midlines",
    "finger_profile",
    "propose_joints",
    "downscale_for_detection",
    "to_full_scale",
    "detect_joints",
]

SCALE = 5


class DetectionError(ValueError):
    """A detection stage could not produce a result.

    ``str(exc)`` reads ``"<stage> failed: <reason>"``.
    """

    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"{stage} failed: {reason}")


@dataclass(frozen=True)
class DetectConfig:
    smooth_radius: int = 2
    epsilon_fraction: float = 0.02
    extrema_fraction: float = 0.05
    window_size: int = 128
    prominence: float = 0.05
    thumb_prominence: float = 0.03
    thumb: str = "auto"  # "auto", "left", "right" or "none"


@dataclass(frozen=True)
class FingerRegion:
    """One finger: outline tip, flanking valleys and fitted midline.

    ``direction`` is the unit vector of the midline pointing from the tip
    towards the palm; ``point`` is the centroid of the fitted pixels.
    """

    tip: tuple[float, float]
    valleys: tuple[tuple[float, float], tuple[float, float]]
    point: tuple[float, float]
    direction: tuple[float, float]
    label: int
    is_thumb: bool = False

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.hypot(*d)
        if not n > 0:
            raise ValueError("midline direction must be non-zero")
        object.__setattr__(self, "direction", (float(d[0] / n), float(d[1] / n)))

    @property
    def angle(self) -> float:
        """Tilt of the palm-to-tip axis from vertical, positive towards +x."""
        dx, dy = self.direction
        return float(np.arctan2(-dx, dy))

    def scaled(self, factor: float, offset: float) -> "FingerRegion":
        def m(p):
            return (p[0] * factor + offset, p[1] * factor + offset)

        return FingerRegion(m(self.tip), (m(self.valleys[0]), m(self.valleys[1])), m(self.point),
                            self.direction, self.label, self.is_thumb)


@dataclass(frozen=True)
class JointProposal:
    window: WindowRect
    joint_kind: str
    score: float
    finger: int = 0
    position: tuple[float, float] = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "finger": self.finger,
            "joint_kind": self.joint_kind,
            "center": [float(self.window.center[0]), float(self.window.center[1])],
            "size": [self.window.width, self.window.height],
            "rotation": float(self.window.rotation),
            "score": float(self.score),
        }


@dataclass
class HandDetection:
    fingers: list[FingerRegion]
    proposals: list[JointProposal]
    mask: np.ndarray = field(repr=False)
    threshold: float = 0.0
    polygon: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# binarization and morphology

def otsu_binarize(img, bins: int = 256) -> tuple[np.ndarray, float]:
    """Otsu threshold over ``bins`` equal bins of ``[0, 1]``.

    Bin ``k`` holds samples in ``(k / bins, (k + 1) / bins]`` (zero goes into
    bin 0). The returned threshold is the upper edge of the last background
    bin, so ``mask == samples > threshold`` agrees with the histogram split.
    Ties in between-class variance resolve to the lowest threshold.
    """
    a = as_array(img)
    if a.size == 0 or a.max() == a.min():
        raise DetectionError("binarization", "constant image")
    idx = np.clip(np.ceil(a * bins).astype(np.int64) - 1, 0, bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    levels = np.arange(bins, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]
    m0 = np.cumsum(hist * levels)[:-1]
    total, mtotal = hist.sum(), (hist * levels).sum()
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (m0 / w0 - (mtotal - m0) / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    k = int(np.argmax(between))
    threshold = (k + 1) / bins
    return idx > k, float(threshold)


def _disc(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return r[:, None] ** 2 + r[None, :] ** 2 <= radius * radius


def smooth_mask(mask, radius: int = 2) -> np.ndarray:
    """Opening then closing with a disc, borders replicated."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    m = np.asarray(mask, dtype=bool)
    se = _disc(radius)
    pad = 2 * radius
    p = np.pad(m, pad, mode="edge")
    p = ndi.binary_dilation(ndi.binary_erosion(p, se, border_value=1), se)
    p = ndi.binary_erosion(ndi.binary_dilation(p, se), se, border_value=1)
    return p[pad:-pad, pad:-pad]


# ---------------------------------------------------------------------------
# outline extrema

def _outline_path(mask: np.ndarray, epsilon: float) -> np.ndarray:
    """Simplified outer outline as an open ``(x, y)`` path, left end first.

    The raw contour is cut where it runs along the bottom border before
    simplification, so the path ends are the points where the hand leaves
    the image.
    """
    from skimage.measure import approximate_polygon, find_contours

    rows = mask.shape[0]
    contours = find_contours(np.pad(mask, 1).astype(np.float64), 0.5)
    if not contours:
        raise DetectionError("contour extraction", "no outline found")
    ring = max(contours, key=len)[:-1] - 1  # (row, col), closing repeat dropped
    on_bottom = ring[:, 0] > rows - 1
    if not on_bottom.any():
        raise DetectionError("contour extraction", "hand does not touch the bottom border")
    if on_bottom.all():
        raise DetectionError("contour extraction", "outline lies on the bottom border")
    # longest cyclic run of contour points off the bottom border
    n = len(ring)
    best = (0, 0)
    for i in range(n):
        if on_bottom[i - 1] and not on_bottom[i]:
            j = i
            while not on_bottom[j % n]:
                j += 1
            if j - i > best[1] - best[0]:
                best = (i, j)
    run = ring[[k % n for k in range(*best)]]
    poly = approximate_polygon(run, tolerance=epsilon)
    pts = np.column_stack([poly[:, 1], poly[:, 0]])
    if pts[0, 0] > pts[-1, 0]:
        pts = pts[::-1]
    return pts


def _zigzag(h: np.ndarray, delta: float) -> list[tuple[int, str]]:
    """Alternating extrema of ``h`` whose swings exceed ``delta``."""
    out = []
    mode = "max"  # the path starts at the bottom, so the first turn is a tip
    cand, ci = h[0], 0
    for i in range(1, len(h)):
        v = h[i]
        if mode == "max":
            if v > cand:
                cand, ci = v, i
            elif cand - v > delta:
                out.append((ci, "max"))
                mode, cand, ci = "min", v, i
        else:
            if v < cand:
                cand, ci = v, i
            elif v - cand > delta:
                out.append((ci, "min"))
                mode, cand, ci = "max", v, i
    if mode == "max" and cand > h[0] + delta and cand - h[-1] > delta:
        out.append((ci, "max"))
    return out


def _plateau_point(pts, h, i, tol):
    lo = hi = i
    while lo > 0 and abs(h[lo - 1] - h[i]) <= tol:
        lo -= 1
    while hi < len(h) - 1 and abs(h[hi + 1] - h[i]) <= tol:
        hi += 1
    return tuple(float(v) for v in (pts[lo] + pts[hi]) / 2)


def contour_extrema(mask, epsilon: float | None = None, delta: float | None = None,
                    return_path: bool = False):
    """Tips (maxima) and inter-finger valleys (minima) of the hand outline.

    The outline is simplified with tolerance ``epsilon`` (default 2% of the
    image height); vertices then alternate between local maxima and minima
    of the height above the bottom border, with swings smaller than
    ``delta`` (default 5% of the height) ignored. Runs of vertices at equal
    height collapse to their midpoint. Both lists follow the outline from
    left to right.
    """
    m = np.asarray(mask, dtype=bool)
    rows = m.shape[0]
    labels, count = ndi.label(m)
    if count == 0:
        raise DetectionError("contour extraction", "empty mask")
    if count > 1:
        raise DetectionError("contour extraction", f"{count} foreground components, expected 1")
    eps = 0.02 * rows if epsilon is None else epsilon
    dlt = 0.05 * rows if delta is None else delta
    pts = _outline_path(m, eps)
    h = (rows - 1) - pts[:, 1]
    ext = _zigzag(h, dlt)
    maxima = [_plateau_point(pts, h, i, 1.0) for i, kind in ext if kind == "max"]
    minima = [_plateau_point(pts, h, i, 1.0) for i, kind in ext if kind == "min"]
    if not maxima:
        raise DetectionError("contour extraction", "no extrema found")
    if return_path:
        return maxima, minima, pts
    return maxima, minima


# ---------------------------------------------------------------------------
# midlines

def _border_valley(pts, h, tip_index, level, step):
    """Walk the outline from the tip until it drops to ``level``."""
    i = tip_index
    while 0 < i < len(pts) - 1 and h[i] > level:
        i += step
    j = i - step
    if h[j] != h[i] and h[i] <= level < h[j]:
        t = (h[j] - level) / (h[j] - h[i])
        return tuple(float(v) for v in pts[j] + t * (pts[i] - pts[j]))
    return tuple(float(v) for v in pts[i])


def _tls_line(xs, ys):
    c = np.array([xs.mean(), ys.mean()])
    d = np.column_stack([xs - c[0], ys - c[1]])
    _, _, vt = np.linalg.svd(d, full_matrices=False)
    return c, vt[0]


def _finger_pixels(mask, tip, cut_point, normal, margin=1.0):
    """Mask pixels beyond the cut line on the tip side, connected to the tip."""
    cy, cx = np.nonzero(mask)
    side = (cx - cut_point[0]) * normal[0] + (cy - cut_point[1]) * normal[1]
    keep = side > margin
    sel = np.zeros_like(mask)
    sel[cy[keep], cx[keep]] = True
    labels, count = ndi.label(sel)
    if count == 0:
        return None
    ty = int(np.clip(round(tip[1]), 0, mask.shape[0] - 1))
    tx = int(np.clip(round(tip[0]), 0, mask.shape[1] - 1))
    lab = labels[ty, tx]
    if lab == 0:
        # tip sits on the outline; take the component nearest to it
        yy, xx = np.nonzero(labels)
        k = np.argmin((xx - tip[0]) ** 2 + (yy - tip[1]) ** 2)
        lab = labels[yy[k], xx[k]]
    ys, xs = np.nonzero(labels == lab)
    return xs.astype(np.float64), ys.astype(np.float64)


def fit_midlines(mask, extrema, refine: int = 3, thumb: str = "auto") -> list[FingerRegion]:
    """Total-least-squares midline for every tip.

    ``extrema`` is ``(maxima, minima, path)`` from `contour_extrema` with
    ``return_path=True``, or just ``(maxima, minima)`` when every tip has
    two flanking valleys. Outer fingers lacking a valley get one where the
    outline falls to the height of their inner valley. The first fit uses
    the pixels beyond the valley chord; ``refine`` more fits re-cut the
    finger perpendicular to the current axis at the higher valley.
    """
    m = np.asarray(mask, dtype=bool)
    rows = m.shape[0]
    maxima, minima = list(extrema[0]), list(extrema[1])
    path = extrema[2] if len(extrema) > 2 else None
    n = len(maxima)
    if n == 0:
        raise DetectionError("midline fitting", "no finger tips")
    if len(minima) != n - 1 and path is None:
        raise DetectionError("midline fitting", "tips need flanking valleys")

    valleys = []
    if path is not None:
        h = (rows - 1) - path[:, 1]
        tip_idx = [int(np.argmin(np.hypot(*(path - np.asarray(t)).T))) for t in maxima]
    for k in range(n):
        left = minima[k - 1] if k > 0 else None
        right = minima[k] if k < len(minima) else None
        if left is None or right is None:
            if path is None:
                raise DetectionError("midline fitting", "outer finger needs the outline path")
            other = right if left is None else left
            if other is None:
                # single finger: fall back to the outline ends
                level = max(h[0], h[-1])
            else:
                level = (rows - 1) - other[1]
            sub = _border_valley(path, h, tip_idx[k], level, -1 if left is None else 1)
            left, right = (sub, right) if left is None else (left, sub)
            if other is None:
                right = _border_valley(path, h, tip_idx[k], level, 1)
        valleys.append((tuple(left), tuple(right)))

    fingers, ends = [], []
    for k, (tip, (vl, vr)) in enumerate(zip(maxima, valleys)):
        tip = np.asarray(tip, dtype=np.float64)
        vl, vr = np.asarray(vl), np.asarray(vr)
        chord = vr - vl
        normal = np.array([chord[1], -chord[0]])
        if np.dot(tip - vl, normal) < 0:
            normal = -normal
        normal /= np.hypot(*normal)
        px = _finger_pixels(m, tip, vl, normal)
        if px is None or px[0].size < 3:
            raise DetectionError("midline fitting", f"empty finger area for tip {k + 1}")
        centre, d = _tls_line(*px)
        for _ in range(refine):
            if np.dot(tip - centre, d) < 0:
                d = -d  # d now points towards the tip
            higher = vl if np.dot(vl, d) > np.dot(vr, d) else vr
            got = _finger_pixels(m, tip, higher, d)
            if got is None or got[0].size < 3:
                break
            px = got
            centre, d = _tls_line(*px)
        if np.dot(centre - tip, d) < 0:
            d = -d  # tip to palm
        # outermost finger pixel on the axis; the simplified outline clips tips
        ends.append(centre + d * np.min((px[0] - centre[0]) * d[0] + (px[1] - centre[1]) * d[1]))
        fingers.append(FingerRegion(tuple(tip), (tuple(vl), tuple(vr)), tuple(centre), tuple(d), k + 1))
    return _mark_thumb(fingers, thumb, ends)


def _mark_thumb(fingers, thumb, ends=None):
    if len(fingers) != 5 or thumb == "none":
        return fingers
    if thumb == "auto":
        # the shorter outer finger, measured from its end to its inner valley
        def reach(k, inner):
            f = fingers[k]
            end = f.tip if ends is None else ends[k]
            return np.dot(np.asarray(f.valleys[inner]) - end, f.direction)

        idx = 0 if reach(0, 1) <= reach(4, 0) else 4
    elif thumb in ("left", "right"):
        idx = 0 if thumb == "left" else 4
    else:
        raise ValueError(f"unknown thumb option {thumb!r}")
    out = list(fingers)
    f = out[idx]
    out[idx] = FingerRegion(f.tip, f.valleys, f.point, f.direction, f.label, True)
    return out


# ---------------------------------------------------------------------------
# joint proposals

def finger_profile(img, region: FingerRegion, half_width: float | None = None,
                   step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Mean intensity across a strip along the midline, from the tip inwards.

    Returns ``(positions, profile)`` where ``positions[i]`` is the parent
    ``(x, y)`` of sample ``i`` on the midline. The strip stops at the image
    border. ``half_width`` defaults to a quarter of the valley distance.
    """
    a = as_array(img)
    rows, cols = a.shape
    d = np.asarray(region.direction)
    nrm = np.array([-d[1], d[0]])
    c = np.asarray(region.point)
    tip = np.asarray(region.tip)
    # start at the tip projected on the midline
    start = c + np.dot(tip - c, d) * d
    if half_width is None:
        v0, v1 = (np.asarray(v) for v in region.valleys)
        half_width = max(2.0, abs(np.dot(v1 - v0, nrm)) / 4)
    ts = []
    t = 0.0
    while True:
        p = start + t * d
        if not (0 <= p[0] <= cols - 1 and 0 <= p[1] <= rows - 1):
            break
        ts.append(t)
        t += step
    if len(ts) < 3:
        raise DetectionError("joint proposal", "midline leaves the image immediately")
    ts = np.asarray(ts)
    across = np.arange(-half_width, half_width + 1e-9, 1.0)
    px = start[0] + ts[:, None] * d[0] + across[None, :] * nrm[0]
    py = start[1] + ts[:, None] * d[1] + across[None, :] * nrm[1]
    vals = ndi.map_coordinates(a, [py, px], order=1, mode="nearest")
    pos = np.column_stack([start[0] + ts * d[0], start[1] + ts * d[1]])
    return pos, vals.mean(axis=1)


def _fit_window(center, size, rotation, shape):
    """The window moved the least distance needed to lie inside the image."""
    rect = WindowRect(tuple(center), size, size, rotation)
    x, y = rect.sample_grid()
    rows, cols = shape
    dx = max(0.0, -x.min()) - max(0.0, x.max() - (cols - 1))
    dy = max(0.0, -y.min()) - max(0.0, y.max() - (rows - 1))
    if dx == 0 and dy == 0:
        return rect
    moved = WindowRect((center[0] + dx, center[1] + dy), size, size, rotation)
    x, y = moved.sample_grid()
    if x.min() < -1e-9 or y.min() < -1e-9 or x.max() > cols - 1 + 1e-9 or y.max() > rows - 1 + 1e-9:
        raise WindowOutOfBoundsError("window does not fit in the image")
    return moved


def propose_joints(img, region: FingerRegion, *, window_size: int = 128, prominence: float | None = None,
                   max_joints: int | None = None, smooth: float = 1.5) -> list[JointProposal]:
    """Joint windows at the dark valleys of the midline profile.

    Valleys are minima of the (Gaussian-smoothed) profile with at least
    ``prominence`` depth; the most prominent three (two on a thumb) are kept
    and labelled tip to palm as DIP, PIP, MCP (IP, MCP on a thumb). Windows
    are rotated to the midline and nudged inside the image; valleys whose
    window cannot fit are dropped.
    """
    thumb = region.is_thumb
    if prominence is None:
        prominence = 0.03 if thumb else 0.05
    if max_joints is None:
        max_joints = 2 if thumb else 3
    pos, prof = finger_profile(img, region)
    if smooth > 0:
        prof = ndi.gaussian_filter1d(prof, smooth, mode="nearest")
    idx, props = find_peaks(-prof, prominence=prominence)
    if idx.size == 0:
        return []
    best = np.argsort(-props["prominences"], kind="stable")[:max_joints]
    keep = np.sort(idx[best])
    prom = {int(i): float(p) for i, p in zip(idx, props["prominences"])}
    kinds = ["IP", "MCP"] if thumb else ["DIP", "PIP", "MCP"]
    shape = as_array(img).shape
    out = []
    for kind, i in zip(kinds, keep):
        centre = tuple(float(v) for v in pos[i])
        try:
            rect = _fit_window(centre, window_size, region.angle, shape)
        except WindowOutOfBoundsError:
            continue
        out.append(JointProposal(rect, kind, prom[int(i)], region.label, centre))
    return out


# ---------------------------------------------------------------------------
# scale handling and the full pipeline

def downscale_for_detection(img, factor: int = SCALE) -> GrayImage:
    """Box-filter downsample by ``factor`` (trailing partial blocks dropped)."""
    a = as_array(img)
    rows, cols = a.shape
    if rows < 10 * factor or cols < 10 * factor:
        raise DetectionError("downscaling", f"image {cols}x{rows} smaller than {10 * factor} px")
    r, c = rows // factor, cols // factor
    small = a[:r * factor, :c * factor].reshape(r, factor, c, factor).mean(axis=(1, 3))
    spacing = img.spacing * factor if isinstance(img, GrayImage) else float(factor)
    return GrayImage(np.clip(small, 0.0, 1.0), spacing)


def to_full_scale(p, factor: int = SCALE) -> tuple[float, float]:
    """Small-scale pixel ``(x, y)`` to the centre of its full-scale block."""
    off = (factor - 1) / 2
    return (p[0] * factor + off, p[1] * factor + off)


def detect_joints(img, config: DetectConfig = DetectConfig()) -> HandDetection:
    """Run the full detection pipeline on a hand radiograph."""
    small = downscale_for_detection(img)
    mask, thr = otsu_binarize(small)
    mask = smooth_mask(mask, config.smooth_radius)
    labels, count = ndi.label(mask)
    if count > 1:
        # keep the component touching the bottom border with the largest area
        bottom = set(labels[-1][labels[-1] > 0].tolist())
        if not bottom:
            raise DetectionError("contour extraction", "no foreground touches the bottom border")
        sizes = ndi.sum(mask, labels, sorted(bottom))
        mask = labels == sorted(bottom)[int(np.argmax(sizes))]
    rows = mask.shape[0]
    maxima, minima, path = contour_extrema(mask, config.epsilon_fraction * rows,
                                           config.extrema_fraction * rows, return_path=True)
    fingers = fit_midlines(mask, (maxima, minima, path), thumb=config.thumb)
    off = (SCALE - 1) / 2
    full = [f.scaled(SCALE, off) for f in fingers]
    proposals = []
    for f in full:
        prom = config.thumb_prominence if f.is_thumb else config.prominence
        proposals.extend(propose_joints(img, f, window_size=config.window_size, prominence=prom))
    return HandDetection(full, proposals, mask, thr, path * SCALE + off)
