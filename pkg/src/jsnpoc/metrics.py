"""Error and dispersion statistics for pairwise JSN series.

A series of ``n`` images yields ``JSN_fg`` for every pair. Against a known
truth ``T_fg`` it gives the mean absolute error and the RMSD; without truth,
the spread of the indirect estimates ``JSN_fk + JSN_kg`` over intermediate
images ``k`` measures how self-consistent the direct value is.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SeriesResult",
    "MissingTruthError",
    "mean_error",
    "rmsd",
    "indirect_mean_and_sigma",
    "sigma_matrix",
    "rmsd_to_mean_error",
    "pearson",
    "pair_table",
]


class MissingTruthError(ValueError):
    """A truth matrix is required for this statistic."""


@dataclass(frozen=True, eq=False)
class SeriesResult:
    """Pairwise measurements of one series.

    ``direct[f, g]`` is ``JSN_fg``; only ``f < g`` entries are read and the
    lower triangle is treated as their negation. ``excluded[f, g]`` marks
    pairs (mismatch-flagged or failed) left out of every aggregate.
    """

    direct: np.ndarray
    truth: np.ndarray | None = None
    excluded: np.ndarray | None = None

    def __post_init__(self):
        d = np.array(self.direct, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("direct must be a square matrix")
        n = d.shape[0]
        iu = np.triu_indices(n, 1)
        full = np.zeros_like(d)
        full[iu] = d[iu]
        full.T[iu] = -d[iu]
        object.__setattr__(self, "direct", full)
        if self.truth is not None:
            t = np.array(self.truth, dtype=np.float64)
            if t.shape != d.shape:
                raise ValueError("truth must match direct in shape")
            object.__setattr__(self, "truth", t)
        ex = np.zeros(d.shape, dtype=bool) if self.excluded is None else np.array(self.excluded, dtype=bool)
        ex = ex | ex.T | ~np.isfinite(full)
        object.__setattr__(self, "excluded", ex)

    @property
    def n(self) -> int:
        return self.direct.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        """Included unordered pairs as ``(f, g)`` with ``f < g``."""
        return [(f, g) for f in range(self.n) for g in range(f + 1, self.n) if not self.excluded[f, g]]

    @property
    def mismatch_ratio(self) -> float:
        total = self.n * (self.n - 1) // 2
        return (total - len(self.pairs())) / total if total else 0.0

    def deviations(self) -> np.ndarray:
        if self.truth is None:
            raise MissingTruthError("series has no truth matrix")
        return np.array([self.direct[f, g] - self.truth[f, g] for f, g in self.pairs()])


def mean_error(res: SeriesResult) -> float:
    """Mean of ``|JSN_fg - T_fg|`` over the included unordered pairs."""
    if res.n < 2:
        raise ValueError("need at least two images")
    dev = res.deviations()
    if dev.size == 0:
        return float("nan")
    return float(np.abs(dev).mean())


def rmsd(res: SeriesResult) -> float:
    """Root mean squared ``JSN_fg - T_fg`` over the included unordered pairs."""
    if res.n < 2:
        raise ValueError("need at least two images")
    dev = res.deviations()
    if dev.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(dev ** 2)))


def indirect_mean_and_sigma(res: SeriesResult, f: int, g: int,
                            include_endpoints: bool = False) -> tuple[float, float]:
    """Mean and population std of ``JSN_fk + JSN_kg`` over intermediates ``k``.

    ``k`` runs over images other than ``f`` and ``g`` (all images when
    ``include_endpoints``, where those two terms both equal ``JSN_fg``);
    intermediates whose legs are excluded are skipped.
    """
    if res.n < 3:
        raise ValueError("indirect estimates need at least three images")
    ks = [k for k in range(res.n) if include_endpoints or k not in (f, g)]
    vals = [res.direct[f, k] + res.direct[k, g] for k in ks
            if not (res.excluded[f, k] or res.excluded[k, g])]
    if not vals:
        return float("nan"), float("nan")
    v = np.asarray(vals)
    return float(v.mean()), float(v.std())


def sigma_matrix(res: SeriesResult, include_endpoints: bool = False) -> np.ndarray:
    """``sigma[f, g]`` for every ``f < g`` (NaN elsewhere)."""
    out = np.full((res.n, res.n), np.nan)
    for f in range(res.n):
        for g in range(f + 1, res.n):
            out[f, g] = indirect_mean_and_sigma(res, f, g, include_endpoints)[1]
    return out


def rmsd_to_mean_error(value: float) -> float:
    """Expected mean absolute error of a zero-mean Gaussian with this RMSD."""
    if value < 0:
        raise ValueError("rmsd must be non-negative")
    return float(np.sqrt(2.0 / np.pi) * value)


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and equally long")
    if x.size < 3:
        raise ValueError("need at least three points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for zero variance")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def pair_table(res: SeriesResult, include_endpoints: bool = False) -> list[dict]:
    """Per-pair rows of ``f, g, jsn, sigma`` and, with truth, ``error``."""
    rows = []
    for f, g in res.pairs():
        _, s = indirect_mean_and_sigma(res, f, g, include_endpoints) if res.n >= 3 else (0.0, float("nan"))
        row = {"f": f, "g": g, "jsn": float(res.direct[f, g]), "sigma": s}
        if res.truth is not None:
            row["error"] = float(abs(res.direct[f, g] - res.truth[f, g]))
        rows.append(row)
    return rows
