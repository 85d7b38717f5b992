"""Stixel cut prior: candidate rows where a stixel may begin.

A cut at row v means a stixel is allowed to have ``v_bottom == v``. Row 0 and
row h-1 are always present, so the set of all rows reproduces exact
inference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import ColumnMeasurements
from .model import ClassTaxonomy

DEFAULT_JUMP_THRESHOLD = 3.0
DEFAULT_WINDOW = 1


@dataclass
class CutSet:
    rows: np.ndarray
    gamma: np.ndarray
    h: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.rows.ndim != 1 or self.rows.shape != self.gamma.shape:
            raise ValueError("rows and gamma must be 1-D arrays of equal length")
        if len(self.rows) == 0:
            raise ValueError("empty cut set")
        if self.rows[0] != 0 or self.rows[-1] != self.h - 1:
            raise ValueError(f"cut set must contain rows 0 and {self.h - 1}")
        if np.any(np.diff(self.rows) <= 0):
            raise ValueError("cut rows must be strictly increasing")
        if np.any((self.gamma <= 0) | (self.gamma > 1)):
            raise ValueError("cut confidences must lie in (0, 1]")

    @classmethod
    def from_rows(cls, rows, h: int, gamma=None) -> "CutSet":
        rows = np.union1d(np.asarray(rows, dtype=np.int64), [0, h - 1])
        if gamma is None:
            gamma = np.ones(len(rows))
        return cls(rows, gamma, h)

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, row) -> bool:
        i = np.searchsorted(self.rows, row)
        return bool(i < len(self.rows) and self.rows[i] == row)

    def covers(self, starts) -> bool:
        return bool(np.all(np.isin(np.asarray(starts, dtype=np.int64), self.rows)))


def full_cut_set(h: int) -> CutSet:
    return CutSet(np.arange(h), np.ones(h), h)


def regular_cut_set(h: int, step: int) -> CutSet:
    """Every ``step``-th row (plus the mandatory endpoints)."""
    return CutSet.from_rows(np.arange(0, h, step), h)


def cut_density(cs: CutSet) -> float:
    return len(cs.rows) / cs.h


def _strict_extrema(d: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    """Rows whose valid disparity is strictly above or below every valid
    neighbour within ``window`` rows, with at least one valid neighbour on
    each side. Plateaus never qualify."""
    h = len(d)
    has_lo = np.zeros(h, dtype=bool)
    has_hi = np.zeros(h, dtype=bool)
    nb_max = np.full(h, -np.inf)  # extremes over valid neighbours
    nb_min = np.full(h, np.inf)
    for off in range(1, window + 1):
        if off >= h:
            break
        # neighbour below (v - off)
        lo_valid = np.zeros(h, dtype=bool)
        lo_valid[off:] = valid[:-off]
        lo_val = np.zeros(h)
        lo_val[off:] = d[:-off]
        # neighbour above (v + off)
        hi_valid = np.zeros(h, dtype=bool)
        hi_valid[:-off] = valid[off:]
        hi_val = np.zeros(h)
        hi_val[:-off] = d[off:]
        for nv, nval in ((lo_valid, lo_val), (hi_valid, hi_val)):
            nb_max = np.where(nv, np.maximum(nb_max, nval), nb_max)
            nb_min = np.where(nv, np.minimum(nb_min, nval), nb_min)
        has_lo |= lo_valid
        has_hi |= hi_valid
    return valid & has_lo & has_hi & ((d > nb_max) | (d < nb_min))


def generate_cuts(col: ColumnMeasurements, taxonomy: ClassTaxonomy | None = None,
                  jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
                  window: int = DEFAULT_WINDOW) -> CutSet:
    """Over-segment one column into candidate stixel starts.

    A row v is a cut if its disparity is a strict local extremum, if it jumps
    by more than ``jump_threshold`` from row v-1, if the cheapest semantic
    class changes between v-1 and v, or if validity toggles between v-1 and v.
    All cuts get confidence 1.
    """
    if taxonomy is not None and col.num_classes != taxonomy.size:
        raise ValueError("semantic channels do not match the taxonomy")
    if window < 1:
        raise ValueError("window must be >= 1")
    h = col.h
    d = col.disparity
    valid = col.valid
    cut = _strict_extrema(d, valid, window)
    both = valid[1:] & valid[:-1]
    cut[1:] |= both & (np.abs(d[1:] - d[:-1]) > jump_threshold)
    label = np.argmin(col.semantic_cost, axis=1)
    cut[1:] |= label[1:] != label[:-1]
    cut[1:] |= valid[1:] != valid[:-1]
    cut[0] = True
    cut[h - 1] = True
    rows = np.flatnonzero(cut)
    return CutSet(rows, np.ones(len(rows)), h)
