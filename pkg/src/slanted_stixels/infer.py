"""Column inference: exact and cut-pruned dynamic programming, plus a
brute-force enumeration oracle.

Rows are indexed bottom-up. Candidate stixels start at cut rows; segment
(i, j) of a cut set covers rows ``bounds[i] .. bounds[j] - 1`` where
``bounds`` is the cut rows followed by h. The full cut set gives exact
inference.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend
from .cuts import CutSet, cut_density, full_cut_set, generate_cuts
from .energy import ColumnMeasurements, ColumnPrefix, depth_pixel_energy, plane_prior_energy
from .model import (GEOMETRIC, ClassTaxonomy, GeometricClass, ModelConfig, Plane, Stixel,
                    StixelColumn, StixelWorld)


def transition_energy(lower: Stixel, upper: Stixel, config: ModelConfig) -> float:
    """Pairwise energy of two stacked stixels, including the per-stixel complexity cost."""
    if upper.v_bottom != lower.v_top + 1:
        raise ValueError(f"stixels are not adjacent: [{lower.v_bottom}, {lower.v_top}] "
                         f"then [{upper.v_bottom}, {upper.v_top}]")
    gl, gu = lower.geometric, upper.geometric
    grav = order = 0.0
    # boundary disparities: top row of the lower plane, bottom row of the upper one
    d_lo = lower.plane.b * lower.v_top + lower.plane.a
    d_up = upper.plane.b * upper.v_bottom + upper.plane.a
    x = d_up - d_lo
    if gl == GeometricClass.GROUND and gu == GeometricClass.OBJECT:
        grav = config.w_grav * (x * x)
    elif gl == GeometricClass.OBJECT and gu == GeometricClass.OBJECT and x > 0.0:
        order = config.w_ord * (x * x)
    return ((config.complexity_cost + config.transition_costs[gl][gu]) + grav) + order


def first_energy(s: Stixel, config: ModelConfig) -> float:
    if s.v_bottom != 0:
        raise ValueError(f"first stixel must start at row 0, got {s.v_bottom}")
    return config.complexity_cost + config.first_costs[s.geometric]


@dataclass
class DPTable:
    """Best state ending at each cut boundary, per geometric class.

    ``cost[j, g]`` is the minimum aggregated energy of a partial tiling whose
    last stixel has class g and ends just below ``bounds[j]``; ``start``,
    ``semantic`` and ``plane_*`` describe that last stixel, ``prev_start``
    and ``prev_class`` its predecessor (-1 for a first stixel). Row 0 of each
    array is unused.
    """

    bounds: np.ndarray
    cost: np.ndarray
    start: np.ndarray
    semantic: np.ndarray
    plane_a: np.ndarray
    plane_b: np.ndarray
    prev_start: np.ndarray
    prev_class: np.ndarray

    # full state backpointers (start, end, class) -> predecessor start / class
    PK: np.ndarray
    PG: np.ndarray

    def backtrack(self, j: int | None = None, g: int | None = None) -> list[tuple[int, int, int]]:
        """States (start index, end index, class) from the bottom, for the best
        partial tiling ending at bounds[j] (default: the whole column)."""
        if j is None:
            j = len(self.bounds) - 1
        if g is None:
            g = int(np.argmin(self.cost[j]))
        i = int(self.start[j, g])
        out = []
        while True:
            out.append((i, j, g))
            k = int(self.PK[i, j, g])
            if k < 0:
                break
            i, j, g = k, i, int(self.PG[i, j, g])
        out.reverse()
        return out


def _column_inputs(col: ColumnMeasurements, prefix: ColumnPrefix | None, config: ModelConfig,
                   taxonomy: ClassTaxonomy | None):
    if prefix is None:
        if taxonomy is None:
            raise ValueError("either a prefix or a taxonomy is required")
        col = col.masked_for(config)
        prefix = ColumnPrefix.build(col, config, taxonomy)
    elif np.any(col.disparity > config.d_max):
        raise ValueError("column has disparities above d_max; mask it with masked_for(config)")
    if prefix.moments.shape[2] != col.h + 1:
        raise ValueError("prefix does not match the column height")
    return col, prefix


def _tables(col, prefix, config, cuts: CutSet, kernels):
    if cuts.h != col.h:
        raise ValueError(f"cut set is for h={cuts.h}, column has h={col.h}")
    bounds = np.append(cuts.rows, col.h).astype(np.int64)
    ecut = -np.log(np.maximum(cuts.gamma, config.min_cut_confidence))
    priors = np.array([[p.mu_a, p.sigma_a, p.mu_b, p.sigma_b] for p in config.plane_priors])
    geo = np.asarray([int(g) for g in prefix.taxonomy.geometric], dtype=np.int64)
    cost, sem, pa, pb = kernels.segment_table(
        bounds, col.disparity, col.confidence, np.ascontiguousarray(prefix.moments),
        np.ascontiguousarray(prefix.count, dtype=np.int64), np.ascontiguousarray(prefix.semantic),
        geo, np.ascontiguousarray(ecut), np.asarray(config.sigma_noise, dtype=np.float64), priors,
        config.p_out, config.d_max, config.w_l, config.invalid_cost)
    return bounds, cost, sem, pa, pb


def _make_column(path, bounds, cost, sem, pa, pb, taxonomy, total, index) -> StixelColumn:
    stixels = []
    for i, j, g in path:
        stixels.append(Stixel(
            v_bottom=int(bounds[i]), v_top=int(bounds[j]) - 1,
            semantic_class=int(sem[i, j, g]), geometric=GeometricClass(g),
            plane=Plane(float(pa[i, j, g]), float(pb[i, j, g])), cost=float(cost[i, j, g])))
    return StixelColumn(stixels, column_index=index, total_energy=float(total))


def solve_column(col: ColumnMeasurements, prefix: ColumnPrefix | None, config: ModelConfig,
                 cuts: CutSet | None = None, column_index: int = 0, backend=None,
                 taxonomy: ClassTaxonomy | None = None) -> tuple[StixelColumn, DPTable]:
    """Like :func:`infer_column`, also returning the DP table."""
    col, prefix = _column_inputs(col, prefix, config, taxonomy)
    kernels = _backend.get(backend) if backend is None or isinstance(backend, str) else backend
    if cuts is None:
        cuts = full_cut_set(col.h)
    bounds, cost, sem, pa, pb = _tables(col, prefix, config, cuts, kernels)
    first = np.array([config.complexity_cost + config.first_costs[g] for g in GEOMETRIC])
    base = np.array([[config.complexity_cost + config.transition_costs[gl][gu] for gu in GEOMETRIC]
                     for gl in GEOMETRIC])
    total, path, C, N, PK, PG, best_start = kernels.column_dp(
        bounds, cost, sem, pa, pb, first, base, config.w_grav, config.w_ord)
    m = len(bounds) - 1
    column = _make_column(path, bounds, cost, sem, pa, pb, prefix.taxonomy, total, column_index)
    column.candidate_evals = 3 * m * (m + 1) // 2
    column.cut_density = cut_density(cuts)

    js = np.arange(m + 1)[:, None]
    gs = np.arange(3)[None, :]
    bs = np.maximum(best_start, 0)
    table = DPTable(
        bounds=bounds,
        cost=np.where(best_start >= 0, C[bs, js, gs], np.inf),
        start=best_start,
        semantic=np.where(best_start >= 0, sem[bs, js, gs], -1),
        plane_a=np.where(best_start >= 0, pa[bs, js, gs], 0.0),
        plane_b=np.where(best_start >= 0, pb[bs, js, gs], 0.0),
        prev_start=np.where(best_start >= 0, PK[bs, js, gs], -1),
        prev_class=np.where(best_start >= 0, PG[bs, js, gs], -1),
        PK=PK,
        PG=PG,
    )
    return column, table


def infer_column(col: ColumnMeasurements, prefix: ColumnPrefix | None, config: ModelConfig,
                 cuts: CutSet | None = None, column_index: int = 0, backend=None,
                 taxonomy: ClassTaxonomy | None = None) -> StixelColumn:
    """Minimum-energy stixel tiling whose stixels all start at cut rows.

    ``cuts=None`` uses every row (exact inference). ``prefix=None`` builds
    it from ``taxonomy`` after masking disparities above d_max.
    """
    return solve_column(col, prefix, config, cuts, column_index, backend, taxonomy)[0]


def brute_force_column(col: ColumnMeasurements, prefix: ColumnPrefix | None, config: ModelConfig,
                       max_h: int = 14, backend=None, cuts: CutSet | None = None,
                       taxonomy: ClassTaxonomy | None = None) -> StixelColumn:
    """Exhaustive search over tilings and geometric-class assignments.

    Segment costs, semantic labels and planes come from the same segment
    table as the DP; pairwise terms use the scalar :func:`transition_energy`.
    Energies accumulate bottom-up in the DP's order, so the optimum matches
    it exactly. Ties break on fewer stixels, then the lexicographically
    smallest bottom-up (v_bottom, geometric, semantic) sequence.
    """
    if col.h > max_h:
        raise ValueError(f"brute force limited to h <= {max_h}, got {col.h}")
    col, prefix = _column_inputs(col, prefix, config, taxonomy)
    kernels = _backend.get(backend) if backend is None or isinstance(backend, str) else backend
    if cuts is None:
        cuts = full_cut_set(col.h)
    bounds, cost, sem, pa, pb = _tables(col, prefix, config, cuts, kernels)
    m = len(bounds) - 1

    def stixel(i, j, g):
        return Stixel(int(bounds[i]), int(bounds[j]) - 1, int(sem[i, j, g]), GeometricClass(g),
                      Plane(float(pa[i, j, g]), float(pb[i, j, g])))

    first = np.array([first_energy(stixel(0, 1, g), config) for g in GEOMETRIC])
    trans: dict[tuple[int, int, int], np.ndarray] = {}

    def pair_table(k, i, j):
        key = (k, i, j)
        if key not in trans:
            trans[key] = np.array([[transition_energy(stixel(k, i, gl), stixel(i, j, gu), config)
                                    for gu in GEOMETRIC] for gl in GEOMETRIC])
        return trans[key]

    best_cost, best = math.inf, []

    # depth-first over tilings; ``tot`` holds the energy of every class
    # assignment of the current prefix, last stixel's class varying fastest
    def extend(starts, tot):
        nonlocal best_cost, best
        i = starts[-1]
        for j in range(i + 1, m + 1):
            seg = cost[i, j, :]
            if len(starts) == 1:
                new = seg + first
            else:
                T = pair_table(starts[-2], i, j)
                new = (tot.reshape(-1, 3)[:, :, None] + (seg[None, None, :] + T[None, :, :])).reshape(-1)
            if j < m:
                extend(starts + [j], new)
                continue
            lo = new.min()
            if lo > best_cost:
                continue
            if lo < best_cost:
                best_cost, best = lo, []
            n = len(starts)
            ends = starts[1:] + [m]
            for r in np.flatnonzero(new == lo):
                classes = np.unravel_index(int(r), (3,) * n)
                best.append([(starts[t], ends[t], int(classes[t])) for t in range(n)])

    extend([0], None)

    def key(path):
        return len(path), [(int(bounds[i]), g, int(sem[i, j, g])) for i, j, g in path]

    path = min(best, key=key)
    column = _make_column(path, bounds, cost, sem, pa, pb, prefix.taxonomy, best_cost, 0)
    column.cut_density = cut_density(cuts)
    return column


def column_energy(column: StixelColumn, col: ColumnMeasurements, prefix: ColumnPrefix,
                  config: ModelConfig, cuts: CutSet | None = None) -> float:
    """Energy of a given tiling, recomputed from the scalar reference terms.

    Uses each stixel's stored plane and semantic class. Agrees with the DP
    total to rounding, not bit for bit.
    """
    gamma = {}
    if cuts is not None:
        gamma = dict(zip(cuts.rows.tolist(), cuts.gamma.tolist()))
    total = 0.0
    prev = None
    for s in column.stixels:
        e = 0.0
        for v in range(s.v_bottom, s.v_top + 1):
            e += depth_pixel_energy(s.geometric, s.plane, v, col.disparity[v], col.confidence[v], config)
        e += config.w_l * prefix.semantic_sums(s.v_bottom, s.v_top)[s.semantic_class]
        e += plane_prior_energy(s.geometric, s.plane, config)
        if cuts is not None:
            if s.v_bottom not in gamma:
                return math.inf
            e += -math.log(max(gamma[s.v_bottom], config.min_cut_confidence))
        e += first_energy(s, config) if prev is None else transition_energy(prev, s, config)
        total += e
        prev = s
    return total


def _default_threads() -> int:
    return os.cpu_count() or 1


def infer_image(columns: list[ColumnMeasurements], config: ModelConfig, taxonomy: ClassTaxonomy,
                cut_mode: str = "full", cut_params: dict | None = None, width_px: int = 1,
                vstep: int = 1, image_dims: tuple[int, int] | None = None,
                threads: int | None = None, backend=None) -> StixelWorld:
    """Infer every column independently; output order follows input order.

    ``cut_mode`` is "full" (exact) or "pruned" (cuts from :func:`generate_cuts`).
    """
    if cut_mode not in ("full", "pruned"):
        raise ValueError(f"cut_mode must be 'full' or 'pruned', got {cut_mode!r}")
    cut_params = dict(cut_params or {})
    if image_dims is None:
        h = columns[0].h if columns else 0
        image_dims = (len(columns) * width_px, h * vstep)
    kernels = _backend.get(backend) if backend is None or isinstance(backend, str) else backend

    def run(index: int) -> StixelColumn:
        try:
            col = columns[index].masked_for(config)
            prefix = ColumnPrefix.build(col, config, taxonomy)
            cuts = None
            if cut_mode == "pruned":
                cuts = generate_cuts(col, taxonomy, **cut_params)
            return infer_column(col, prefix, config, cuts, column_index=index, backend=kernels)
        except Exception as exc:
            raise RuntimeError(f"column {index}: {exc}") from exc

    n = threads if threads is not None else _default_threads()
    if n <= 1 or len(columns) <= 1:
        result = [run(i) for i in range(len(columns))]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            result = list(pool.map(run, range(len(columns))))
    return StixelWorld(result, width_px, vstep, tuple(image_dims), taxonomy)
