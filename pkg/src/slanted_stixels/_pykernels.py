"""numpy implementation of the column kernels.

Used when the compiled extension is unavailable (or STIXEL_BACKEND=python).
Arithmetic follows ``_ckernels.pyx`` expression by expression; the dynamic
program is bit-identical given the same segment table, while the table itself
may differ from the compiled one in the last ulp (libm vs numpy/scipy
special functions).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, erfcx

from .energy import ERF_TAIL, HALF_LOG_2PI, LOG_2, SQRT_PI
from .planefit import solve_plane
from .model import PlanePrior

GROUND, OBJECT, SKY = 0, 1, 2


def _pixel_energies(d, c, f, sigma, p_out, d_max, invalid_cost):
    """Mixture energies for rows (axis 0) under several planes (axis 1)."""
    s = (sigma / c)[:, None]
    lo = -f / s
    hi = (d_max - f) / s
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        upper = lo >= 0.0
        lower = hi <= 0.0
        both_tails = (lo < -ERF_TAIL) & (hi > ERF_TAIL)
        t_up = erfcx(lo) - np.exp((lo - hi) * (lo + hi)) * erfcx(hi)
        t_lo = erfcx(-hi) - np.exp((hi - lo) * (hi + lo)) * erfcx(-lo)
        t = np.where(upper, t_up, t_lo)
        ld = np.where(
            both_tails, LOG_2,
            np.where(upper | lower,
                     np.where(upper, -lo * lo, -hi * hi) + np.log(t),
                     np.log(erf(hi) - erf(lo))))
        lost = ~both_tails & (upper | lower) & ~(t > 0.0)
        lz = np.log(0.5 * s * SQRT_PI) + ld
        r = c[:, None] * (d[:, None] - f) / sigma
        log_pu = math.log(p_out / d_max)
        lg = math.log1p(-p_out) - lz - r * r
        e = np.where(lg > log_pu,
                     -(lg + np.log1p(np.exp(log_pu - lg))),
                     -(log_pu + np.log1p(np.exp(lg - log_pu))))
    e = np.where(lost, -log_pu, e)
    return np.where((d < 0)[:, None], invalid_cost, e)


def segment_table(bounds, disparity, confidence, moments, count, sem_prefix, geo_of_sem, ecut,
                  sigma_noise, priors, p_out, d_max, w_l, invalid_cost):
    """Cost, semantic argmin and MAP plane of every candidate segment.

    Segment (i, j) covers rows bounds[i] .. bounds[j] - 1. Entries with
    j <= i are left at inf / -1.
    """
    m = len(bounds) - 1
    cost = np.full((m, m + 1, 3), np.inf)
    sem = np.full((m, m + 1, 3), -1, dtype=np.int64)
    pa = np.zeros((m, m + 1, 3))
    pb = np.zeros((m, m + 1, 3))
    h = int(bounds[m])
    rows = np.arange(h, dtype=np.float64)
    classes = [np.flatnonzero(geo_of_sem == g) for g in range(3)]
    for g in range(3):
        prior = PlanePrior(*priors[g])
        sigma = sigma_noise[g]
        norm = 0.0
        norm_a = HALF_LOG_2PI + math.log(prior.sigma_a) if prior.sigma_a > 0 else 0.0
        norm_b = HALF_LOG_2PI + math.log(prior.sigma_b) if prior.sigma_b > 0 else 0.0
        norm = norm_a + norm_b
        M = moments[g]
        for i in range(m):
            vb = int(bounds[i])
            ends = bounds[i + 1:]
            n_end = len(ends)
            a = np.empty(n_end)
            b = np.empty(n_end)
            for t, vt1 in enumerate(ends):
                seg = M[:, vt1] - M[:, vb]
                a[t], b[t] = solve_plane(seg[0], seg[1], seg[2], seg[3], seg[4],
                                         int(count[vt1] - count[vb]), vb, prior)
            v = rows[vb:h]
            f = b[None, :] * v[:, None] + a[None, :]
            e = _pixel_energies(disparity[vb:h], confidence[vb:h], f, sigma, p_out, d_max, invalid_cost)
            run = np.cumsum(e, axis=0)
            depth = run[ends - vb - 1, np.arange(n_end)]
            sums = sem_prefix[ends][:, classes[g]] - sem_prefix[vb][classes[g]]
            e_sem = w_l * sums
            arg = np.argmin(e_sem, axis=1)
            sem_best = e_sem[np.arange(n_end), arg]
            qa = np.zeros(n_end)
            qb = np.zeros(n_end)
            if prior.sigma_a > 0:
                za = (a - prior.mu_a) / prior.sigma_a
                qa = za * za
            if prior.sigma_b > 0:
                zb = (b - prior.mu_b) / prior.sigma_b
                qb = zb * zb
            e_prior = (qa + qb) + norm
            cost[i, i + 1:, g] = ((depth + sem_best) + e_prior) + ecut[i]
            sem[i, i + 1:, g] = classes[g][arg]
            pa[i, i + 1:, g] = a
            pb[i, i + 1:, g] = b
    return cost, sem, pa, pb


class _Chains:
    """Backtracking helper for lexicographic tie-breaks."""

    def __init__(self, bounds, sem, PK, PG):
        self.bounds, self.sem, self.PK, self.PG = bounds, sem, PK, PG

    def sequence(self, i, j, g):
        out = []
        while True:
            out.append((int(self.bounds[i]), g, int(self.sem[i, j, g])))
            k = int(self.PK[i, j, g])
            if k < 0:
                break
            i, j, g = k, i, int(self.PG[i, j, g])
        out.reverse()
        return out


def _better(c1, n1, s1, c2, n2, s2, chains):
    """True if candidate 1 beats candidate 2; s = state triple (or None)."""
    if c1 != c2:
        return c1 < c2
    if n1 != n2:
        return n1 < n2
    if s1 is None or s2 is None or s1 == s2:
        return False
    return chains.sequence(*s1) < chains.sequence(*s2)


def column_dp(bounds, cost, sem, pa, pb, first, base, w_grav, w_ord):
    """Exact DP over stixel states (start, end, class).

    ``first[g]`` is the energy of a bottom stixel of class g, ``base[l, u]``
    the plane-independent transition energy. Returns (total, path, C, N, PK,
    PG, best_start) with path a bottom-up list of (i, j, g) and
    ``best_start[j, g]`` the start index of the best state ending at bounds[j].
    """
    m = len(bounds) - 1
    C = np.full((m, m + 1, 3), np.inf)
    N = np.zeros((m, m + 1, 3), dtype=np.int64)
    PK = np.full((m, m + 1, 3), -1, dtype=np.int64)
    PG = np.full((m, m + 1, 3), -1, dtype=np.int64)
    best_start = np.full((m + 1, 3), -1, dtype=np.int64)
    chains = _Chains(bounds, sem, PK, PG)

    for j in range(1, m + 1):
        for i in range(j):
            for g in range(3):
                seg = cost[i, j, g]
                if i == 0:
                    C[0, j, g] = seg + first[g]
                    N[0, j, g] = 1
                    continue
                bc, bn, bstate = math.inf, 0, None
                vrow = int(bounds[i])
                for gp in range(3):
                    grav = gp == GROUND and g == OBJECT and w_grav != 0.0
                    order = gp == OBJECT and g == OBJECT and w_ord != 0.0
                    if grav or order:
                        d_lo = pb[:i, i, gp] * (vrow - 1) + pa[:i, i, gp]
                        d_up = pb[i, j, g] * vrow + pa[i, j, g]
                        x = d_up - d_lo
                        if grav:
                            pen = w_grav * (x * x)
                        else:
                            pen = np.where(x > 0.0, w_ord * (x * x), 0.0)
                        cand = C[:i, i, gp] + (seg + (base[gp, g] + pen))
                        lo = cand.min()
                        if lo > bc:
                            continue
                        for k in np.flatnonzero(cand == lo):
                            k = int(k)
                            n = N[k, i, gp] + 1
                            if _better(lo, n, (k, i, gp), bc, bn, bstate, chains):
                                bc, bn, bstate = lo, n, (k, i, gp)
                    else:
                        k = int(best_start[i, gp])
                        c = C[k, i, gp] + (seg + base[gp, g])
                        n = N[k, i, gp] + 1
                        if _better(c, n, (k, i, gp), bc, bn, bstate, chains):
                            bc, bn, bstate = c, n, (k, i, gp)
                C[i, j, g] = bc
                N[i, j, g] = bn
                PK[i, j, g] = bstate[0]
                PG[i, j, g] = bstate[2]
        for g in range(3):
            bi = -1
            for i in range(j):
                if bi < 0 or _better(C[i, j, g], N[i, j, g], (i, j, g),
                                     C[bi, j, g], N[bi, j, g], (bi, j, g), chains):
                    bi = i
            best_start[j, g] = bi

    best = None
    for g in range(3):
        i = int(best_start[m, g])
        if best is None or _better(C[i, m, g], N[i, m, g], (i, m, g),
                                   C[best], N[best], best, chains):
            best = (i, m, g)
    path = []
    i, j, g = best
    while True:
        path.append((i, j, g))
        k = int(PK[i, j, g])
        if k < 0:
            break
        i, j, g = k, i, int(PG[i, j, g])
    path.reverse()
    return float(C[best]), path, C, N, PK, PG, best_start
