"""Closed-form MAP plane of a stixel segment."""
from __future__ import annotations

import math

from .energy import WD, WV, WV2, WVD, W, ColumnPrefix
from .model import GeometricClass, ModelConfig, Plane, PlanePrior

# relative determinant below which a <2-pixel system counts as rank deficient
_DEGENERATE = 1e-9


def solve_plane(S0: float, S1: float, S2: float, Sd: float, Svd: float, n_valid: int, vb: int,
                prior: PlanePrior) -> tuple[float, float]:
    """Minimise sum w (d - b v - a)^2 + ((a - mu_a)/sigma_a)^2 + ((b - mu_b)/sigma_b)^2.

    Arguments are the weighted moments of the segment's valid pixels. Rows are
    re-centred on ``vb`` before the 2x2 solve to keep the system well
    conditioned for segments far from row 0.
    """
    mu_a, mu_b = prior.mu_a, prior.mu_b
    if n_valid == 0 or (prior.clamp_a and prior.clamp_b):
        return mu_a, mu_b
    if prior.clamp_a:
        beta = 1.0 / (prior.sigma_b * prior.sigma_b)
        return mu_a, (Svd - mu_a * S1 + beta * mu_b) / (S2 + beta)
    alpha = 1.0 / (prior.sigma_a * prior.sigma_a)
    if prior.clamp_b:
        return (Sd - mu_b * S1 + alpha * mu_a) / (S0 + alpha), mu_b
    beta = 1.0 / (prior.sigma_b * prior.sigma_b)
    S1u = S1 - vb * S0
    S2u = S2 - vb * (S1 + S1u)
    Sud = Svd - vb * Sd
    m00 = S0 + alpha
    m01 = S1u - alpha * vb
    m11 = S2u + alpha * vb * vb + beta
    r0 = Sd + alpha * mu_a
    r1 = Sud - alpha * vb * mu_a + beta * mu_b
    det = m00 * m11 - m01 * m01
    if n_valid < 2 or det <= _DEGENERATE * m00 * m11:
        return (Sd - mu_b * S1 + alpha * mu_a) / (S0 + alpha), mu_b
    a_centred = (r0 * m11 - m01 * r1) / det
    b = (m00 * r1 - m01 * r0) / det
    return a_centred - b * vb, b


def fit_plane_map(prefix: ColumnPrefix, vb: int, vt: int, geometric: GeometricClass,
                  config: ModelConfig) -> Plane:
    """MAP plane of rows [vb, vt] for one geometric class.

    Only the Gaussian part of the sensor model enters the fit; the outlier
    component is ignored here and accounted for when the segment is scored.
    """
    m = prefix.segment_moments(geometric, vb, vt)
    if not all(math.isfinite(x) for x in m):
        raise ValueError(f"non-finite moments in segment [{vb}, {vt}]")
    a, b = solve_plane(m[W], m[WV], m[WV2], m[WD], m[WVD], prefix.valid_count(vb, vt), vb,
                       config.plane_priors[geometric])
    return Plane(a, b)


def plane_objective(rows, a: float, b: float, prior: PlanePrior) -> float:
    """Quadratic fit objective from explicit (v, w, d) rows; used by tests and tools."""
    total = 0.0
    for v, w, d in rows:
        r = d - (b * v + a)
        total += w * r * r
    if prior.sigma_a > 0:
        total += ((a - prior.mu_a) / prior.sigma_a) ** 2
    if prior.sigma_b > 0:
        total += ((b - prior.mu_b) / prior.sigma_b) ** 2
    return total
