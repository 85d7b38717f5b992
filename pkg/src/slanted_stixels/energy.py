"""Pixel and segment energies of the column model.

These are scalar reference implementations. The inference kernels evaluate the
same expressions in the same order, so their segment costs agree with
:func:`segment_data_energy` + :func:`plane_prior_energy` to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .model import GEOMETRIC, ClassTaxonomy, GeometricClass, ModelConfig, Plane

INVALID = -1.0
SEMANTIC_COST_CAP = 12.0
SQRT_PI = math.sqrt(math.pi)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
# erfc(6.5) ~ 4e-20, far below double resolution around 2
ERF_TAIL = 6.5


def semantic_costs(scores: np.ndarray) -> np.ndarray:
    """-log of class scores, scores floored so costs never exceed the cap."""
    p = np.maximum(np.asarray(scores, dtype=np.float64), math.exp(-SEMANTIC_COST_CAP))
    return np.minimum(-np.log(p), SEMANTIC_COST_CAP)


@dataclass
class ColumnMeasurements:
    """One downsampled column, row 0 at the bottom of the image.

    ``disparity`` uses -1 (any negative value) for invalid pixels.
    """

    disparity: np.ndarray
    confidence: np.ndarray
    semantic_cost: np.ndarray

    def __post_init__(self):
        self.disparity = np.ascontiguousarray(self.disparity, dtype=np.float64)
        self.confidence = np.ascontiguousarray(self.confidence, dtype=np.float64)
        self.semantic_cost = np.ascontiguousarray(self.semantic_cost, dtype=np.float64)
        h = self.disparity.shape[0]
        if self.disparity.ndim != 1 or self.confidence.shape != (h,):
            raise ValueError("disparity and confidence must be 1-D arrays of equal length")
        if self.semantic_cost.ndim != 2 or self.semantic_cost.shape[0] != h:
            raise ValueError("semantic_cost must have shape (h, K)")
        if not (np.all(np.isfinite(self.disparity)) and np.all(np.isfinite(self.semantic_cost))):
            raise ValueError("measurements must be finite")
        if np.any(self.semantic_cost < 0):
            raise ValueError("semantic costs must be non-negative")
        valid = self.disparity >= 0
        if np.any((self.confidence[valid] <= 0) | (self.confidence[valid] > 1)):
            raise ValueError("confidence of valid pixels must lie in (0, 1]")

    @classmethod
    def from_scores(cls, disparity, scores, confidence=None) -> "ColumnMeasurements":
        disparity = np.asarray(disparity, dtype=np.float64)
        if confidence is None:
            confidence = np.ones_like(disparity)
        return cls(disparity, confidence, semantic_costs(scores))

    @property
    def h(self) -> int:
        return self.disparity.shape[0]

    @property
    def num_classes(self) -> int:
        return self.semantic_cost.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.disparity >= 0

    def masked_for(self, config: ModelConfig) -> "ColumnMeasurements":
        """Copy with disparities above d_max marked invalid."""
        d = self.disparity.copy()
        d[d > config.d_max] = INVALID
        return ColumnMeasurements(d, self.confidence, self.semantic_cost)


# moment rows of ColumnPrefix.moments
W, WV, WV2, WD, WVD, WD2 = range(6)


@dataclass
class ColumnPrefix:
    """Cumulative sums over rows; entry r covers rows [0, r).

    ``moments[g]`` holds sums over valid pixels of w, w v, w v^2, w d, w v d,
    w d^2 with w = (c_v / sigma_g)^2.
    """

    moments: np.ndarray  # (3, 6, h + 1)
    count: np.ndarray  # (h + 1,) valid pixels
    semantic: np.ndarray  # (h + 1, K)
    taxonomy: ClassTaxonomy

    @classmethod
    def build(cls, col: ColumnMeasurements, config: ModelConfig, taxonomy: ClassTaxonomy) -> "ColumnPrefix":
        if col.num_classes != taxonomy.size:
            raise ValueError(
                f"semantic input has {col.num_classes} channels, taxonomy has {taxonomy.size} classes")
        h = col.h
        valid = col.valid
        v = np.arange(h, dtype=np.float64)
        d = np.where(valid, col.disparity, 0.0)
        moments = np.zeros((3, 6, h + 1))
        for g in GEOMETRIC:
            w = np.where(valid, (col.confidence / config.sigma_noise[g]) ** 2, 0.0)
            terms = (w, w * v, w * v * v, w * d, w * v * d, w * d * d)
            for k, t in enumerate(terms):
                np.cumsum(t, out=moments[g, k, 1:])
        count = np.zeros(h + 1, dtype=np.int64)
        np.cumsum(valid, out=count[1:])
        semantic = np.zeros((h + 1, col.num_classes))
        np.cumsum(col.semantic_cost, axis=0, out=semantic[1:])
        return cls(moments, count, semantic, taxonomy)

    def segment_moments(self, g: GeometricClass, vb: int, vt: int) -> np.ndarray:
        return self.moments[g, :, vt + 1] - self.moments[g, :, vb]

    def valid_count(self, vb: int, vt: int) -> int:
        return int(self.count[vt + 1] - self.count[vb])

    def semantic_sums(self, vb: int, vt: int) -> np.ndarray:
        return self.semantic[vt + 1] - self.semantic[vb]


def expected_disparity(plane: Plane, v: float) -> float:
    return plane.b * v + plane.a


def log_gaussian_normalizer(sigma: float, c: float, f: float, d_max: float) -> float:
    """log of the integral over [0, d_max] of exp(-(c (d - f) / sigma)^2).

    One-sided cases use the scaled erfc so a mean far outside the range does
    not underflow. Returns +inf only if the mass is lost to rounding.
    """
    s = sigma / c
    lo = -f / s
    hi = (d_max - f) / s
    if lo < -ERF_TAIL and hi > ERF_TAIL:
        ld = LOG_2
    elif lo >= 0.0:
        t = erfcx(lo) - math.exp((lo - hi) * (lo + hi)) * erfcx(hi)
        ld = -lo * lo + math.log(t) if t > 0.0 else -math.inf
    elif hi <= 0.0:
        t = erfcx(-hi) - math.exp((hi - lo) * (hi + lo)) * erfcx(-lo)
        ld = -hi * hi + math.log(t) if t > 0.0 else -math.inf
    else:
        ld = math.log(math.erf(hi) - math.erf(lo))
    if ld == -math.inf:
        return math.inf
    return math.log(0.5 * s * SQRT_PI) + ld


def _mixture_energy(d: float, c: float, f: float, sigma: float, p_out: float, d_max: float) -> float:
    log_pu = math.log(p_out / d_max)
    lz = log_gaussian_normalizer(sigma, c, f, d_max)
    if lz == math.inf:
        return -log_pu
    r = c * (d - f) / sigma
    lg = math.log1p(-p_out) - lz - r * r
    if lg > log_pu:
        return -(lg + math.log1p(math.exp(log_pu - lg)))
    return -(log_pu + math.log1p(math.exp(lg - log_pu)))


def depth_pixel_energy(geometric: GeometricClass, plane: Plane, v: int, d_v: float, c_v: float,
                       config: ModelConfig) -> float:
    """Negative log of the outlier/Gaussian mixture density of one disparity."""
    if d_v < 0:
        return config.invalid_cost
    f = expected_disparity(plane, v)
    return _mixture_energy(d_v, c_v, f, config.sigma_noise[geometric], config.p_out, config.d_max)


def semantic_pixel_energy(semantic_class: int, v: int, col: ColumnMeasurements, config: ModelConfig) -> float:
    if not 0 <= semantic_class < col.num_classes:
        raise IndexError(f"semantic class {semantic_class} out of range 0..{col.num_classes - 1}")
    return config.w_l * col.semantic_cost[v, semantic_class]


def plane_prior_energy(geometric: GeometricClass, plane: Plane, config: ModelConfig) -> float:
    """Gaussian prior on (a, b) with its log-normaliser; clamped dimensions contribute nothing."""
    p = config.plane_priors[geometric]
    qa = qb = 0.0
    norm_a = norm_b = 0.0
    if p.sigma_a > 0:
        za = (plane.a - p.mu_a) / p.sigma_a
        qa = za * za
        norm_a = HALF_LOG_2PI + math.log(p.sigma_a)
    if p.sigma_b > 0:
        zb = (plane.b - p.mu_b) / p.sigma_b
        qb = zb * zb
        norm_b = HALF_LOG_2PI + math.log(p.sigma_b)
    return (qa + qb) + (norm_a + norm_b)


def best_semantic(prefix: ColumnPrefix, vb: int, vt: int, geometric: GeometricClass,
                  config: ModelConfig) -> tuple[float, int]:
    """Cheapest semantic class of the given geometric class over rows [vb, vt]."""
    sums = prefix.semantic_sums(vb, vt)
    best, arg = math.inf, -1
    for k in prefix.taxonomy.classes_of(geometric):
        e = config.w_l * sums[k]
        if e < best:
            best, arg = e, k
    return best, arg


def segment_data_energy(col: ColumnMeasurements, prefix: ColumnPrefix, vb: int, vt: int,
                        geometric: GeometricClass, plane: Plane,
                        config: ModelConfig) -> tuple[float, int]:
    """Data energy of rows [vb, vt] under one stixel hypothesis.

    Returns the energy and the semantic class attaining the semantic minimum.
    """
    if not 0 <= vb <= vt < col.h:
        raise ValueError(f"bad segment [{vb}, {vt}] for column of height {col.h}")
    depth = 0.0
    for v in range(vb, vt + 1):
        depth += depth_pixel_energy(geometric, plane, v, col.disparity[v], col.confidence[v], config)
    sem, arg = best_semantic(prefix, vb, vt, geometric, config)
    return depth + sem, arg
