import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import random_column
from slanted_stixels.energy import (HALF_LOG_2PI, SEMANTIC_COST_CAP, ColumnMeasurements, ColumnPrefix,
                                    depth_pixel_energy, expected_disparity, log_gaussian_normalizer,
                                    plane_prior_energy, segment_data_energy, semantic_costs,
                                    semantic_pixel_energy)
from slanted_stixels.model import GeometricClass, ModelConfig, Plane, PlanePrior

G, O, S = GeometricClass.GROUND, GeometricClass.OBJECT, GeometricClass.SKY


def test_expected_disparity():
    assert expected_disparity(Plane(10.0, 0.0), 7) == 10.0
    assert expected_disparity(Plane(2.0, 0.5), 10) == 7.0
    p = Plane(-24.0, 0.1)
    assert expected_disparity(p, -p.a / p.b) == pytest.approx(0.0, abs=1e-12)


def test_invalid_pixel_costs_invalid_cost():
    cfg = ModelConfig(invalid_cost=0.7)
    for g in (G, O, S):
        assert depth_pixel_energy(g, Plane(3.0, 0.2), 5, -1.0, 1.0, cfg) == 0.7


def test_depth_energy_at_mode_matches_quadrature_value():
    # frozen from 40-digit quadrature of the truncated Gaussian normaliser
    cfg = ModelConfig(p_out=0.15, d_max=128.0, sigma_noise=(1.0, 1.0, 1.0))
    e = depth_pixel_energy(O, Plane(64.0, 0.0), 0, 64.0, 1.0, cfg)
    assert e == pytest.approx(0.7324432128372074964669, rel=1e-13)
    # sanity: Z_G here is sigma * sqrt(pi) / c
    assert math.exp(log_gaussian_normalizer(1.0, 1.0, 64.0, 128.0)) == pytest.approx(math.sqrt(math.pi), rel=1e-14)


def test_depth_energy_near_truncation_matches_quadrature_value():
    cfg = ModelConfig(p_out=0.15, d_max=128.0, sigma_noise=(1.5, 1.5, 1.5))
    e = depth_pixel_energy(G, Plane(0.5, 0.0), 3, 2.0, 0.6, cfg)
    assert e == pytest.approx(1.513752138515032439771419, rel=1e-13)


def test_normaliser_far_outside_range():
    # 50-digit erfc values; the truncated mass is below double range
    assert log_gaussian_normalizer(1.0, 1.0, -30.0, 20.0) == pytest.approx(-904.0948993482791233, rel=1e-13)
    assert log_gaussian_normalizer(1.0, 1.0, 160.0, 128.0) == pytest.approx(-1028.159370769994019, rel=1e-13)
    assert log_gaussian_normalizer(1.0, 0.4, -65.0, 17.5) == pytest.approx(-679.0356912689553204, rel=1e-13)


def test_density_normalised_when_mean_outside_range():
    cfg = ModelConfig(p_out=0.3, d_max=17.5, sigma_noise=(1.0, 1.0, 1.0))
    fn = _density(O, Plane(-65.0, 0.0), 0, 0.4, cfg)
    total, _ = integrate.quad(fn, 0.0, 17.5, points=[0.0], limit=500, epsabs=1e-13, epsrel=1e-12)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_depth_energy_far_from_plane_is_uniform_energy():
    cfg = ModelConfig(p_out=0.15, d_max=128.0)
    e = depth_pixel_energy(O, Plane(20.0, 0.0), 0, 70.0, 1.0, cfg)
    assert e == pytest.approx(-math.log(0.15 / 128.0), abs=1e-9)


def _density(g, plane, v, c, cfg):
    return lambda d: math.exp(-depth_pixel_energy(g, plane, v, d, c, cfg))


def test_density_integrates_to_one_random_hypotheses():
    rng = np.random.default_rng(3)
    for _ in range(30):
        cfg = ModelConfig(p_out=float(rng.uniform(0.01, 0.9)), d_max=float(rng.uniform(20, 200)),
                          sigma_noise=tuple(float(x) for x in rng.uniform(0.2, 3.0, 3)))
        g = GeometricClass(int(rng.integers(0, 2)))
        f = float(rng.uniform(-5, cfg.d_max + 5))
        c = float(rng.uniform(0.05, 1.0))
        fn = _density(g, Plane(f, 0.0), 0, c, cfg)
        pts = [p for p in (f,) if 0 < p < cfg.d_max]
        total, _ = integrate.quad(fn, 0.0, cfg.d_max, points=pts or None, limit=500,
                                  epsabs=1e-12, epsrel=1e-12)
        assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 60), st.floats(-2, 2), st.integers(0, 40), st.floats(0.05, 1.0),
       st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_mode_and_monotonicity(a, b, v, c, e1, e2):
    cfg = ModelConfig(d_max=128.0)
    plane = Plane(a, b)
    f = expected_disparity(plane, v)
    at_mode = depth_pixel_energy(O, plane, v, max(f, 0.0), c, cfg) if f >= 0 else None
    lo, hi = sorted((e1, e2))
    for sign in (1, -1):
        d1, d2 = f + sign * lo, f + sign * hi
        if d1 < 0 or d2 < 0:
            continue
        E1 = depth_pixel_energy(O, plane, v, d1, c, cfg)
        E2 = depth_pixel_energy(O, plane, v, d2, c, cfg)
        assert E1 <= E2 + 1e-12
        if at_mode is not None:
            assert at_mode <= E1 + 1e-12


def test_semantic_costs_cap_and_examples():
    col = ColumnMeasurements.from_scores([1.0], [[1 / 6] * 6])
    for k in range(6):
        assert semantic_pixel_energy(k, 0, col, ModelConfig(w_l=1.0)) == pytest.approx(math.log(6))
        assert semantic_pixel_energy(k, 0, col, ModelConfig(w_l=0.0)) == 0.0
    one_hot = ColumnMeasurements.from_scores([1.0], [[0, 0, 1, 0, 0, 0]])
    assert semantic_pixel_energy(2, 0, one_hot, ModelConfig()) == 0.0
    assert semantic_pixel_energy(0, 0, one_hot, ModelConfig()) == SEMANTIC_COST_CAP
    assert np.all(semantic_costs(np.array([0.0, 1e-300, 1.0])) <= SEMANTIC_COST_CAP)
    with pytest.raises(IndexError):
        semantic_pixel_energy(6, 0, col, ModelConfig())


def test_plane_prior_energy_examples():
    unit = ModelConfig(plane_priors=(PlanePrior(2.0, 1.0, 0.5, 1.0), PlanePrior(3.0, 2.0, 0.0, 0.0), PlanePrior()))
    assert plane_prior_energy(G, Plane(2.0, 0.5), unit) == pytest.approx(math.log(2 * math.pi))
    assert plane_prior_energy(G, Plane(3.0, 0.5), unit) == pytest.approx(math.log(2 * math.pi) + 1)
    # clamped slant: only the offset term and its normaliser
    e = plane_prior_energy(O, Plane(5.0, 0.0), unit)
    assert e == pytest.approx(1.0 + HALF_LOG_2PI + math.log(2.0))
    assert plane_prior_energy(S, Plane(0.0, 0.0), unit) == 0.0


def test_column_measurement_validation():
    with pytest.raises(ValueError):
        ColumnMeasurements([1.0, np.nan], [1, 1], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ColumnMeasurements([1.0, 2.0], [1, 0], np.zeros((2, 3)))
    # invalid pixels may carry any confidence
    ColumnMeasurements([1.0, -1.0], [1, 0], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ColumnMeasurements([1.0], [1.0], -np.ones((1, 3)))


def test_masked_for_d_max():
    col = ColumnMeasurements.from_scores([10.0, 200.0, -1.0], np.full((3, 6), 1 / 6))
    assert list(col.masked_for(ModelConfig(d_max=128)).disparity) == [10.0, -1.0, -1.0]


def test_prefix_differences_match_direct_sums(taxonomy):
    rng = np.random.default_rng(5)
    cfg = ModelConfig(sigma_noise=(0.7, 1.3, 2.0))
    for _ in range(20):
        h = int(rng.integers(1, 40))
        col = random_column(rng, h)
        pre = ColumnPrefix.build(col, cfg, taxonomy)
        vb = int(rng.integers(0, h))
        vt = int(rng.integers(vb, h))
        rows = range(vb, vt + 1)
        for g in (G, O, S):
            m = pre.segment_moments(g, vb, vt)
            w = [(col.confidence[v] / cfg.sigma_noise[g]) ** 2 if col.disparity[v] >= 0 else 0.0 for v in rows]
            d = [max(col.disparity[v], 0.0) for v in rows]
            direct = [sum(w), sum(wi * v for wi, v in zip(w, rows)),
                      sum(wi * v * v for wi, v in zip(w, rows)), sum(wi * di for wi, di in zip(w, d)),
                      sum(wi * v * di for wi, v, di in zip(w, rows, d)),
                      sum(wi * di * di for wi, di in zip(w, d))]
            np.testing.assert_allclose(m, direct, rtol=1e-9, atol=1e-9)
        assert pre.valid_count(vb, vt) == sum(col.disparity[v] >= 0 for v in rows)
        direct_sem = col.semantic_cost[vb:vt + 1].sum(axis=0)
        np.testing.assert_allclose(pre.semantic_sums(vb, vt), direct_sem, rtol=1e-9, atol=1e-12)
        assert np.all(np.diff(pre.moments[:, 0], axis=1) >= 0)


def test_prefix_rejects_channel_mismatch(taxonomy):
    col = ColumnMeasurements.from_scores([1.0], [[0.5, 0.5]])
    with pytest.raises(ValueError, match="channels"):
        ColumnPrefix.build(col, ModelConfig(), taxonomy)


def _naive_segment_energy(col, vb, vt, g, plane, cfg, taxonomy):
    depth = 0.0
    for v in range(vb, vt + 1):
        d = col.disparity[v]
        if d < 0:
            depth += cfg.invalid_cost
            continue
        sigma = cfg.sigma_noise[g]
        c = col.confidence[v]
        f = plane.b * v + plane.a
        zg, _ = integrate.quad(lambda x: math.exp(-(c * (x - f) / sigma) ** 2), 0, cfg.d_max,
                               points=[f] if 0 < f < cfg.d_max else None, epsabs=1e-14, epsrel=1e-13)
        dens = cfg.p_out / cfg.d_max + (1 - cfg.p_out) / zg * math.exp(-(c * (d - f) / sigma) ** 2)
        depth += -math.log(dens)
    best = min(sum(cfg.w_l * col.semantic_cost[v, k] for v in range(vb, vt + 1))
               for k in taxonomy.classes_of(g))
    return depth + best


def test_segment_energy_matches_naive_reference(taxonomy):
    rng = np.random.default_rng(8)
    cfg = ModelConfig(invalid_cost=0.3, w_l=0.8)
    col = random_column(rng, 16)
    pre = ColumnPrefix.build(col, cfg, taxonomy)
    for _ in range(15):
        vb = int(rng.integers(0, 16))
        vt = int(rng.integers(vb, 16))
        g = GeometricClass(int(rng.integers(0, 3)))
        plane = Plane(0.0, 0.0) if g == S else Plane(float(rng.uniform(0, 40)), float(rng.uniform(-1, 1)))
        e, k = segment_data_energy(col, pre, vb, vt, g, plane, cfg)
        assert e == pytest.approx(_naive_segment_energy(col, vb, vt, g, plane, cfg, taxonomy), rel=1e-9)
        assert taxonomy.geometric[k] == g


def test_segment_energy_single_pixel_and_split(taxonomy):
    rng = np.random.default_rng(9)
    cfg = ModelConfig()
    col = random_column(rng, 10, invalid=0.0)
    pre = ColumnPrefix.build(col, cfg, taxonomy)
    plane = Plane(12.0, 0.3)
    e, k = segment_data_energy(col, pre, 4, 4, G, plane, cfg)
    sem = min(col.semantic_cost[4, j] for j in taxonomy.classes_of(G))
    assert e == pytest.approx(depth_pixel_energy(G, plane, 4, col.disparity[4], col.confidence[4], cfg) + sem)
    whole = sum(depth_pixel_energy(G, plane, v, col.disparity[v], col.confidence[v], cfg) for v in range(10))
    parts = sum(depth_pixel_energy(G, plane, v, col.disparity[v], col.confidence[v], cfg) for v in range(5)) + \
        sum(depth_pixel_energy(G, plane, v, col.disparity[v], col.confidence[v], cfg) for v in range(5, 10))
    assert whole == pytest.approx(parts, rel=1e-14)
    with pytest.raises(ValueError):
        segment_data_energy(col, pre, 5, 4, G, plane, cfg)
