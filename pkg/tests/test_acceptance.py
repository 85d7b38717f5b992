"""Acceptance suite: one test per criterion, each printing a single verdict line.

Run on its own with ``pytest tests/test_acceptance.py -v -s``.
"""
import json
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate

from conftest import SAMPLE_DIR, prepared, random_column, random_config
from slanted_stixels import io
from slanted_stixels.cli import main as cli_main
from slanted_stixels.cuts import generate_cuts, regular_cut_set
from slanted_stixels.energy import HALF_LOG_2PI, ColumnMeasurements, ColumnPrefix, depth_pixel_energy
from slanted_stixels.evaluate import (SceneObject, SceneSpec, calibrated_ground, constant_model,
                                      disparity_outlier_rate, mean_iou, synthesize)
from slanted_stixels.infer import _tables, brute_force_column, infer_column, infer_image, solve_column
from slanted_stixels.model import (GEOMETRIC, GeometricClass, ModelConfig, Plane, PlanePrior,
                                   StereoCalibration, Stixel, StixelColumn, StixelWorld,
                                   ground_prior_from_calibration)
from slanted_stixels.planefit import fit_plane_map
from slanted_stixels import _backend

G, O, S = GeometricClass.GROUND, GeometricClass.OBJECT, GeometricClass.SKY


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


def _key(column):
    return [(s.v_bottom, s.v_top, int(s.geometric), s.semantic_class) for s in column.stixels]


# 1 -------------------------------------------------------------------------

def test_c1_dp_matches_brute_force(taxonomy, verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for trial in range(200):
        h = int(rng.integers(1, 13))
        cfg = random_config(rng)
        col, pre = prepared(random_column(rng, h, K=6, structured=trial % 2 == 1), cfg, taxonomy)
        dp = infer_column(col, pre, cfg)
        bf = brute_force_column(col, pre, cfg, max_h=12)
        if dp.total_energy != bf.total_energy or _key(dp) != _key(bf):
            mismatches += 1
    dt = time.perf_counter() - t0
    verdict(1, mismatches == 0 and dt < 60,
            f"{200 - mismatches}/200 columns identical to brute force in {dt:.1f} s (limit 60 s)")


# 2 -------------------------------------------------------------------------

def test_c2_cut_prior_soundness(taxonomy, verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    below = errors = covered = differ = 0
    for trial in range(500):
        try:
            cfg = random_config(rng)
            h = int(rng.integers(2, 64))
            noise = trial % 3 == 0
            col = random_column(rng, h, invalid=0.1, structured=not noise)
            col, pre = prepared(col, cfg, taxonomy)
            exact = infer_column(col, pre, cfg)
            cuts = generate_cuts(col, taxonomy)
            pruned = infer_column(col, pre, cfg, cuts)
        except Exception:
            errors += 1
            continue
        if pruned.total_energy < exact.total_energy:
            below += 1
        # (b): the generated cuts contain every boundary of the exact optimum
        if cuts.covers([s.v_bottom for s in exact.stixels]):
            covered += 1
            if _key(pruned) != _key(exact):
                differ += 1
    dt = time.perf_counter() - t0
    ok = below == 0 and errors == 0 and differ == 0 and covered > 0 and dt < 120
    verdict(2, ok, f"(a) pruned < exact in {below}/500, exceptions {errors}; "
                   f"(b) {covered} columns with covering cuts, {differ} differ; {dt:.1f} s (limit 120 s)")


# 3 -------------------------------------------------------------------------

def _ref_pixel(d, c, f, sigma, cfg):
    """Constant-disparity mixture energy with a closed-form erf normaliser."""
    if d < 0:
        return cfg.invalid_cost
    z = sigma * math.sqrt(math.pi) / (2 * c) * (math.erf(c * (cfg.d_max - f) / sigma) + math.erf(c * f / sigma))
    dens = cfg.p_out / cfg.d_max + (1 - cfg.p_out) / z * math.exp(-(c * (d - f) / sigma) ** 2)
    return -math.log(dens)


def _ref_segment(col, vb, vt, g, cfg, taxonomy):
    """(energy, disparity, semantic class) of a constant-disparity stixel on rows vb..vt."""
    p = cfg.plane_priors[g]
    sigma = cfg.sigma_noise[g]
    rows = [v for v in range(vb, vt + 1) if col.disparity[v] >= 0]
    if g == S or not rows or p.sigma_a == 0:
        a = p.mu_a
    else:
        sw = sum((col.confidence[v] / sigma) ** 2 for v in rows)
        swd = sum((col.confidence[v] / sigma) ** 2 * col.disparity[v] for v in rows)
        a = (swd + p.mu_a / p.sigma_a ** 2) / (sw + 1 / p.sigma_a ** 2)
    e = sum(_ref_pixel(col.disparity[v], col.confidence[v], a, sigma, cfg) for v in range(vb, vt + 1))
    if p.sigma_a > 0:
        e += ((a - p.mu_a) / p.sigma_a) ** 2 + HALF_LOG_2PI + math.log(p.sigma_a)
    sem = [(cfg.w_l * float(col.semantic_cost[vb:vt + 1, k].sum()), k)
           for k, gk in enumerate(taxonomy.geometric) if gk == g]
    s, k = min(sem)
    return e + s, a, k


def _ref_dp(col, cfg, taxonomy):
    h = col.h
    seg = {(i, j, g): _ref_segment(col, i, j - 1, g, cfg, taxonomy)
           for i in range(h) for j in range(i + 1, h + 1) for g in GEOMETRIC}
    best = {}
    for j in range(1, h + 1):
        for i in range(j):
            for g in GEOMETRIC:
                e, a, _ = seg[(i, j, g)]
                if i == 0:
                    best[(i, j, g)] = (e + cfg.complexity_cost + cfg.first_costs[g], None)
                    continue
                cands = []
                for k in range(i):
                    for gl in GEOMETRIC:
                        prev = best[(k, i, gl)][0]
                        x = a - seg[(k, i, gl)][1]
                        t = cfg.complexity_cost + cfg.transition_costs[gl][g]
                        if gl == G and g == O:
                            t += cfg.w_grav * x * x
                        elif gl == O and g == O and x > 0:
                            t += cfg.w_ord * x * x
                        cands.append((prev + e + t, (k, gl)))
                best[(i, j, g)] = min(cands, key=lambda c: c[0])
    total, state = min((best[(i, h, g)][0], (i, h, g)) for i in range(h) for g in GEOMETRIC)
    path = []
    while state is not None:
        i, j, g = state
        path.append((i, j - 1, g, seg[state][2]))
        back = best[state][1]
        state = None if back is None else (back[0], i, back[1])
    return total, path[::-1], seg


def test_c3_constant_model_reduction(taxonomy, verdict):
    rng = np.random.default_rng(3)
    worst_seg = worst_total = 0.0
    disagree = columns = 0
    for scene in range(50):
        d0 = float(rng.uniform(10, 40))
        objs = []
        for _ in range(2):
            c0 = int(rng.integers(0, 3)) * 8
            objs.append(SceneObject(c0, c0 + 8, int(rng.integers(0, 20)), int(rng.integers(8, 30)),
                                    disparity=float(rng.uniform(5, 60))))
        spec = SceneSpec(32, 64, d0, [(10 ** 9, 0.0)], objs, sky_from=int(rng.integers(40, 60)),
                         noise_sigma=0.5, outlier_rate=0.02, invalid_rate=0.05, seed=scene,
                         semantic_blend=0.3)
        sc = synthesize(spec)
        cfg = ModelConfig(
            plane_priors=(PlanePrior(d0, 5.0, 0.0, 0.0), PlanePrior(20.0, 30.0, 0.0, 0.0), PlanePrior()),
            w_grav=float(rng.uniform(0, 0.5)), w_ord=float(rng.uniform(0, 0.5)))
        for col in io.downsample(sc.disparity, sc.semantics, 8, 4):
            columns += 1
            col, pre = prepared(col, cfg, taxonomy)
            out, table = solve_column(col, pre, cfg)
            bounds, cost, _, _, _ = _tables(col, pre, cfg, regular_cut_set(col.h, 1), _backend.get())
            total, path, seg = _ref_dp(col, cfg, taxonomy)
            for (i, j, g), (e, _, _) in seg.items():
                worst_seg = max(worst_seg, abs(cost[i, j, g] - e) / abs(e))
            worst_total = max(worst_total, abs(out.total_energy - total) / abs(total))
            if _key(out) != [(vb, vt, g, k) for vb, vt, g, k in path]:
                disagree += 1
    ok = worst_seg <= 1e-9 and worst_total <= 1e-9 and disagree == 0
    verdict(3, ok, f"max relative segment error {worst_seg:.2e}, total {worst_total:.2e}; "
                   f"{columns - disagree}/{columns} segmentations agree over 50 flat scenes")


# 4 -------------------------------------------------------------------------

def _c4_scene(seed, H=192, W=96, w=8):
    rng = np.random.default_rng(seed)
    calib = StereoCalibration(focal_px=600.0, baseline_m=0.5, cam_height_m=1.5, cy_px=0.4 * H)
    d0, flat = calibrated_ground(calib, H)
    kink = int(rng.integers(20, 60))
    factor = float(rng.choice([rng.uniform(0.45, 0.65), rng.uniform(1.35, 1.6)]))
    spec = SceneSpec(W, H, d0, [(kink, flat), (H, flat * factor)], noise_sigma=0.75, outlier_rate=0.05,
                     seed=seed)
    g = spec.ground_profile()
    sky = int(np.argmax(g <= 2.0)) if np.any(g <= 2.0) else H
    sky = min(sky, H - 8)
    objs = []
    for _ in range(3):
        c0 = int(rng.integers(0, W // w - 2)) * w
        objs.append(SceneObject(c0, c0 + w * int(rng.integers(1, 3)), int(rng.integers(0, sky // 2)),
                                int(rng.integers(12, 40)), label="car"))
    spec.objects, spec.sky_from = objs, sky
    return spec, calib, abs(factor - 1.0)


def test_c4_slanted_beats_constant(verdict):
    H, W, w, vs = 192, 96, 8, 4
    t0 = time.perf_counter()
    rates = []
    mismatch = []
    for seed in range(20):
        spec, calib, m = _c4_scene(seed, H, W, w)
        mismatch.append(m)
        sc = synthesize(spec)
        cols = io.downsample(sc.disparity, sc.semantics, w, vs)
        prior = ground_prior_from_calibration(calib, vs, sigma_a=5.0, sigma_b=0.5, image_height=H)
        slanted = ModelConfig().with_prior(G, prior)
        const = constant_model(ModelConfig(), prior)
        r = []
        for cfg in (slanted, const):
            world = infer_image(cols, cfg, spec.taxonomy, width_px=w, vstep=vs, image_dims=(W, H), threads=1)
            disp, _ = io.render(world)
            r.append(disparity_outlier_rate(disp, sc.gt_disparity))
        rates.append(r)
    dt = time.perf_counter() - t0
    rates = np.array(rates)
    wins = int(np.sum(rates[:, 0] < rates[:, 1]))
    gain = float(np.mean(rates[:, 1] - rates[:, 0]))
    ok = min(mismatch) >= 0.3 and wins >= 19 and gain >= 5.0 and dt < 300
    verdict(4, ok, f"slanted better in {wins}/20 scenes, mean improvement {gain:.1f} pp "
                   f"(slanted {rates[:, 0].mean():.1f} %, constant {rates[:, 1].mean():.1f} %), "
                   f"slope mismatch >= {min(mismatch):.0%}, {dt:.1f} s")


# 5 -------------------------------------------------------------------------

def test_c5_sensor_model_normalised(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        cfg = ModelConfig(p_out=float(rng.uniform(0.01, 0.9)), d_max=float(rng.uniform(16, 256)),
                          sigma_noise=tuple(float(x) for x in rng.uniform(0.2, 4.0, 3)))
        g = GeometricClass(int(rng.integers(0, 2)))
        v = int(rng.integers(0, 200))
        plane = Plane(float(rng.uniform(-20, cfg.d_max + 20)), float(rng.uniform(-0.5, 0.5)))
        f = plane.b * v + plane.a
        c = float(rng.uniform(0.05, 1.0))
        pts = [f] if 0 < f < cfg.d_max else None
        total, _ = integrate.quad(lambda d: math.exp(-depth_pixel_energy(g, plane, v, d, c, cfg)),
                                  0.0, cfg.d_max, points=pts, limit=500, epsabs=1e-13, epsrel=1e-12)
        worst = max(worst, abs(total - 1.0))
    verdict(5, worst <= 1e-6, f"max |integral - 1| = {worst:.2e} over 100 hypotheses (limit 1e-6)")


# 6 -------------------------------------------------------------------------

def _oracle_plane(v, w, d, prior):
    """Grid search, then exact coordinate descent over the free parameters."""
    fa, fb = prior.sigma_a > 0, prior.sigma_b > 0
    ia = 1 / prior.sigma_a ** 2 if fa else 0.0
    ib = 1 / prior.sigma_b ** 2 if fb else 0.0

    def obj(a, b):
        r = d - (b * v + a)
        return float(np.sum(w * r * r) + ia * (a - prior.mu_a) ** 2 + ib * (b - prior.mu_b) ** 2)

    A = np.linspace(-20, 80, 101) if fa else [prior.mu_a]
    B = np.linspace(-3, 3, 61) if fb else [prior.mu_b]
    _, a, b = min((obj(a, b), a, b) for a in A for b in B)
    S0, S1, S2 = w.sum(), (w * v).sum(), (w * v * v).sum()
    Sd, Svd = (w * d).sum(), (w * v * d).sum()
    for _ in range(500000):
        a0, b0 = a, b
        if fa:
            a = (Sd - b * S1 + ia * prior.mu_a) / (S0 + ia)
        if fb:
            b = (Svd - a * S1 + ib * prior.mu_b) / (S2 + ib)
        if abs(a - a0) < 1e-14 * (1 + abs(a)) and abs(b - b0) < 1e-14 * (1 + abs(b)):
            break
    return a, b


def test_c6_plane_fit_matches_oracle(taxonomy, verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    clamped = 0
    for n in range(200):
        h = 64
        vb = int(rng.integers(0, 50))
        vt = int(rng.integers(vb + 2, min(h, vb + 25)))
        d = np.full(h, -1.0)
        rows = np.arange(vb, vt + 1)
        d[rows] = rng.uniform(5, 20) + rng.uniform(-1, 1) * (rows - vb) + rng.normal(0, 1, len(rows))
        d = np.clip(d, -1.0, 120.0)
        d[rows[2:][rng.random(len(rows) - 2) < 0.2]] = -1.0
        conf = rng.uniform(0.2, 1.0, h)
        kind = n % 4  # free, clamped slant, clamped offset, both clamped
        prior = PlanePrior(float(rng.uniform(0, 40)), 0.0 if kind in (2, 3) else float(rng.uniform(0.5, 30)),
                           float(rng.uniform(-1, 1)), 0.0 if kind in (1, 3) else float(rng.uniform(0.05, 2)))
        clamped += kind > 0
        cfg = ModelConfig(sigma_noise=(float(rng.uniform(0.5, 2)),) * 3, plane_priors=(prior, prior, PlanePrior()))
        col = ColumnMeasurements.from_scores(d, np.full((h, 6), 1 / 6), conf)
        pre = ColumnPrefix.build(col, cfg, taxonomy)
        plane = fit_plane_map(pre, vb, vt, G, cfg)
        valid = rows[d[rows] >= 0]
        w = (conf[valid] / cfg.sigma_noise[0]) ** 2
        a, b = _oracle_plane(valid.astype(float), w, d[valid], prior)
        worst = max(worst, abs(plane.a - a), abs(plane.b - b))
    verdict(6, worst <= 1e-6, f"max |delta (a, b)| = {worst:.2e} over 200 segments, {clamped} with clamps")


# 7 -------------------------------------------------------------------------

def _bench_column(h, rng):
    v = np.arange(h)
    d = 40.0 - 35.0 * v / h
    obj = (v >= h // 5) & (v < h // 2)
    d[obj] = d[h // 5]
    d[v >= 3 * h // 4] = -1.0
    d = np.where(d >= 0, d + rng.normal(0, 0.3, h), -1.0)
    labels = np.where(obj, 3, np.where(v >= 3 * h // 4, 5, 0))
    scores = np.full((h, 6), 0.02)
    scores[v, labels] = 0.9
    return ColumnMeasurements.from_scores(d, scores)


def test_c7_complexity_scaling(taxonomy, verdict):
    rng = np.random.default_rng(0)
    h = 512
    cfg = ModelConfig()
    col, pre = prepared(_bench_column(h, rng), cfg, taxonomy)
    sizes, counts, times = [], [], []
    for step in (1, 2, 4, 8):
        cuts = regular_cut_set(h, step)
        best = math.inf
        for _ in range(3 if step > 1 else 2):
            t = time.perf_counter()
            out = infer_column(col, pre, cfg, cuts)
            best = min(best, time.perf_counter() - t)
        sizes.append(len(cuts))
        counts.append(out.candidate_evals)
        times.append(best)
    x, y = np.array(sizes, float), np.array(counts, float)
    fit = np.polyval(np.polyfit(x, y, 2), x)
    r2 = 1 - np.sum((y - fit) ** 2) / np.sum((y - y.mean()) ** 2)
    speedup = times[0] / times[-1]
    ok = r2 >= 0.99 and speedup >= 4
    verdict(7, ok, f"h' = {sizes}, evals = {counts}, R^2 = {r2:.6f}; "
                   f"{1e3 * times[0]:.0f} ms full vs {1e3 * times[-1]:.1f} ms at 12.5 % -> {speedup:.1f}x "
                   f"({_backend.NAME} kernels)")


# 8 -------------------------------------------------------------------------

def test_c8_noiseless_scene_is_exact(verdict):
    H, W, w, vs = 96, 64, 8, 4
    calib = StereoCalibration(focal_px=500.0, baseline_m=0.5, cam_height_m=1.5, cy_px=48.0)
    d0, slope = calibrated_ground(calib, H)
    spec = SceneSpec(W, H, d0, [(H, slope)],
                     objects=[SceneObject(16, 32, 8, 20, label="car"), SceneObject(40, 48, 20, 28, label="person")],
                     sky_from=44)
    sc = synthesize(spec)
    cfg = ModelConfig().with_prior(G, ground_prior_from_calibration(calib, vs, image_height=H))
    cols = io.downsample(sc.disparity, sc.semantics, w, vs)
    world = infer_image(cols, cfg, spec.taxonomy, width_px=w, vstep=vs, image_dims=(W, H), threads=1)
    disp, labels = io.render(world)
    rate = disparity_outlier_rate(disp, sc.gt_disparity)
    iou = mean_iou(labels, sc.gt_labels, spec.taxonomy).mean
    verdict(8, rate == 0.0 and iou == 100.0, f"outlier rate {rate:.2f} %, mean IoU {iou:.1f} %")


# 9 -------------------------------------------------------------------------

def _random_world(rng, taxonomy):
    ncol, h = int(rng.integers(1, 6)), int(rng.integers(1, 20))
    width_px, vstep = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    cols = []
    for x in range(ncol):
        starts = np.union1d([0], rng.choice(h, size=int(rng.integers(0, h)), replace=False))
        ends = np.r_[starts[1:], h] - 1
        stixels = []
        for vb, vt in zip(starts, ends):
            k = int(rng.integers(0, taxonomy.size))
            g = taxonomy.geometric[k]
            plane = Plane() if g == S else Plane(float(rng.normal(0, 50)), float(rng.normal(0, 2)))
            stixels.append(Stixel(int(vb), int(vt), k, g, plane, float(rng.normal(0, 100))))
        cols.append(StixelColumn(stixels, x, float(rng.normal(0, 1e3))))
    return StixelWorld(cols, width_px, vstep, (ncol * width_px, h * vstep), taxonomy)


def test_c9_io_bit_exact(tmp_path, taxonomy, verdict):
    rng = np.random.default_rng(9)
    bad = {"pfm": 0, "semf": 0, "json": 0}
    for n in range(100):
        shape = (int(rng.integers(1, 40)), int(rng.integers(1, 40)))
        arr = (rng.standard_normal(shape) * 10 ** rng.uniform(-3, 6, shape)).astype(np.float32)
        p = tmp_path / "x.pfm"
        io.write_pfm(p, arr, scale=float(rng.choice([-1.0, 1.0])))
        bad["pfm"] += not np.array_equal(io.load_pfm(p, raw=True).plane, arr)

        k = int(rng.integers(3, 20))
        sem = rng.dirichlet(np.ones(k), size=shape).astype(np.float32)
        p = tmp_path / "x.semf"
        io.write_semantic_tensor(p, sem)
        bad["semf"] += not np.array_equal(io.load_semantic_tensor(p, normalize=False).values, sem)

        world = _random_world(rng, taxonomy)
        p = tmp_path / "x.json"
        io.save_stixels(world, p)
        back = io.load_stixels(p)
        bad["json"] += back.columns != world.columns or back.image_dims != world.image_dims

    out = tmp_path / "w.json"
    ppm_ok = True
    for mode in ("semantic", "depth"):
        viz = tmp_path / f"{mode}.ppm"
        code = cli_main(["infer", "--disparity", os.path.join(SAMPLE_DIR, "disparity.pfm"),
                         "--semantics", os.path.join(SAMPLE_DIR, "semantics.semf"), "--width", "8",
                         "--vstep", "4", "--threads", "1", "--out", str(out), "--viz", str(viz),
                         "--viz-mode", mode])
        with open(os.path.join(SAMPLE_DIR, f"world_{mode}.ppm"), "rb") as fh:
            ppm_ok &= code == 0 and viz.read_bytes() == fh.read()
    ok = not any(bad.values()) and ppm_ok
    verdict(9, ok, f"round-trip failures per 100 payloads {json.dumps(bad)}; "
                   f"golden PPM bytes {'match' if ppm_ok else 'differ'}")
