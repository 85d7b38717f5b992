"""Metrics and a synthetic scene generator with exact ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .io import IGNORE_LABEL, DenseImage
from .model import (ClassTaxonomy, GeometricClass, ModelConfig, PlanePrior, StereoCalibration,
                    StixelWorld, default_taxonomy, ground_prior_from_calibration)

ABS_THRESHOLD = 3.0
REL_THRESHOLD = 0.05


# ---- metrics ----

def outlier_mask(est: np.ndarray, gt: np.ndarray, rule: str = "and",
                 abs_threshold: float = ABS_THRESHOLD, rel_threshold: float = REL_THRESHOLD):
    """(outlier, evaluated) boolean masks; pixels with gt <= 0 are not evaluated."""
    if est.shape != gt.shape:
        raise ValueError(f"dimension mismatch: {est.shape} vs {gt.shape}")
    if rule not in ("and", "or"):
        raise ValueError(f"outlier rule must be 'and' or 'or', got {rule!r}")
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    evaluated = gt > 0
    err = np.abs(est - gt)
    big_abs = err > abs_threshold
    big_rel = err > rel_threshold * gt
    bad = (big_abs & big_rel) if rule == "and" else (big_abs | big_rel)
    return bad & evaluated, evaluated


def disparity_outlier_rate(est, gt, rule: str = "and", abs_threshold: float = ABS_THRESHOLD,
                           rel_threshold: float = REL_THRESHOLD) -> float:
    """Percentage of evaluated pixels whose error exceeds 3 px and 5 % of gt.

    ``rule="or"`` flags a pixel when either bound is exceeded. Returns nan if
    no pixel has a valid ground truth.
    """
    est = est.plane if isinstance(est, DenseImage) else np.asarray(est)
    gt = gt.plane if isinstance(gt, DenseImage) else np.asarray(gt)
    bad, evaluated = outlier_mask(est, gt, rule, abs_threshold, rel_threshold)
    n = int(evaluated.sum())
    if n == 0:
        return math.nan
    return 100.0 * int(bad.sum()) / n


@dataclass
class IoUResult:
    mean: float
    per_class: dict[str, float]
    counts: dict[str, tuple[int, int, int]] = field(default_factory=dict)  # name -> (tp, fp, fn)


def mean_iou(pred, gt, taxonomy: ClassTaxonomy | None = None, ignore_label: int = IGNORE_LABEL,
             num_classes: int | None = None) -> IoUResult:
    """Mean IoU in percent over the classes present in the ground truth."""
    pred = pred.plane if isinstance(pred, DenseImage) else np.asarray(pred)
    gt = gt.plane if isinstance(gt, DenseImage) else np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    pred = np.asarray(np.rint(pred), dtype=np.int64).ravel()
    gt = np.asarray(np.rint(gt), dtype=np.int64).ravel()
    keep = gt != ignore_label
    pred, gt = pred[keep], gt[keep]
    if taxonomy is not None:
        names = list(taxonomy.names)
    else:
        k = num_classes if num_classes is not None else int(max(gt.max(initial=-1), pred.max(initial=-1)) + 1)
        names = [str(i) for i in range(k)]
    per_class, counts = {}, {}
    for c in np.unique(gt):
        c = int(c)
        p, g = pred == c, gt == c
        tp = int(np.sum(p & g))
        fp = int(np.sum(p & ~g))
        fn = int(np.sum(~p & g))
        name = names[c] if 0 <= c < len(names) else str(c)
        per_class[name] = 100.0 * tp / (tp + fp + fn)
        counts[name] = (tp, fp, fn)
    mean = float(np.mean(list(per_class.values()))) if per_class else math.nan
    return IoUResult(mean, per_class, counts)


def complexity_stats(world: StixelWorld | list[StixelWorld], timings: dict | None = None) -> dict:
    worlds = world if isinstance(world, list) else [world]
    count = sum(w.num_stixels for w in worlds)
    cols = [c for w in worlds for c in w.columns]
    timings = dict(timings or {})
    return {
        "stixel_count": count,
        "stixels_per_image": count / len(worlds) if worlds else 0.0,
        "candidate_evals": sum(c.candidate_evals for c in cols),
        "cut_density": float(np.mean([c.cut_density for c in cols])) if cols else 1.0,
        "wall_ms": float(sum(timings.values())),
        "wall_ms_by_stage": timings,
    }


REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["outlier_rate", "outlier_rule", "evaluated_pixels", "mean_iou", "per_class_iou",
                 "stixel_count"],
    "additionalProperties": False,
    "properties": {
        "outlier_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 100},
        "outlier_rule": {"enum": ["and", "or"]},
        "evaluated_pixels": {"type": "integer", "minimum": 0},
        "mean_iou": {"type": ["number", "null"], "minimum": 0, "maximum": 100},
        "per_class_iou": {"type": "object", "additionalProperties": {"type": "number"}},
        "stixel_count": {"type": "integer", "minimum": 0},
    },
}


# ---- synthetic scenes ----

@dataclass
class SceneObject:
    """Upright object; rows are bottom-up at full resolution.

    ``disparity=None`` places the object at the ground disparity of its base row.
    """

    col_start: int
    col_end: int  # exclusive
    base_row: int
    height: int
    disparity: float | None = None
    label: str = "car"


@dataclass
class SceneSpec:
    """Synthetic scene. Ground disparity starts at ``ground_d0`` on the bottom
    row and follows ``ground_segments`` of (rows, slope per row); the last
    slope continues to the horizon ``sky_from``."""

    width: int
    height: int
    ground_d0: float
    ground_segments: list = field(default_factory=lambda: [(10**9, 0.0)])
    objects: list = field(default_factory=list)
    sky_from: int | None = None
    noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    invalid_rate: float = 0.0
    seed: int = 0
    d_max: float = 128.0
    semantic_blend: float = 0.0
    ground_label: str = "road"
    sky_label: str = "sky"
    taxonomy: ClassTaxonomy = field(default_factory=default_taxonomy)

    def problems(self) -> list[str]:
        out = []
        if self.width < 1 or self.height < 1:
            out.append("dims must be positive")
        if not (0 <= self.outlier_rate < 1 and 0 <= self.invalid_rate < 1
                and self.outlier_rate + self.invalid_rate < 1):
            out.append("outlier_rate and invalid_rate must lie in [0, 1) and sum below 1")
        if self.noise_sigma < 0:
            out.append("noise_sigma must be >= 0")
        if not 0 <= self.semantic_blend <= 1:
            out.append("semantic_blend must lie in [0, 1]")
        if self.d_max <= 0:
            out.append("d_max must be > 0")
        if not self.ground_segments or any(n <= 0 for n, _ in self.ground_segments):
            out.append("ground_segments need positive lengths")
        sky = self.height if self.sky_from is None else self.sky_from
        if not 0 <= sky <= self.height:
            out.append("sky_from outside the image")
        for name in (self.ground_label, self.sky_label):
            if name not in self.taxonomy.names:
                out.append(f"unknown label {name!r}")
        if self.ground_label in self.taxonomy.names and \
                self.taxonomy.geometric[self.taxonomy.index(self.ground_label)] != GeometricClass.GROUND:
            out.append("ground_label must map to Ground")
        if self.sky_label in self.taxonomy.names and \
                self.taxonomy.geometric[self.taxonomy.index(self.sky_label)] != GeometricClass.SKY:
            out.append("sky_label must map to Sky")
        if not out:
            g = self.ground_profile()[:sky]
            if np.any(g <= 0) or np.any(g > self.d_max):
                out.append("ground disparity must lie in (0, d_max] below the horizon")
        for n, o in enumerate(self.objects):
            if not (0 <= o.col_start < o.col_end <= self.width and 0 <= o.base_row
                    and o.height >= 1 and o.base_row + o.height <= self.height):
                out.append(f"objects[{n}]: outside the image")
            elif o.label not in self.taxonomy.names or \
                    self.taxonomy.geometric[self.taxonomy.index(o.label)] != GeometricClass.OBJECT:
                out.append(f"objects[{n}]: label must be an Object class")
            elif o.disparity is not None and not 0 < o.disparity <= self.d_max:
                out.append(f"objects[{n}]: disparity must lie in (0, d_max]")
        return out

    def ground_profile(self) -> np.ndarray:
        """Ground disparity per bottom-up row."""
        slopes = np.empty(self.height)
        v = 0
        for n, slope in self.ground_segments:
            slopes[v:v + n] = slope
            v += n
            if v >= self.height:
                break
        if v < self.height:
            slopes[v:] = self.ground_segments[-1][1]
        d = np.empty(self.height)
        d[0] = self.ground_d0
        d[1:] = self.ground_d0 + np.cumsum(slopes[:-1])
        return d


@dataclass
class Scene:
    disparity: DenseImage
    semantics: DenseImage
    gt_disparity: DenseImage
    gt_labels: DenseImage
    # per image column, bottom-up rows where a new segment starts (row 0 excluded)
    gt_boundaries: list[list[int]]


def synthesize(spec: SceneSpec) -> Scene:
    errors = spec.problems()
    if errors:
        raise ValueError("invalid scene: " + "; ".join(errors))
    W, H = spec.width, spec.height
    tax = spec.taxonomy
    sky = H if spec.sky_from is None else spec.sky_from
    ground = spec.ground_profile()
    # work bottom-up, flip at the end
    gt_d = np.zeros((H, W))
    labels = np.full((H, W), tax.index(spec.sky_label), dtype=np.int64)
    gt_d[:sky] = ground[:sky, None]
    labels[:sky] = tax.index(spec.ground_label)
    for o in spec.objects:
        d = o.disparity if o.disparity is not None else float(ground[o.base_row])
        gt_d[o.base_row:o.base_row + o.height, o.col_start:o.col_end] = d
        labels[o.base_row:o.base_row + o.height, o.col_start:o.col_end] = tax.index(o.label)

    is_sky = np.array([g == GeometricClass.SKY for g in tax.geometric])[labels]
    gt_d[is_sky] = 0.0

    # label changes and disparity jumps are boundaries; kinks in the road are not
    on_road = labels == tax.index(spec.ground_label)
    jump = np.abs(gt_d[1:] - gt_d[:-1]) > 1e-9
    change = (labels[1:] != labels[:-1]) | (jump & ~(on_road[1:] & on_road[:-1]))
    boundaries = [(np.flatnonzero(change[:, x]) + 1).tolist() for x in range(W)]

    rng = np.random.default_rng(spec.seed)
    meas = gt_d + (rng.normal(0.0, spec.noise_sigma, size=(H, W)) if spec.noise_sigma > 0 else 0.0)
    u = rng.random((H, W))
    out = u < spec.outlier_rate
    inv = (u >= spec.outlier_rate) & (u < spec.outlier_rate + spec.invalid_rate)
    meas = np.where(out, rng.uniform(0.0, spec.d_max, size=(H, W)), meas)
    meas = np.where(inv | is_sky, -1.0, meas)

    K = tax.size
    scores = np.zeros((H, W, K))
    np.put_along_axis(scores, labels[:, :, None], 1.0, axis=2)
    if spec.semantic_blend > 0:
        noise = rng.random((H, W, K))
        noise /= noise.sum(axis=2, keepdims=True)
        scores = (1.0 - spec.semantic_blend) * scores + spec.semantic_blend * noise

    flip = slice(None, None, -1)
    return Scene(
        disparity=DenseImage(meas[flip], "disparity"),
        semantics=DenseImage(scores[flip], "semantic_scores"),
        gt_disparity=DenseImage(gt_d[flip], "disparity"),
        gt_labels=DenseImage(labels[flip].astype(np.float64), "label_ids"),
        gt_boundaries=boundaries,
    )


def scene_from_dict(doc: dict) -> SceneSpec:
    """SceneSpec from its JSON form; unknown keys are errors."""
    doc = dict(doc)
    known = {f for f in SceneSpec.__dataclass_fields__ if f != "taxonomy"} | {"taxonomy"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown scene fields: {', '.join(unknown)}")
    if "taxonomy" in doc:
        doc["taxonomy"] = ClassTaxonomy.from_list(doc["taxonomy"])
    if "objects" in doc:
        doc["objects"] = [SceneObject(**o) for o in doc["objects"]]
    if "ground_segments" in doc:
        doc["ground_segments"] = [tuple(s) for s in doc["ground_segments"]]
    return SceneSpec(**doc)


def calibrated_ground(calib: StereoCalibration, height: int) -> tuple[float, float]:
    """(d0, slope) of the flat road over full-resolution bottom-up rows."""
    p = ground_prior_from_calibration(calib, vstep=1, image_height=height)
    return p.mu_a, p.mu_b


def constant_model(config: ModelConfig, ground_prior: PlanePrior | None = None,
                   free_height: bool = False) -> ModelConfig:
    """Constant-height baseline with every slant hard-clamped (sigma_b = 0).

    The road follows the calibrated plane ``ground_prior`` exactly; with
    ``free_height`` only its slant is clamped and the offset stays free.
    Objects stand at constant disparity.
    """
    priors = list(config.plane_priors)
    if ground_prior is not None:
        priors[GeometricClass.GROUND] = ground_prior
    priors = [PlanePrior(p.mu_a, p.sigma_a, p.mu_b, 0.0) for p in priors]
    if not free_height:
        g = priors[GeometricClass.GROUND]
        priors[GeometricClass.GROUND] = PlanePrior(g.mu_a, 0.0, g.mu_b, 0.0)
    return config.replace(plane_priors=tuple(priors))
