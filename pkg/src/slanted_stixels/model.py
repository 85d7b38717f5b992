"""Domain types, model configuration and calibration-derived priors."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence


class GeometricClass(IntEnum):
    GROUND = 0
    OBJECT = 1
    SKY = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "GeometricClass":
        if isinstance(value, GeometricClass):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown geometric class {value!r}") from None
        return cls(int(value))


GEOMETRIC = tuple(GeometricClass)


class ConfigError(ValueError):
    """Raised with every violated invariant, one message per field path."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered semantic classes; index i is channel i of the semantic input."""

    names: tuple[str, ...]
    geometric: tuple[GeometricClass, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "geometric", tuple(GeometricClass.parse(g) for g in self.geometric))
        errors = self.problems()
        if errors:
            raise ConfigError(errors)

    def problems(self) -> list[str]:
        errors = []
        if len(self.names) != len(self.geometric):
            errors.append("taxonomy: names and geometric lists differ in length")
        if len(self.names) < 3:
            errors.append("taxonomy: needs at least 3 semantic classes")
        if len(set(self.names)) != len(self.names):
            errors.append("taxonomy: class names must be unique")
        for g in GEOMETRIC:
            if g not in self.geometric:
                errors.append(f"taxonomy: no semantic class maps to {g.label}")
        return errors

    @property
    def size(self) -> int:
        return len(self.names)

    def classes_of(self, g: GeometricClass) -> list[int]:
        return [k for k, gk in enumerate(self.geometric) if gk == g]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_list(self) -> list[dict]:
        return [{"name": n, "geometric": g.label} for n, g in zip(self.names, self.geometric)]

    @classmethod
    def from_list(cls, items) -> "ClassTaxonomy":
        errors = []
        names, geo = [], []
        for i, item in enumerate(items):
            if not isinstance(item, dict) or set(item) != {"name", "geometric"}:
                errors.append(f"taxonomy[{i}]: expected keys 'name' and 'geometric'")
                continue
            try:
                geo.append(GeometricClass.parse(item["geometric"]))
                names.append(str(item["name"]))
            except ValueError as exc:
                errors.append(f"taxonomy[{i}].geometric: {exc}")
        if errors:
            raise ConfigError(errors)
        return cls(tuple(names), tuple(geo))


def default_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(
        ("road", "sidewalk", "building", "car", "person", "sky"),
        (GeometricClass.GROUND, GeometricClass.GROUND, GeometricClass.OBJECT,
         GeometricClass.OBJECT, GeometricClass.OBJECT, GeometricClass.SKY),
    )


@dataclass(frozen=True)
class Plane:
    """Disparity-space line d(v) = b * v + a over the rows of one column."""

    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"plane parameters must be finite, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Stixel:
    v_bottom: int
    v_top: int
    semantic_class: int
    geometric: GeometricClass
    plane: Plane
    cost: float = 0.0

    @property
    def height(self) -> int:
        return self.v_top - self.v_bottom + 1


@dataclass
class StixelColumn:
    stixels: list[Stixel]
    column_index: int = 0
    total_energy: float = 0.0
    # instrumentation, not part of the representation
    candidate_evals: int = field(default=0, compare=False)
    cut_density: float = field(default=1.0, compare=False)

    def problems(self, h: int, taxonomy: ClassTaxonomy | None = None) -> list[str]:
        """Violations of the tiling and class invariants for a column of height h."""
        out = []
        where = f"column {self.column_index}"
        if not self.stixels:
            return [f"{where}: no stixels"]
        if self.stixels[0].v_bottom != 0:
            out.append(f"{where}: first stixel must start at row 0")
        if self.stixels[-1].v_top != h - 1:
            out.append(f"{where}: last stixel must end at row {h - 1}")
        for n, s in enumerate(self.stixels):
            if not 0 <= s.v_bottom <= s.v_top < h:
                out.append(f"{where} stixel {n}: bad extent [{s.v_bottom}, {s.v_top}]")
            if n and s.v_bottom != self.stixels[n - 1].v_top + 1:
                out.append(f"{where} stixel {n}: not adjacent to stixel {n - 1}")
            if taxonomy is not None:
                if not 0 <= s.semantic_class < taxonomy.size:
                    out.append(f"{where} stixel {n}: semantic class {s.semantic_class} out of range")
                elif taxonomy.geometric[s.semantic_class] != s.geometric:
                    out.append(f"{where} stixel {n}: geometric class disagrees with taxonomy")
            if s.geometric == GeometricClass.SKY and (s.plane.a != 0.0 or s.plane.b != 0.0):
                out.append(f"{where} stixel {n}: sky stixel with non-zero plane")
        return out


@dataclass
class StixelWorld:
    columns: list[StixelColumn]
    width_px: int
    vstep: int
    image_dims: tuple[int, int]
    taxonomy: ClassTaxonomy

    @property
    def column_height(self) -> int:
        return self.image_dims[1] // self.vstep

    @property
    def num_stixels(self) -> int:
        return sum(len(c.stixels) for c in self.columns)

    @property
    def total_energy(self) -> float:
        return math.fsum(c.total_energy for c in self.columns)

    def problems(self) -> list[str]:
        out = []
        W, H = self.image_dims
        if self.width_px < 1 or self.vstep < 1:
            out.append("stixel width and vstep must be >= 1")
            return out
        if len(self.columns) != W // self.width_px:
            out.append(f"expected {W // self.width_px} columns, got {len(self.columns)}")
        for col in self.columns:
            out.extend(col.problems(self.column_height, self.taxonomy))
        return out


@dataclass(frozen=True)
class PlanePrior:
    mu_a: float = 0.0
    sigma_a: float = 0.0
    mu_b: float = 0.0
    sigma_b: float = 0.0

    # sigma == 0 clamps the parameter to its mean
    @property
    def clamp_a(self) -> bool:
        return self.sigma_a == 0.0

    @property
    def clamp_b(self) -> bool:
        return self.sigma_b == 0.0


def _per_class(ground, obj, sky) -> tuple:
    return (ground, obj, sky)


@dataclass(frozen=True)
class ModelConfig:
    """Every model constant. Per-class tuples are indexed by GeometricClass."""

    p_out: float = 0.15
    sigma_noise: tuple[float, float, float] = (1.0, 1.0, 1.0)
    d_max: float = 128.0
    w_l: float = 1.0
    plane_priors: tuple[PlanePrior, PlanePrior, PlanePrior] = (
        PlanePrior(mu_a=0.0, sigma_a=50.0, mu_b=0.0, sigma_b=1.0),
        PlanePrior(mu_a=0.0, sigma_a=50.0, mu_b=0.0, sigma_b=0.0),
        PlanePrior(),
    )
    complexity_cost: float = 3.0
    first_costs: tuple[float, float, float] = (0.0, 1.0, 10.0)
    # transition_costs[lower][upper]
    transition_costs: tuple[tuple[float, float, float], ...] = (
        (0.0, 0.0, 0.0),
        (3.0, 0.0, 0.0),
        (10.0, 10.0, 0.0),
    )
    w_grav: float = 0.1
    w_ord: float = 0.1
    invalid_cost: float = 0.0
    min_cut_confidence: float = 1e-6

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_prior(self, g: GeometricClass, prior: PlanePrior) -> "ModelConfig":
        priors = list(self.plane_priors)
        priors[g] = prior
        return self.replace(plane_priors=tuple(priors))

    def to_dict(self) -> dict:
        labels = [g.label for g in GEOMETRIC]
        return {
            "p_out": self.p_out,
            "sigma_noise": dict(zip(labels, self.sigma_noise)),
            "d_max": self.d_max,
            "w_l": self.w_l,
            "plane_priors": {lab: dataclasses.asdict(p) for lab, p in zip(labels, self.plane_priors)},
            "complexity_cost": self.complexity_cost,
            "first_costs": dict(zip(labels, self.first_costs)),
            "transition_costs": {
                lab: dict(zip(labels, row)) for lab, row in zip(labels, self.transition_costs)
            },
            "w_grav": self.w_grav,
            "w_ord": self.w_ord,
            "invalid_cost": self.invalid_cost,
            "min_cut_confidence": self.min_cut_confidence,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        """Strict parse: unknown keys are errors, missing keys keep defaults."""
        if not isinstance(doc, dict):
            raise ConfigError(["config: expected a JSON object"])
        errors: list[str] = []
        default = cls()
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in names:
                errors.append(f"{key}: unknown field")

        def number(path, value):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{path}: expected a number")
                return math.nan
            return float(value)

        def per_class(path, value, convert):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected an object keyed by ground/object/sky")
                return None
            out = []
            for g in GEOMETRIC:
                if g.label not in value:
                    errors.append(f"{path}.{g.label}: missing")
                    out.append(None)
                else:
                    out.append(convert(f"{path}.{g.label}", value[g.label]))
            for key in value:
                if key not in {g.label for g in GEOMETRIC}:
                    errors.append(f"{path}.{key}: unknown geometric class")
            return tuple(out)

        def prior(path, value):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected an object")
                return None
            fields_ = {"mu_a", "sigma_a", "mu_b", "sigma_b"}
            for key in value:
                if key not in fields_:
                    errors.append(f"{path}.{key}: unknown field")
            return PlanePrior(**{k: number(f"{path}.{k}", value[k]) for k in fields_ if k in value})

        for key, value in doc.items():
            if key in ("sigma_noise", "first_costs"):
                kwargs[key] = per_class(key, value, number)
            elif key == "plane_priors":
                kwargs[key] = per_class(key, value, prior)
            elif key == "transition_costs":
                kwargs[key] = per_class(key, value, lambda p, v: per_class(p, v, number))
            elif key in names:
                kwargs[key] = number(key, value)
        if errors:
            raise ConfigError(errors)
        return dataclasses.replace(default, **kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def validate_config(config: ModelConfig, taxonomy: ClassTaxonomy | None = None) -> ModelConfig:
    """Return ``config`` unchanged if every invariant holds, else raise ConfigError."""
    errors = []

    def finite(path, x):
        if not (isinstance(x, (int, float)) and math.isfinite(x)):
            errors.append(f"{path}: must be finite")
            return False
        return True

    if finite("p_out", config.p_out) and not 0.0 < config.p_out < 1.0:
        errors.append("p_out: p_out must be in (0,1)")
    if finite("d_max", config.d_max) and config.d_max <= 0:
        errors.append("d_max: must be > 0")
    for g in GEOMETRIC:
        s = config.sigma_noise[g]
        if finite(f"sigma_noise.{g.label}", s) and s <= 0:
            errors.append(f"sigma_noise.{g.label}: must be > 0")
        p = config.plane_priors[g]
        for name in ("mu_a", "sigma_a", "mu_b", "sigma_b"):
            val = getattr(p, name)
            if finite(f"plane_priors.{g.label}.{name}", val) and name.startswith("sigma") and val < 0:
                errors.append(f"plane_priors.{g.label}.{name}: must be >= 0")
        finite(f"first_costs.{g.label}", config.first_costs[g])
        for u in GEOMETRIC:
            finite(f"transition_costs.{g.label}.{u.label}", config.transition_costs[g][u])
    sky = config.plane_priors[GeometricClass.SKY]
    if sky != PlanePrior(0.0, 0.0, 0.0, 0.0):
        errors.append("plane_priors.sky: sky plane must be clamped to (0, 0) (all fields 0)")
    for name in ("w_l", "complexity_cost", "w_grav", "w_ord"):
        val = getattr(config, name)
        if finite(name, val) and val < 0:
            errors.append(f"{name}: must be >= 0")
    finite("invalid_cost", config.invalid_cost)
    if finite("min_cut_confidence", config.min_cut_confidence) and not 0.0 <= config.min_cut_confidence <= 1.0:
        errors.append("min_cut_confidence: must be in [0,1]")
    if taxonomy is not None:
        errors.extend(taxonomy.problems())
    if errors:
        raise ConfigError(errors)
    return config


@dataclass(frozen=True)
class StereoCalibration:
    focal_px: float
    baseline_m: float
    cam_height_m: float
    pitch_rad: float = 0.0
    cy_px: float = 0.0

    def __post_init__(self):
        bad = [n for n in ("focal_px", "baseline_m", "cam_height_m") if not getattr(self, n) > 0]
        if bad:
            raise ConfigError([f"{n}: must be > 0" for n in bad])


def ground_prior_from_calibration(
    calib: StereoCalibration,
    vstep: int = 1,
    sigma_a: float = 5.0,
    sigma_b: float = 0.5,
    image_height: int | None = None,
) -> PlanePrior:
    """Disparity-space line of a flat road seen by a pitched pinhole stereo rig.

    With ``image_height=None`` the line is expressed over downsampled rows
    counted from the top of the image (row u covers image row u * vstep).
    Given the full image height, the line is re-expressed in the bottom-up
    row frame used by column inference, where downsampled row u is centred
    on image row ``H - 1 - (u * vstep + (vstep - 1) / 2)``.
    """
    ratio = calib.baseline_m / calib.cam_height_m
    slope = ratio * math.cos(calib.pitch_rad)
    offset = ratio * (calib.focal_px * math.sin(calib.pitch_rad) - calib.cy_px * math.cos(calib.pitch_rad))
    if image_height is None:
        mu_b = slope * vstep
        mu_a = offset
    else:
        mu_b = -slope * vstep
        mu_a = slope * (image_height - 1 - (vstep - 1) / 2.0) + offset
    if not (math.isfinite(mu_a) and math.isfinite(mu_b)):
        raise ConfigError(["calibration: ground prior is not finite"])
    return PlanePrior(mu_a=mu_a, sigma_a=sigma_a, mu_b=mu_b, sigma_b=sigma_b)


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.loads(fh.read())


def load_taxonomy(path) -> ClassTaxonomy:
    with open(path) as fh:
        return ClassTaxonomy.from_list(json.load(fh))


def load_calibration(path) -> StereoCalibration:
    with open(path) as fh:
        doc = json.load(fh)
    known = {f.name for f in dataclasses.fields(StereoCalibration)}
    unknown = [k for k in doc if k not in known]
    if unknown:
        raise ConfigError([f"{k}: unknown field" for k in unknown])
    return StereoCalibration(**doc)
