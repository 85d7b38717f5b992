"""File formats, input downsampling and rendering of stixel worlds.

Dense images are stored top-down as in every file format here; column
inference works bottom-up, so :func:`downsample` and :func:`render` are the
only places that flip rows.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .energy import INVALID, ColumnMeasurements, semantic_costs
from .model import (ClassTaxonomy, GeometricClass, Plane, Stixel, StixelColumn, StixelWorld)

KINDS = ("disparity", "confidence", "semantic_scores", "label_ids")
IGNORE_LABEL = 255
STIXEL_FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed input file."""


class HeaderError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class UnsupportedVariantError(FormatError):
    pass


class SchemaError(FormatError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class DenseImage:
    """Row-major float32 image, row 0 at the top. ``values`` has shape (H, W, C)."""

    values: np.ndarray
    kind: str = "disparity"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError("image values must have shape (H, W) or (H, W, C)")
        self.values = np.ascontiguousarray(v)
        if self.kind not in KINDS:
            raise ValueError(f"unknown image kind {self.kind!r}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """First channel as an (H, W) array."""
        return self.values[:, :, 0]


def _read_token_line(fh, what):
    line = fh.readline()
    if not line:
        raise HeaderError(f"missing {what}")
    try:
        return line.decode("ascii").strip()
    except UnicodeDecodeError:
        raise HeaderError(f"non-ASCII {what}") from None


# ---- PFM ----

def load_pfm(path, kind: str = "disparity", raw: bool = False) -> DenseImage:
    """Read a grayscale PFM.

    For disparity images non-positive and non-finite values become the
    invalid marker -1 unless ``raw`` is set.
    """
    with open(path, "rb") as fh:
        magic = _read_token_line(fh, "magic")
        if magic == "PF":
            raise UnsupportedVariantError(f"{path}: color PFM is not supported")
        if magic != "Pf":
            raise HeaderError(f"{path}: not a PFM file (magic {magic!r})")
        dims = _read_token_line(fh, "dimensions").split()
        try:
            width, height = (int(x) for x in dims)
            scale = float(_read_token_line(fh, "scale"))
        except ValueError:
            raise HeaderError(f"{path}: malformed PFM header") from None
        if width <= 0 or height <= 0 or scale == 0 or not math.isfinite(scale):
            raise HeaderError(f"{path}: bad PFM dimensions or scale")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = fh.read()
    n = width * height
    if len(payload) < 4 * n:
        raise TruncatedError(f"{path}: expected {4 * n} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    # PFM rows run bottom to top
    img = data.reshape(height, width)[::-1]
    if kind == "disparity" and not raw:
        with np.errstate(invalid="ignore"):
            img = np.where(np.isfinite(img) & (img > 0), img, np.float32(INVALID))
    return DenseImage(img, kind)


def write_pfm(path, image, scale: float = -1.0) -> None:
    """Write the first channel of ``image`` (DenseImage or 2-D array)."""
    arr = image.plane if isinstance(image, DenseImage) else np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("PFM holds a single channel")
    if scale == 0:
        raise ValueError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n{scale!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1], dtype=dtype).tobytes())


# ---- SEMF semantic score tensors ----

def _softmax(x):
    z = x - x.max(axis=2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=2, keepdims=True)


def load_semantic_tensor(path, normalize: bool = True, softmax: bool = False) -> DenseImage:
    """Read a SEMF tensor: ``SEMF\\n<w> <h> <classes>\\n`` then little-endian
    float32, row-major, channel fastest.

    With ``softmax`` the stored values are logits. Otherwise pixels whose
    scores do not sum to 1 (within 1e-6) are rescaled when ``normalize``.
    """
    with open(path, "rb") as fh:
        magic = _read_token_line(fh, "magic")
        if magic != "SEMF":
            raise HeaderError(f"{path}: not a SEMF file")
        dims = _read_token_line(fh, "dimensions").split()
        try:
            width, height, classes = (int(x) for x in dims)
        except ValueError:
            raise HeaderError(f"{path}: malformed SEMF header") from None
        if min(width, height, classes) <= 0:
            raise HeaderError(f"{path}: bad SEMF dimensions")
        payload = fh.read()
    n = width * height * classes
    if len(payload) != 4 * n:
        raise TruncatedError(f"{path}: expected {4 * n} payload bytes, got {len(payload)}")
    x = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(height, width, classes)
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite scores")
    if softmax:
        x = _softmax(x.astype(np.float64)).astype(np.float32)
    elif normalize:
        if np.any(x < 0):
            raise FormatError(f"{path}: negative scores (use softmax for logits)")
        s = x.astype(np.float64).sum(axis=2, keepdims=True)
        if np.any(s <= 0):
            raise FormatError(f"{path}: pixel with all-zero scores")
        off = np.abs(s - 1.0) > 1e-6
        x = np.where(off, x / s, x).astype(np.float32)
    return DenseImage(x, "semantic_scores")


def write_semantic_tensor(path, image) -> None:
    x = image.values if isinstance(image, DenseImage) else np.asarray(image)
    if x.ndim != 3:
        raise ValueError("semantic tensor must have shape (H, W, C)")
    h, w, c = x.shape
    with open(path, "wb") as fh:
        fh.write(f"SEMF\n{w} {h} {c}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


# ---- PGM / PPM ----

def _netpbm_header(fh, path, magic_expected, count):
    data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise HeaderError(f"{path}: truncated header")
        tokens.append(data[start:pos].decode("ascii", "replace"))
    if tokens[0] != magic_expected:
        raise HeaderError(f"{path}: expected {magic_expected}, got {tokens[0]!r}")
    try:
        nums = [int(t) for t in tokens[1:]]
    except ValueError:
        raise HeaderError(f"{path}: malformed header") from None
    # exactly one whitespace byte separates header and raster
    return nums, data[pos + 1:]


def read_pgm(path) -> DenseImage:
    """8- or 16-bit binary PGM (P5) of label ids."""
    with open(path, "rb") as fh:
        (w, h, maxval), raster = _netpbm_header(fh, path, "P5", 4)
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise HeaderError(f"{path}: bad PGM dimensions or maxval")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(raster) < n:
        raise TruncatedError(f"{path}: expected {n} raster bytes, got {len(raster)}")
    data = np.frombuffer(raster[:n], dtype=dtype).reshape(h, w)
    return DenseImage(data.astype(np.float32), "label_ids")


def write_pgm(path, labels) -> None:
    arr = labels.plane if isinstance(labels, DenseImage) else np.asarray(labels)
    arr = np.asarray(np.rint(arr), dtype=np.int64)
    if arr.ndim != 2 or np.any(arr < 0) or np.any(arr > 65535):
        raise ValueError("PGM labels must be a 2-D array of values in [0, 65535]")
    maxval = 255 if arr.max(initial=0) < 256 else 65535
    dtype = np.uint8 if maxval == 255 else ">u2"
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.astype(dtype).tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) array")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (w, h, maxval), raster = _netpbm_header(fh, path, "P6", 4)
    if maxval != 255:
        raise UnsupportedVariantError(f"{path}: only 8-bit PPM is supported")
    if len(raster) < 3 * w * h:
        raise TruncatedError(f"{path}: truncated raster")
    return np.frombuffer(raster[:3 * w * h], dtype=np.uint8).reshape(h, w, 3).copy()


# ---- downsampling and rendering ----

def downsample(disparity: DenseImage, semantics: DenseImage, width_px: int, vstep: int,
               confidence: DenseImage | None = None) -> list[ColumnMeasurements]:
    """Aggregate width_px x vstep blocks into bottom-up column measurements.

    Blocks are anchored at the bottom-left corner; leftover rows at the top
    and columns at the right are dropped. Disparity is the median of the
    valid members, confidence their mean, and semantic scores the per-class
    mean converted to costs.
    """
    H, W = disparity.height, disparity.width
    if (semantics.height, semantics.width) != (H, W):
        raise ValueError("disparity and semantic images differ in size")
    if confidence is not None and (confidence.height, confidence.width) != (H, W):
        raise ValueError("confidence image differs in size")
    if width_px < 1 or vstep < 1:
        raise ValueError("stixel width and vstep must be >= 1")
    if width_px > W or vstep > H:
        raise ValueError(f"block {width_px}x{vstep} larger than image {W}x{H}")
    ncol, nrow = W // width_px, H // vstep

    def blocks(a):
        # (H, W, ...) -> (ncol, nrow, vstep * width_px, ...) with row 0 at the bottom
        a = a[H - nrow * vstep:, :ncol * width_px][::-1]
        rest = a.shape[2:]
        a = a.reshape(nrow, vstep, ncol, width_px, *rest)
        a = np.moveaxis(a, 2, 0)
        return a.reshape(ncol, nrow, vstep * width_px, *rest)

    d = blocks(disparity.plane.astype(np.float64))
    valid = d >= 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(np.where(valid, d, np.nan), axis=2)
    any_valid = valid.any(axis=2)
    med = np.where(any_valid, med, INVALID)
    if confidence is None:
        conf = np.ones_like(med)
    else:
        c = blocks(confidence.plane.astype(np.float64))
        n = valid.sum(axis=2)
        conf = np.where(any_valid, np.where(valid, c, 0.0).sum(axis=2) / np.maximum(n, 1), 1.0)
    sem = blocks(semantics.values.astype(np.float64)).mean(axis=2)
    costs = semantic_costs(sem)
    return [ColumnMeasurements(med[x], conf[x], costs[x]) for x in range(ncol)]


def _footprints(world: StixelWorld):
    """(column, stixel, x0, x1, y0, y1) with image-space half-open spans, y top-down."""
    H = world.image_dims[1]
    w, vs = world.width_px, world.vstep
    for col in world.columns:
        x0 = col.column_index * w
        for s in col.stixels:
            y0 = H - (s.v_top + 1) * vs
            y1 = H - s.v_bottom * vs
            yield col, s, x0, x0 + w, y0, y1


def render(world: StixelWorld) -> tuple[DenseImage, DenseImage]:
    """Full-resolution disparity and label maps of a stixel world.

    Pixels outside every stixel get disparity -1 and the ignore label.
    """
    W, H = world.image_dims
    disp = np.full((H, W), INVALID, dtype=np.float64)
    labels = np.full((H, W), IGNORE_LABEL, dtype=np.float64)
    vs = world.vstep
    for _, s, x0, x1, y0, y1 in _footprints(world):
        y = np.arange(y0, y1)
        u = (H - 1 - y) // vs
        if s.geometric == GeometricClass.SKY:
            d = np.zeros(len(y))
        else:
            d = s.plane.b * u + s.plane.a
        disp[y0:y1, x0:x1] = d[:, None]
        labels[y0:y1, x0:x1] = s.semantic_class
    return DenseImage(disp, "disparity"), DenseImage(labels, "label_ids")


# ---- stixel JSON ----

def world_to_dict(world: StixelWorld) -> dict:
    return {
        "version": STIXEL_FORMAT_VERSION,
        "image_dims": list(world.image_dims),
        "width_px": world.width_px,
        "vstep": world.vstep,
        "taxonomy": world.taxonomy.to_list(),
        "columns": [
            {
                "index": c.column_index,
                "total_energy": c.total_energy,
                "stixels": [[s.v_bottom, s.v_top, s.semantic_class, s.plane.a, s.plane.b, s.cost]
                            for s in c.stixels],
            }
            for c in world.columns
        ],
    }


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def world_from_dict(doc) -> StixelWorld:
    errors = []
    if not isinstance(doc, dict):
        raise SchemaError(["document must be an object"])
    expected = {"version", "image_dims", "width_px", "vstep", "taxonomy", "columns"}
    for k in sorted(set(doc) - expected):
        errors.append(f"{k}: unknown field")
    for k in sorted(expected - set(doc)):
        errors.append(f"{k}: missing")
    if errors:
        raise SchemaError(errors)
    if doc["version"] != STIXEL_FORMAT_VERSION:
        raise SchemaError([f"version: unsupported version {doc['version']!r}"])
    dims = doc["image_dims"]
    if not (isinstance(dims, list) and len(dims) == 2 and all(_is_int(x) and x >= 0 for x in dims)):
        errors.append("image_dims: must be [W, H] with non-negative integers")
    for k in ("width_px", "vstep"):
        if not (_is_int(doc[k]) and doc[k] >= 1):
            errors.append(f"{k}: must be an integer >= 1")
    try:
        taxonomy = ClassTaxonomy.from_list(doc["taxonomy"])
    except (ValueError, TypeError, KeyError) as exc:
        errors.append(f"taxonomy: {exc}")
        taxonomy = None
    if not isinstance(doc["columns"], list):
        errors.append("columns: must be a list")
    if errors:
        raise SchemaError(errors)

    columns = []
    for n, c in enumerate(doc["columns"]):
        where = f"columns[{n}]"
        if not isinstance(c, dict) or set(c) != {"index", "total_energy", "stixels"}:
            errors.append(f"{where}: must have exactly index, total_energy, stixels")
            continue
        if not _is_int(c["index"]) or not _is_num(c["total_energy"]) or not isinstance(c["stixels"], list):
            errors.append(f"{where}: bad index, total_energy or stixels")
            continue
        stixels = []
        for t, row in enumerate(c["stixels"]):
            at = f"{where}.stixels[{t}]"
            if not (isinstance(row, list) and len(row) == 6 and all(_is_int(x) for x in row[:3])
                    and all(_is_num(x) for x in row[3:])):
                errors.append(f"{at}: expected [v_bottom, v_top, semantic_class, a, b, cost]")
                continue
            vb, vt, k, a, b, cost = row
            if not 0 <= k < taxonomy.size:
                errors.append(f"{at}: semantic class {k} out of range")
                continue
            stixels.append(Stixel(vb, vt, k, taxonomy.geometric[k], Plane(float(a), float(b)), float(cost)))
        columns.append(StixelColumn(stixels, c["index"], float(c["total_energy"])))
    if errors:
        raise SchemaError(errors)
    world = StixelWorld(columns, doc["width_px"], doc["vstep"], tuple(dims), taxonomy)
    for n, c in enumerate(columns):
        if c.column_index != n:
            errors.append(f"columns[{n}]: index {c.column_index} out of order")
    errors.extend(world.problems())
    if errors:
        raise SchemaError(errors)
    return world


def save_stixels(world: StixelWorld, path) -> None:
    with open(path, "w") as fh:
        json.dump(world_to_dict(world), fh, indent=1)
        fh.write("\n")


def load_stixels(path) -> StixelWorld:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return world_from_dict(doc)


# ---- visualisation ----

PALETTE = np.array([
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (0, 0, 142), (220, 20, 60), (70, 130, 180),
    (107, 142, 35), (152, 251, 152), (250, 170, 30), (220, 220, 0), (119, 11, 32), (190, 153, 153),
], dtype=np.uint8)

# depth ramp: disparity 0 -> blue, rising through cyan, green and yellow to red at d_range
_RAMP = np.array([(0, 0, 255), (0, 255, 255), (0, 255, 0), (255, 255, 0), (255, 0, 0)], dtype=np.float64)


def depth_colors(d: np.ndarray, d_range: float = 128.0) -> np.ndarray:
    t = np.clip(np.asarray(d, dtype=np.float64) / d_range, 0.0, 1.0) * (len(_RAMP) - 1)
    k = np.minimum(np.floor(t).astype(int), len(_RAMP) - 2)
    f = (t - k)[..., None]
    rgb = _RAMP[k] * (1.0 - f) + _RAMP[k + 1] * f
    return np.rint(rgb).astype(np.uint8)


def visualization(world: StixelWorld, mode: str = "semantic", d_range: float = 128.0) -> np.ndarray:
    """RGB image of a world with 1-px black outlines around every stixel."""
    if mode not in ("semantic", "depth"):
        raise ValueError(f"mode must be 'semantic' or 'depth', got {mode!r}")
    disp, labels = render(world)
    W, H = world.image_dims
    if mode == "semantic":
        lab = labels.plane.astype(np.int64)
        rgb = PALETTE[lab % len(PALETTE)]
    else:
        rgb = depth_colors(disp.plane, d_range)
    rgb = np.where((labels.plane == IGNORE_LABEL)[:, :, None], 0, rgb).astype(np.uint8)
    for _, _, x0, x1, y0, y1 in _footprints(world):
        rgb[y0:y1, x0] = 0
        rgb[y0:y1, x1 - 1] = 0
        rgb[y0, x0:x1] = 0
        rgb[y1 - 1, x0:x1] = 0
    return rgb


def save_ppm_visualization(world: StixelWorld, mode: str, path, d_range: float = 128.0) -> None:
    write_ppm(path, visualization(world, mode, d_range))
