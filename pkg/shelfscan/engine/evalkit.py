"""
shelfscan
~~~~~~~~~

Synthetic shelf scenes with ground truth, detection scoring and bench
suites.

:license: MIT, see LICENSE for more details.
"""

import json
import logging
import math
import string
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import PIL.Image
import PIL.ImageDraw
from scipy import ndimage

from shelfscan.engine import exception
from shelfscan.engine.aggregation import window_size
from shelfscan.engine.imagecore import RasterImage
from shelfscan.engine.pipeline import (
    DetectionReport,
    PatternEntry,
    SceneContext,
    run_multi_product,
)
from shelfscan.utils.config import RunConfig

log = logging.getLogger("shelfscan.evalkit")

# published results on full-resolution shelf photographs
REFERENCE_RESULTS: Dict[str, Dict[str, float]] = {
    "12MPx": {"detection_rate": 0.890, "false_detection_chance": 0.0072, "avg_false_detections": 3.07},
    "3MPx": {"detection_rate": 0.844, "false_detection_chance": 0.0163, "avg_false_detections": 3.28},
}

SCALE_LIMITS = (0.5, 2.0)
ROTATION_LIMITS = (-30.0, 30.0)
PLACEMENT_ATTEMPTS = 200


@dataclass(frozen=True)
class Placement:
    pattern_id: str
    center_x: float
    center_y: float
    scale: float
    rotation: float
    pattern_w: int
    pattern_h: int

    @property
    def match_radius(self) -> int:
        """Window size of the pattern as it appears in the scene."""

        return window_size(max(1, int(round(max(self.pattern_w, self.pattern_h) * self.scale))))


@dataclass(frozen=True)
class GroundTruth:
    scene_id: str
    width: int
    height: int
    placements: Tuple[Placement, ...] = ()

    def to_dict(self) -> dict:
        return {
            "scene": self.scene_id,
            "width": self.width,
            "height": self.height,
            "placements": [
                {
                    "pattern_id": p.pattern_id,
                    "center": [p.center_x, p.center_y],
                    "scale": p.scale,
                    "rotation": p.rotation,
                    "size": [p.pattern_w, p.pattern_h],
                }
                for p in self.placements
            ],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "GroundTruth":
        try:
            placements = tuple(
                Placement(
                    pattern_id=str(p["pattern_id"]),
                    center_x=float(p["center"][0]),
                    center_y=float(p["center"][1]),
                    scale=float(p["scale"]),
                    rotation=float(p["rotation"]),
                    pattern_w=int(p["size"][0]),
                    pattern_h=int(p["size"][1]),
                )
                for p in document["placements"]
            )
            return cls(str(document["scene"]), int(document["width"]), int(document["height"]),
                       placements)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise exception.SchemaError("malformed ground truth document") from exc

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        except OSError as exc:
            raise exception.OutputWriteError(f"cannot write {path}") from exc
        return path.resolve()


@dataclass(frozen=True)
class SceneSpec:
    """What to plant in a synthetic scene.

    Attributes:
        patterns (Mapping[str, RasterImage]): Product art by pattern id.
        placements (int): Number of recorded placements.
        distractors (Tuple[RasterImage, ...]): Art planted without being
            recorded in the ground truth.
        scale_range (Tuple[float, float]): Within [0.5, 2].
        rotation_range (Tuple[float, float]): Degrees within [-30, 30].
        noise_sigma (float): Gaussian pixel noise.
        illumination (float): Relative amplitude of a linear light ramp.
        color_cast (float): Largest relative deviation of the per channel
            white balance gains drawn for the scene.
        shelf_lines (bool): Draw shelf edges and price labels.
    """

    patterns: Mapping[str, RasterImage]
    placements: int = 1
    width: int = 1024
    height: int = 768
    seed: int = 0
    scene_id: str = "scene"
    distractors: Tuple[RasterImage, ...] = ()
    scale_range: Tuple[float, float] = (0.6, 1.6)
    rotation_range: Tuple[float, float] = (-25.0, 25.0)
    noise_sigma: float = 8.0
    illumination: float = 0.0
    color_cast: float = 0.0
    shelf_lines: bool = True


def _color(rng: np.random.Generator) -> Tuple[int, int, int]:
    return tuple(int(c) for c in rng.integers(0, 256, size=3))


def _box(rng: np.random.Generator, w: int, h: int, min_frac: float, max_frac: float):
    bw = int(rng.uniform(min_frac, max_frac) * w)
    bh = int(rng.uniform(min_frac, max_frac) * h)
    x0 = int(rng.integers(0, max(1, w - bw)))
    y0 = int(rng.integers(0, max(1, h - bh)))
    return [x0, y0, x0 + max(1, bw), y0 + max(1, bh)]


def generate_pattern(rng: np.random.Generator, w: int = 160, h: int = 120) -> RasterImage:
    """Synthetic product art: colour blocks, stripes, ellipses, strokes and text."""

    image = PIL.Image.new("RGB", (w, h), _color(rng))
    draw = PIL.ImageDraw.Draw(image)
    for _ in range(int(rng.integers(4, 8))):
        draw.rectangle(_box(rng, w, h, 0.15, 0.6), fill=_color(rng))
    for _ in range(int(rng.integers(2, 5))):
        draw.ellipse(_box(rng, w, h, 0.1, 0.4), fill=_color(rng), outline=_color(rng))
    stripe_color = _color(rng)
    y = int(rng.integers(0, max(1, h // 4)))
    while y < h:
        draw.line([(0, y), (w, y + int(rng.integers(-h // 8, h // 8 + 1)))],
                  fill=stripe_color, width=int(rng.integers(2, 6)))
        y += int(rng.integers(h // 6 + 2, h // 3 + 3))
    for _ in range(int(rng.integers(3, 7))):
        points = [(int(rng.integers(0, w)), int(rng.integers(0, h))) for _ in range(4)]
        draw.line(points, fill=_color(rng), width=int(rng.integers(1, 4)))
    letters = "".join(rng.choice(list(string.ascii_uppercase), size=6))
    draw.text((int(rng.integers(2, max(3, w // 3))), int(rng.integers(2, max(3, h - 14)))),
              letters, fill=_color(rng))
    return RasterImage(np.asarray(image, dtype=np.uint8).copy())


LOOK_ALIKE_KINDS = ("mosaic", "inverted")


def look_alike(art: RasterImage, kind: str, rng: np.random.Generator, grid: int = 3) -> RasterImage:
    """A distractor sharing local appearance with `art` without being it.

    `mosaic` shuffles a `grid` x `grid` tiling so that no tile keeps its
    place; every tile still matches the product, each voting for its own
    centre. `inverted` mirrors the HSL lightness while keeping hue and
    saturation, so local structure survives but luminance order and
    channel correlation flip.

    Raises:
        InvalidParameterError: For an unknown kind or a pattern too small
            to tile.
    """

    rgb = art.rgb().astype(np.int16)
    if kind == "inverted":
        shift = 255 - rgb.max(axis=2, keepdims=True) - rgb.min(axis=2, keepdims=True)
        return RasterImage((rgb + shift).astype(np.uint8))
    if kind != "mosaic":
        raise exception.InvalidParameterError(f"unknown look-alike kind {kind!r}")
    th, tw = art.height // grid, art.width // grid
    if grid < 2 or th < 1 or tw < 1:
        raise exception.InvalidParameterError(f"cannot tile {art.width}x{art.height} by {grid}")

    cells = grid * grid
    order = rng.permutation(cells)
    while np.any(order == np.arange(cells)):
        order = rng.permutation(cells)
    tiled = rgb.copy()
    for target, source in enumerate(order):
        ty, tx = divmod(target, grid)
        sy, sx = divmod(int(source), grid)
        tiled[ty * th:(ty + 1) * th, tx * tw:(tx + 1) * tw] = \
            rgb[sy * th:(sy + 1) * th, sx * tw:(sx + 1) * tw]
    return RasterImage(tiled.astype(np.uint8))


def _background(rng: np.random.Generator, w: int, h: int, shelf_lines: bool) -> np.ndarray:
    """Multi-octave value noise with optional shelf edges and labels."""

    canvas = np.ones((h, w, 3)) * rng.uniform(90, 170, size=3)
    for cell, amplitude in ((96, 40.0), (24, 20.0), (6, 10.0)):
        grid = rng.normal(0.0, 1.0, size=(h // cell + 2, w // cell + 2, 3))
        gy, gx = np.meshgrid(np.arange(h) / cell, np.arange(w) / cell, indexing="ij")
        for c in range(3):
            canvas[:, :, c] += amplitude * ndimage.map_coordinates(grid[:, :, c], [gy, gx], order=1)
    if not shelf_lines:
        return canvas

    image = PIL.Image.fromarray(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    draw = PIL.ImageDraw.Draw(image)
    shelves = int(rng.integers(2, 5))
    for k in range(1, shelves + 1):
        y = int(k * h / (shelves + 1) + rng.integers(-h // 20, h // 20 + 1))
        draw.rectangle([0, y, w, y + int(rng.integers(4, 12))], fill=_color(rng))
        for _ in range(int(rng.integers(2, 6))):
            x = int(rng.integers(0, max(1, w - 40)))
            draw.rectangle([x, y + 2, x + 36, y + 14], fill=(240, 240, 235), outline=(20, 20, 20))
            draw.text((x + 3, y + 3), f"{int(rng.integers(1, 99))}.99", fill=(10, 10, 10))
    return np.asarray(image, dtype=np.float64)


def _paste(canvas: np.ndarray, pattern: RasterImage, cx: float, cy: float,
           scale: float, rotation: float) -> None:
    """Alpha blend `pattern` mapped by a similarity transform onto `canvas`."""

    h, w = canvas.shape[:2]
    pw, ph = pattern.width, pattern.height
    pcx, pcy = (pw - 1) / 2.0, (ph - 1) / 2.0
    radius = 0.5 * math.hypot(pw, ph) * scale + 2.0
    x0, x1 = max(0, int(math.floor(cx - radius))), min(w, int(math.ceil(cx + radius)) + 1)
    y0, y1 = max(0, int(math.floor(cy - radius))), min(h, int(math.ceil(cy + radius)) + 1)
    if x1 <= x0 or y1 <= y0:
        return

    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    cos_t, sin_t = math.cos(math.radians(rotation)), math.sin(math.radians(rotation))
    dx, dy = xx - cx, yy - cy
    # inverse map of scene pixels into pattern coordinates
    u = (cos_t * dx + sin_t * dy) / scale + pcx
    v = (-sin_t * dx + cos_t * dy) / scale + pcy
    edge = np.minimum.reduce([u + 0.5, pw - 0.5 - u, v + 0.5, ph - 0.5 - v]) * scale
    alpha = np.clip(edge + 0.5, 0.0, 1.0)[:, :, None]

    rgb = pattern.rgb()
    fg = np.stack(
        [ndimage.map_coordinates(rgb[:, :, c], [v, u], order=1, mode="nearest") for c in range(3)],
        axis=-1,
    )
    canvas[y0:y1, x0:x1] = alpha * fg + (1.0 - alpha) * canvas[y0:y1, x0:x1]


def _place(rng, spec: SceneSpec, pattern: RasterImage, taken: List[Tuple[float, float, float]]):
    """Draw a non-overlapping transform, or `None` after too many attempts."""

    for _ in range(PLACEMENT_ATTEMPTS):
        scale = float(rng.uniform(*spec.scale_range))
        rotation = float(rng.uniform(*spec.rotation_range))
        radius = 0.5 * math.hypot(pattern.width, pattern.height) * scale
        if 2 * radius >= min(spec.width, spec.height):
            continue
        cx = float(rng.uniform(radius, spec.width - radius))
        cy = float(rng.uniform(radius, spec.height - radius))
        # centre offset from the pattern centre is a whole pixel
        pcx, pcy = (pattern.width - 1) / 2.0, (pattern.height - 1) / 2.0
        cx, cy = math.floor(cx - pcx) + pcx, math.floor(cy - pcy) + pcy
        if not (radius <= cx <= spec.width - radius and radius <= cy <= spec.height - radius):
            continue
        if all(math.hypot(cx - ox, cy - oy) >= radius + orad for ox, oy, orad in taken):
            taken.append((cx, cy, radius))
            return cx, cy, scale, rotation
    return None


def generate_scene(spec: SceneSpec) -> Tuple[RasterImage, GroundTruth]:
    """Render a synthetic shelf scene.

    Placements cycle through the patterns in id order. The result is
    fully determined by `spec.seed`.

    Raises:
        InvalidParameterError: If the scale or rotation range exceeds its
            limits, or a placement is requested without patterns.
        PlacementOverflowError: If the objects cannot be placed without
            overlapping.
    """

    low, high = spec.scale_range
    if not SCALE_LIMITS[0] <= low <= high <= SCALE_LIMITS[1]:
        raise exception.InvalidParameterError(f"scale_range must lie in {SCALE_LIMITS}")
    low, high = spec.rotation_range
    if not ROTATION_LIMITS[0] <= low <= high <= ROTATION_LIMITS[1]:
        raise exception.InvalidParameterError(f"rotation_range must lie in {ROTATION_LIMITS}")
    if spec.placements > 0 and not spec.patterns:
        raise exception.InvalidParameterError("placements need at least one pattern")
    if not 0.0 <= spec.color_cast < 1.0:
        raise exception.InvalidParameterError("color_cast must lie in [0, 1)")

    rng = np.random.default_rng(spec.seed)
    canvas = _background(rng, spec.width, spec.height, spec.shelf_lines)
    pattern_ids = sorted(spec.patterns)
    taken: List[Tuple[float, float, float]] = []
    placements = []
    planned = [(pattern_ids[k % len(pattern_ids)], spec.patterns[pattern_ids[k % len(pattern_ids)]])
               for k in range(spec.placements)]
    planned += [(None, art) for art in spec.distractors]
    for pattern_id, art in planned:
        transform = _place(rng, spec, art, taken)
        if transform is None:
            raise exception.PlacementOverflowError(
                f"cannot fit {len(planned)} objects into {spec.width}x{spec.height}"
            )
        cx, cy, scale, rotation = transform
        _paste(canvas, art, cx, cy, scale, rotation)
        if pattern_id is not None:
            placements.append(Placement(pattern_id, cx, cy, scale, rotation, art.width, art.height))

    if spec.illumination:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:spec.height, 0:spec.width]
        ramp = (np.cos(angle) * (xx / max(1, spec.width - 1) - 0.5)
                + np.sin(angle) * (yy / max(1, spec.height - 1) - 0.5))
        canvas *= (1.0 + 2.0 * spec.illumination * ramp)[:, :, None]
    if spec.color_cast:
        canvas *= 1.0 + spec.color_cast * rng.uniform(-1.0, 1.0, size=3)
    if spec.noise_sigma > 0:
        canvas += rng.normal(0.0, spec.noise_sigma, size=canvas.shape)

    image = RasterImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return image, GroundTruth(spec.scene_id, spec.width, spec.height, tuple(placements))


@dataclass
class Metrics:
    """Raw detection counts; the rates derive from them.

    Metrics of several scenes add up with `+`.
    """

    placements: int = 0
    matched: int = 0
    processes: int = 0
    processes_with_false: int = 0
    false_positives: int = 0
    localization_error_sum: float = 0.0
    localization_error_max: float = 0.0

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(
            self.placements + other.placements,
            self.matched + other.matched,
            self.processes + other.processes,
            self.processes_with_false + other.processes_with_false,
            self.false_positives + other.false_positives,
            self.localization_error_sum + other.localization_error_sum,
            max(self.localization_error_max, other.localization_error_max),
        )

    @property
    def detection_rate(self) -> Optional[float]:
        return self.matched / self.placements if self.placements else None

    @property
    def false_detection_chance(self) -> float:
        return self.processes_with_false / self.processes if self.processes else 0.0

    @property
    def avg_false_detections(self) -> Optional[float]:
        if not self.processes_with_false:
            return None
        return self.false_positives / self.processes_with_false

    @property
    def mean_localization_error(self) -> Optional[float]:
        return self.localization_error_sum / self.matched if self.matched else None

    def to_dict(self) -> dict:
        counts = {f.name: getattr(self, f.name) for f in fields(self)}
        counts.update(
            detection_rate=self.detection_rate,
            false_detection_chance=self.false_detection_chance,
            avg_false_detections=self.avg_false_detections,
            mean_localization_error=self.mean_localization_error,
        )
        return counts


def score(
    report: DetectionReport,
    truth: GroundTruth,
    match_radius: Optional[float] = None,
) -> Metrics:
    """Match detections to placements one-to-one.

    Occurrences are taken by normalized adjacency descending; each claims
    the nearest free placement of its pattern within the radius (by
    default the placement's window size). Every pattern run is one
    detection process.
    """

    occurrences = sorted(
        report.occurrences,
        key=lambda o: (-o.normalized_adjacency, o.pattern_id,
                       o.envelope.center_x, o.envelope.center_y),
    )
    free = list(range(len(truth.placements)))
    false_by_pattern: Dict[str, int] = {}
    metrics = Metrics(placements=len(truth.placements))
    for occ in occurrences:
        best, best_distance = None, math.inf
        for k in free:
            placement = truth.placements[k]
            if placement.pattern_id != occ.pattern_id:
                continue
            distance = math.hypot(occ.envelope.center_x - placement.center_x,
                                  occ.envelope.center_y - placement.center_y)
            radius = placement.match_radius if match_radius is None else match_radius
            if distance <= radius and distance < best_distance:
                best, best_distance = k, distance
        if best is None:
            false_by_pattern[occ.pattern_id] = false_by_pattern.get(occ.pattern_id, 0) + 1
            continue
        free.remove(best)
        metrics.matched += 1
        metrics.localization_error_sum += best_distance
        metrics.localization_error_max = max(metrics.localization_error_max, best_distance)

    processes = set(report.diagnostics) | {o.pattern_id for o in report.occurrences}
    metrics.processes = len(processes)
    metrics.processes_with_false = len(false_by_pattern)
    metrics.false_positives = sum(false_by_pattern.values())
    return metrics


@dataclass(frozen=True)
class SuiteSpec:
    """A synthetic benchmark.

    Negative suites plant only distractor art, so every detection is a
    false positive. Look-alikes are mosaic and lightness-inverted
    variants of the suite's own patterns.
    """

    name: str
    seed: int = 0
    scenes: int = 10
    width: int = 1024
    height: int = 768
    patterns: int = 4
    placements: Tuple[int, int] = (1, 4)
    distractors: int = 0
    scale_range: Tuple[float, float] = (0.6, 1.6)
    rotation_range: Tuple[float, float] = (-25.0, 25.0)
    noise_sigma: float = 8.0
    illumination: float = 0.0
    color_cast: float = 0.0
    look_alikes: int = 0
    pattern_size: Tuple[int, int] = (160, 120)
    negative: bool = False
    exact_nn: bool = True


def _suite_error(message: str):
    return exception.SuiteSpecError(message)


def validate_suite(document: Mapping[str, Any]) -> SuiteSpec:
    """Build a :class:`SuiteSpec` from a parsed JSON document.

    Raises:
        SuiteSpecError: For unknown keys, wrong types or empty suites.
    """

    if not isinstance(document, Mapping):
        raise _suite_error("suite must be a JSON object")
    known = {f.name for f in fields(SuiteSpec)}
    unknown = set(document) - known
    if unknown:
        raise _suite_error(f"unknown suite keys: {sorted(unknown)}")
    if "name" not in document or not isinstance(document["name"], str):
        raise _suite_error("suite needs a string 'name'")

    values = dict(document)
    try:
        for key in ("placements", "scale_range", "rotation_range", "pattern_size"):
            if key in values:
                if not isinstance(values[key], (list, tuple)) or len(values[key]) != 2:
                    raise _suite_error(f"'{key}' must be a pair")
                values[key] = tuple(values[key])
        for key in ("seed", "scenes", "width", "height", "patterns", "distractors", "look_alikes"):
            if key in values and (isinstance(values[key], bool) or not isinstance(values[key], int)):
                raise _suite_error(f"'{key}' must be an integer")
        for key in ("negative", "exact_nn"):
            if key in values and not isinstance(values[key], bool):
                raise _suite_error(f"'{key}' must be true or false")
        suite = SuiteSpec(**values)
        suite = replace(
            suite,
            scale_range=tuple(float(v) for v in suite.scale_range),
            rotation_range=tuple(float(v) for v in suite.rotation_range),
            placements=tuple(int(v) for v in suite.placements),
            pattern_size=tuple(int(v) for v in suite.pattern_size),
            noise_sigma=float(suite.noise_sigma),
            illumination=float(suite.illumination),
            color_cast=float(suite.color_cast),
        )
    except (TypeError, ValueError) as exc:
        raise _suite_error(f"invalid suite value: {exc}") from exc

    if suite.scenes < 1:
        raise _suite_error("suite must contain at least one scene")
    if suite.patterns < 1 or min(suite.pattern_size) < 16:
        raise _suite_error("suite needs patterns of at least 16x16 pixels")
    low, high = suite.placements
    if not 0 <= low <= high:
        raise _suite_error("placements must be an increasing pair of counts")
    if not suite.negative and high < 1:
        raise _suite_error("a positive suite needs at least one placement per scene")
    if not SCALE_LIMITS[0] <= suite.scale_range[0] <= suite.scale_range[1] <= SCALE_LIMITS[1]:
        raise _suite_error(f"scale_range must lie in {SCALE_LIMITS}")
    if not (ROTATION_LIMITS[0] <= suite.rotation_range[0]
            <= suite.rotation_range[1] <= ROTATION_LIMITS[1]):
        raise _suite_error(f"rotation_range must lie in {ROTATION_LIMITS}")
    if suite.noise_sigma < 0 or suite.distractors < 0 or suite.look_alikes < 0:
        raise _suite_error("noise_sigma, distractors and look_alikes must be non-negative")
    if not 0.0 <= suite.color_cast < 1.0:
        raise _suite_error("color_cast must lie in [0, 1)")
    return suite


def load_suite(path: Union[str, Path]) -> SuiteSpec:
    """Read and validate a suite file before anything runs."""

    try:
        with open(path, "r", encoding="utf-8") as file:
            document = json.load(file)
    except json.JSONDecodeError as exc:
        raise _suite_error(f"{path} is not valid JSON") from exc
    except OSError as exc:
        raise _suite_error(f"cannot read {path}") from exc
    return validate_suite(document)


@dataclass(frozen=True)
class SceneRow:
    scene_id: str
    placements: int
    matched: int
    false_positives: int
    processes: int
    processes_with_false: int
    localization_error: Optional[float]


@dataclass
class SuiteResult:
    suite: SuiteSpec
    rows: List[SceneRow] = field(default_factory=list)
    metrics: Metrics = field(default_factory=Metrics)


def suite_patterns(suite: SuiteSpec) -> Dict[str, RasterImage]:
    rng = np.random.default_rng([suite.seed, 0])
    w, h = suite.pattern_size
    return {f"p{k}": generate_pattern(rng, w, h) for k in range(suite.patterns)}


def suite_scene(suite: SuiteSpec, index: int, patterns: Mapping[str, RasterImage]):
    """The scene spec of one suite scene."""

    rng = np.random.default_rng([suite.seed, 1, index])
    w, h = suite.pattern_size
    low, high = suite.placements
    count = int(rng.integers(low, high + 1))
    distractors = [generate_pattern(rng, w, h)
                   for _ in range(suite.distractors + (count if suite.negative else 0))]
    pattern_ids = sorted(patterns)
    for k in range(suite.look_alikes if pattern_ids else 0):
        art = patterns[pattern_ids[k % len(pattern_ids)]]
        distractors.append(look_alike(art, LOOK_ALIKE_KINDS[k % len(LOOK_ALIKE_KINDS)], rng))
    return SceneSpec(
        patterns={} if suite.negative else patterns,
        placements=0 if suite.negative else count,
        width=suite.width,
        height=suite.height,
        seed=int(rng.integers(0, 2 ** 31 - 1)),
        scene_id=f"{suite.name}-{index:03d}",
        distractors=tuple(distractors),
        scale_range=suite.scale_range,
        rotation_range=suite.rotation_range,
        noise_sigma=suite.noise_sigma,
        illumination=suite.illumination,
        color_cast=suite.color_cast,
    )


def run_suite(suite: SuiteSpec, cfg=None) -> SuiteResult:
    """Generate, detect and score every scene of a suite."""

    cfg = cfg or RunConfig()
    if suite.exact_nn and not cfg.matching.exact_nn:
        cfg = replace(cfg, matching=replace(cfg.matching, exact_nn=True))

    patterns = suite_patterns(suite)
    entries = [PatternEntry.from_image(image, pattern_id, cfg.extractor)
               for pattern_id, image in patterns.items()]
    result = SuiteResult(suite)
    for index in range(suite.scenes):
        spec = suite_scene(suite, index, patterns)
        image, truth = generate_scene(spec)
        scene = SceneContext.from_image(image, spec.scene_id, cfg.extractor)
        report = run_multi_product(scene, entries, cfg)
        metrics = score(report, truth)
        result.metrics = result.metrics + metrics
        result.rows.append(SceneRow(
            scene_id=spec.scene_id,
            placements=metrics.placements,
            matched=metrics.matched,
            false_positives=metrics.false_positives,
            processes=metrics.processes,
            processes_with_false=metrics.processes_with_false,
            localization_error=metrics.mean_localization_error,
        ))
        log.info("%s: %d/%d matched, %d false", spec.scene_id, metrics.matched,
                 metrics.placements, metrics.false_positives)
    return result
