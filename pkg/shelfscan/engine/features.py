"""
shelfscan
~~~~~~~~~

Scale- and rotation-aware feature points: a built-in difference-of-Gaussians
extractor and the JSON feature file used to exchange features with external
extractors.

:license: MIT, see LICENSE for more details.
"""

import json
import math
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from shelfscan.engine import exception
from shelfscan.engine.imagecore import (
    LUMA_WEIGHTS,
    RasterImage,
    rgb_to_hsl,
    to_grayscale,
)

log = logging.getLogger("shelfscan.features")

DESCRIPTOR_GRID = 4
DESCRIPTOR_BINS = 8
ORIENTATION_BINS = 36


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class ColorSample:
    """RGB colour with its HSL and luminance readings.

    Lightness `l` is on the 0-255 scale; `luminance` is the rounded
    Rec.601 luma of `r, g, b`.
    """

    r: int
    g: int
    b: int
    h: float
    s: float
    l: float
    luminance: int

    @classmethod
    def from_rgb(cls, r: int, g: int, b: int) -> "ColorSample":
        r, g, b = int(r), int(g), int(b)
        h, s, l = rgb_to_hsl(r, g, b)
        luminance = _round_half_up(float(np.dot(LUMA_WEIGHTS, (r, g, b))))
        return cls(r, g, b, h, s, l, luminance)

    @property
    def rgb_spread(self) -> int:
        """The biggest difference between two RGB channels."""

        return max(abs(self.r - self.g), abs(self.r - self.b), abs(self.g - self.b))


@dataclass(frozen=True)
class FeaturePoint:
    """One local feature.

    Attributes:
        x (float): Column, pixel-centre convention (pixel j has x = j).
        y (float): Row.
        scale (float): Characteristic radius in pixels, > 0.
        orientation (float): Dominant gradient direction, degrees [0, 360),
            measured as atan2(dy, dx) in image coordinates.
        descriptor (Tuple[float, ...]): Non-negative descriptor vector.
        color (ColorSample): Mean colour around the point.
        luminance (int): Mean luminance around the point.
    """

    x: float
    y: float
    scale: float
    orientation: float
    descriptor: Tuple[float, ...]
    color: ColorSample
    luminance: int


@dataclass(frozen=True)
class FeatureSet:
    """An ordered, immutable collection of feature points of one image.

    Raises:
        DescriptorLengthError: If a descriptor length differs from
            `descriptor_len`.
        PointOutOfBoundsError: If a point lies outside the image.
    """

    source_id: str
    image_w: int
    image_h: int
    descriptor_len: int
    points: Tuple[FeaturePoint, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if self.descriptor_len < 1:
            raise exception.DescriptorLengthError("descriptor_len must be positive")
        for index, point in enumerate(self.points):
            if len(point.descriptor) != self.descriptor_len:
                raise exception.DescriptorLengthError(
                    f"point {index} has a descriptor of length "
                    f"{len(point.descriptor)}, expected {self.descriptor_len}"
                )
            if not (0 <= point.x < self.image_w and 0 <= point.y < self.image_h):
                raise exception.PointOutOfBoundsError(
                    f"point {index} at ({point.x}, {point.y}) is outside "
                    f"{self.image_w}x{self.image_h}"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def center(self) -> Tuple[float, float]:
        """Image centre in pixel-centre coordinates."""

        return ((self.image_w - 1) / 2.0, (self.image_h - 1) / 2.0)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64).reshape(-1, 2)

    @cached_property
    def scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.points], dtype=np.float64)

    @cached_property
    def orientations(self) -> np.ndarray:
        return np.array([p.orientation for p in self.points], dtype=np.float64)

    @cached_property
    def descriptors(self) -> np.ndarray:
        return np.array(
            [p.descriptor for p in self.points], dtype=np.float64
        ).reshape(-1, self.descriptor_len)

    @cached_property
    def luminances(self) -> np.ndarray:
        return np.array([p.luminance for p in self.points], dtype=np.int64)

    @cached_property
    def hsl(self) -> np.ndarray:
        return np.array(
            [(p.color.h, p.color.s, p.color.l) for p in self.points], dtype=np.float64
        ).reshape(-1, 3)

    @cached_property
    def rgb_spread(self) -> np.ndarray:
        return np.array([p.color.rgb_spread for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class ExtractorConfig:
    """Parameters of the built-in difference-of-Gaussians extractor.

    Attributes:
        octaves (int): Number of octaves in the scale space.
        scales_per_octave (int): Sampled scales per octave.
        contrast_threshold (float): Minimum interpolated DoG response.
        edge_threshold (float): Principal curvature ratio limit.
        sigma (float): Blur of the first level of each octave.
        border (int): Pixels ignored along the image border.
        max_features (int, optional): Keep only the strongest responses.
    """

    octaves: int = 4
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_threshold: float = 10.0
    sigma: float = 1.6
    border: int = 5
    max_features: Optional[int] = None

    def __post_init__(self) -> None:
        if self.octaves < 1 or self.scales_per_octave < 1:
            raise exception.InvalidValueError("octaves and scales_per_octave must be >= 1")
        if self.contrast_threshold <= 0 or self.edge_threshold <= 1 or self.sigma <= 0:
            raise exception.InvalidValueError(
                "contrast_threshold and sigma must be positive, edge_threshold > 1"
            )
        if self.border < 1:
            raise exception.InvalidValueError("border must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise exception.InvalidValueError("max_features must be positive")


def sample_point_appearance(
    img: RasterImage,
    x: float,
    y: float,
) -> Tuple[ColorSample, int]:
    """Mean colour and luminance of the 3x3 neighbourhood of a point.

    The neighbourhood is centred on the nearest pixel and clipped at the
    image border.

    Raises:
        PointOutOfBoundsError: If the point lies outside the image.

    Returns:
        Tuple[ColorSample, int]: The rounded mean colour and the rounded
        luminance of the unrounded mean.
    """

    if not (0 <= x < img.width and 0 <= y < img.height):
        raise exception.PointOutOfBoundsError(
            f"({x}, {y}) is outside {img.width}x{img.height}"
        )
    ix = min(img.width - 1, _round_half_up(x))
    iy = min(img.height - 1, _round_half_up(y))
    patch = img.data[max(0, iy - 1):iy + 2, max(0, ix - 1):ix + 2].astype(np.float64)
    if patch.ndim == 2:
        mean = np.repeat(patch.mean(), 3)
    else:
        mean = patch.reshape(-1, 3).mean(axis=0)
    color = ColorSample.from_rgb(*(_round_half_up(c) for c in mean))
    return color, _round_half_up(float(mean @ LUMA_WEIGHTS))


class _Octave:
    """Gaussian levels, their differences and cached gradients of one octave."""

    def __init__(self, index: int, gaussians: List[np.ndarray]) -> None:
        self.index = index
        self.gaussians = gaussians
        self.dog = np.stack([b - a for a, b in zip(gaussians[:-1], gaussians[1:])])
        self._gradients: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def factor(self) -> float:
        return float(2 ** self.index)

    def gradient(self, layer: int) -> Tuple[np.ndarray, np.ndarray]:
        """Gradient magnitude and direction (degrees) of a Gaussian level."""

        if layer not in self._gradients:
            level = self.gaussians[layer]
            dx = np.zeros_like(level)
            dy = np.zeros_like(level)
            dx[:, 1:-1] = level[:, 2:] - level[:, :-2]
            dy[1:-1, :] = level[2:, :] - level[:-2, :]
            self._gradients[layer] = (
                np.hypot(dx, dy),
                np.degrees(np.arctan2(dy, dx)) % 360.0,
            )
        return self._gradients[layer]


def _build_octaves(gray: np.ndarray, cfg: ExtractorConfig) -> List[_Octave]:
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)
    increments = []
    for i in range(1, s + 3):
        previous = cfg.sigma * k ** (i - 1)
        increments.append(math.sqrt((previous * k) ** 2 - previous ** 2))

    # the input is assumed to carry a blur of half a pixel
    base = ndimage.gaussian_filter(
        gray, math.sqrt(max(cfg.sigma ** 2 - 0.25, 0.01)), mode="nearest"
    )
    octaves: List[_Octave] = []
    for index in range(cfg.octaves):
        if min(base.shape) < 2 * cfg.border + 3:
            break
        gaussians = [base]
        for increment in increments:
            gaussians.append(ndimage.gaussian_filter(gaussians[-1], increment, mode="nearest"))
        octaves.append(_Octave(index, gaussians))
        base = gaussians[s][::2, ::2]
    return octaves


def _refine(dog: np.ndarray, layer: int, y: int, x: int, cfg: ExtractorConfig):
    """Interpolate an extremum in (x, y, scale) and apply the stability tests.

    Returns `None` for rejected candidates, otherwise
    `(layer, y, x, offset, contrast)` at the converged sample.
    """

    n_layers, h, w = dog.shape
    border = cfg.border
    for _ in range(5):
        below, here, above = dog[layer - 1], dog[layer], dog[layer + 1]
        value = here[y, x]
        grad = np.array([
            0.5 * (here[y, x + 1] - here[y, x - 1]),
            0.5 * (here[y + 1, x] - here[y - 1, x]),
            0.5 * (above[y, x] - below[y, x]),
        ])
        dxx = here[y, x + 1] + here[y, x - 1] - 2.0 * value
        dyy = here[y + 1, x] + here[y - 1, x] - 2.0 * value
        dss = above[y, x] + below[y, x] - 2.0 * value
        dxy = 0.25 * (here[y + 1, x + 1] - here[y + 1, x - 1]
                      - here[y - 1, x + 1] + here[y - 1, x - 1])
        dxs = 0.25 * (above[y, x + 1] - above[y, x - 1]
                      - below[y, x + 1] + below[y, x - 1])
        dys = 0.25 * (above[y + 1, x] - above[y - 1, x]
                      - below[y + 1, x] + below[y - 1, x])
        hessian = np.array([
            [dxx, dxy, dxs],
            [dxy, dyy, dys],
            [dxs, dys, dss],
        ])
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(offset)):
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        if np.any(np.abs(offset) > float(max(h, w))):
            return None
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        layer += int(round(offset[2]))
        if (layer < 1 or layer > n_layers - 2
                or x < border or x >= w - border
                or y < border or y >= h - border):
            return None
    else:
        return None

    contrast = float(value + 0.5 * grad @ offset)
    if abs(contrast) * cfg.scales_per_octave < cfg.contrast_threshold:
        return None
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    ratio = cfg.edge_threshold
    if det <= 0 or trace * trace * ratio >= (ratio + 1.0) ** 2 * det:
        return None
    return layer, y, x, offset, contrast


def _orientations(octave: _Octave, layer: int, x: int, y: int, scale: float) -> List[float]:
    """Dominant gradient directions around a keypoint, in degrees."""

    magnitude, direction = octave.gradient(layer)
    h, w = magnitude.shape
    sigma_w = 1.5 * scale
    radius = int(round(3.0 * sigma_w))
    x0, x1 = max(1, x - radius), min(w - 2, x + radius)
    y0, y1 = max(1, y - radius), min(h - 2, y + radius)
    if x1 < x0 or y1 < y0:
        return []

    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    weight = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * sigma_w ** 2))
    bins = np.rint(direction[y0:y1 + 1, x0:x1 + 1] * ORIENTATION_BINS / 360.0).astype(int)
    hist = np.bincount(
        (bins % ORIENTATION_BINS).ravel(),
        weights=(weight * magnitude[y0:y1 + 1, x0:x1 + 1]).ravel(),
        minlength=ORIENTATION_BINS,
    )
    smooth = (
        6.0 * hist
        + 4.0 * (np.roll(hist, 1) + np.roll(hist, -1))
        + np.roll(hist, 2) + np.roll(hist, -2)
    ) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []

    left, right = np.roll(smooth, 1), np.roll(smooth, -1)
    angles = []
    for k in np.nonzero((smooth > left) & (smooth > right) & (smooth >= 0.8 * peak))[0]:
        shift = 0.5 * (left[k] - right[k]) / (left[k] - 2.0 * smooth[k] + right[k])
        angle = ((k + shift) * 360.0 / ORIENTATION_BINS) % 360.0
        angles.append(angle - 360.0 if angle >= 360.0 else angle)
    return angles


def _descriptor(
    octave: _Octave,
    layer: int,
    xf: float,
    yf: float,
    scale: float,
    angle: float,
) -> Optional[np.ndarray]:
    """4x4 grid of 8-bin gradient histograms in the keypoint frame."""

    magnitude, direction = octave.gradient(layer)
    h, w = magnitude.shape
    d, n = DESCRIPTOR_GRID, DESCRIPTOR_BINS
    hist_width = 3.0 * scale
    radius = int(round(hist_width * math.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    xi, yi = int(round(xf)), int(round(yf))

    theta = math.radians(angle)
    cos_t = math.cos(theta) / hist_width
    sin_t = math.sin(theta) / hist_width
    offsets = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(offsets, offsets, indexing="ij")
    # sample offsets expressed in histogram cells of the keypoint frame
    c_rot = ox * cos_t + oy * sin_t
    r_rot = -ox * sin_t + oy * cos_t
    rbin = r_rot + d / 2.0 - 0.5
    cbin = c_rot + d / 2.0 - 0.5
    py, px = yi + oy, xi + ox
    valid = (
        (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
        & (py >= 1) & (py < h - 1) & (px >= 1) & (px < w - 1)
    )
    if not valid.any():
        return None

    rbin, cbin = rbin[valid], cbin[valid]
    weight = np.exp(-(c_rot[valid] ** 2 + r_rot[valid] ** 2) / (0.5 * d * d))
    values = magnitude[py[valid], px[valid]] * weight
    obin = ((direction[py[valid], px[valid]] - angle) % 360.0) * n / 360.0

    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, n))
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            for do, wo in ((0, 1.0 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % n),
                    values * wr * wc * wo,
                )

    vector = hist[1:d + 1, 1:d + 1, :].ravel()
    norm = np.linalg.norm(vector)
    if norm <= 0:
        return None
    vector = np.minimum(vector / norm, 0.2)
    norm = np.linalg.norm(vector)
    if norm <= 0:
        return None
    return vector / norm


def extract_features(
    img: RasterImage,
    cfg: Optional[ExtractorConfig] = None,
    source_id: str = "",
) -> FeatureSet:
    """Detect and describe difference-of-Gaussians keypoints.

    Scale-space extrema are refined to subpixel accuracy, filtered for
    contrast and edge response, given one feature per dominant gradient
    orientation and described with a 128-D L2-normalized gradient
    histogram. Every point is annotated with its neighbourhood appearance.

    Args:
        img (RasterImage): Gray or RGB raster.
        cfg (ExtractorConfig, optional): Extractor parameters.
        source_id (str, optional): Identifier stored in the feature set.

    Returns:
        FeatureSet: Possibly empty, deterministic for identical input.
    """

    cfg = cfg or ExtractorConfig()
    gray = to_grayscale(img).as_float() / 255.0
    raw = []
    for octave in _build_octaves(gray, cfg):
        dog = octave.dog
        threshold = 0.5 * cfg.contrast_threshold / cfg.scales_per_octave
        maxima = ndimage.maximum_filter(dog, size=3, mode="nearest")
        minima = ndimage.minimum_filter(dog, size=3, mode="nearest")
        mask = ((dog == maxima) & (dog > threshold)) | ((dog == minima) & (dog < -threshold))
        mask[0] = mask[-1] = False
        b = cfg.border
        mask[:, :b, :] = mask[:, -b:, :] = False
        mask[:, :, :b] = mask[:, :, -b:] = False

        seen = set()
        for layer, y, x in zip(*np.nonzero(mask)):
            refined = _refine(dog, int(layer), int(y), int(x), cfg)
            if refined is None:
                continue
            layer_i, yi, xi, offset, contrast = refined
            if (layer_i, yi, xi) in seen:
                continue
            seen.add((layer_i, yi, xi))

            xf, yf = xi + float(offset[0]), yi + float(offset[1])
            scale = cfg.sigma * 2.0 ** ((layer_i + float(offset[2])) / cfg.scales_per_octave)
            x_full, y_full = xf * octave.factor, yf * octave.factor
            if not (0 <= x_full < img.width and 0 <= y_full < img.height):
                continue
            for angle in _orientations(octave, layer_i, xi, yi, scale):
                descriptor = _descriptor(octave, layer_i, xf, yf, scale, angle)
                if descriptor is None:
                    continue
                raw.append((abs(contrast), x_full, y_full, scale * octave.factor, angle, descriptor))

    if cfg.max_features is not None and len(raw) > cfg.max_features:
        strongest = sorted(range(len(raw)), key=lambda i: -raw[i][0])[:cfg.max_features]
        raw = [raw[i] for i in sorted(strongest)]

    points = []
    for _, x, y, scale, angle, descriptor in raw:
        color, luminance = sample_point_appearance(img, x, y)
        points.append(FeaturePoint(
            x=float(x),
            y=float(y),
            scale=float(scale),
            orientation=float(angle),
            descriptor=tuple(float(v) for v in descriptor),
            color=color,
            luminance=luminance,
        ))
    log.debug("Extracted %d features from %s (%sx%s)", len(points), source_id or "image",
              img.width, img.height)
    return FeatureSet(
        source_id=source_id,
        image_w=img.width,
        image_h=img.height,
        descriptor_len=DESCRIPTOR_GRID * DESCRIPTOR_GRID * DESCRIPTOR_BINS,
        points=tuple(points),
    )


def write_features(fs: FeatureSet, path: Union[str, Path]) -> Path:
    """Write a feature set to the JSON feature file.

    Raises:
        OutputWriteError: If the file cannot be written.

    Returns:
        Path: The absolute path of the written file.
    """

    document = {
        "source_id": fs.source_id,
        "width": fs.image_w,
        "height": fs.image_h,
        "descriptor_len": fs.descriptor_len,
        "points": [
            {
                "x": p.x,
                "y": p.y,
                "scale": p.scale,
                "orientation": p.orientation,
                "descriptor": list(p.descriptor),
                "rgb": [p.color.r, p.color.g, p.color.b],
                "luminance": p.luminance,
            }
            for p in fs.points
        ],
    }
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as file:
            # json serializes floats with repr, which round-trips exactly
            json.dump(document, file)
    except OSError as exc:
        raise exception.OutputWriteError(f"cannot write {path}") from exc
    return path.resolve()


def _expect(document: dict, key: str, kinds, where: str):
    if key not in document:
        raise exception.SchemaError(f"{where}: missing key '{key}'")
    value = document[key]
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise exception.SchemaError(f"{where}: '{key}' has the wrong type")
    return value


def read_features(path: Union[str, Path]) -> FeatureSet:
    """Parse a JSON feature file.

    Raises:
        FeatureFileError: If the file cannot be read.
        SchemaError: If the document does not follow the schema.
        DescriptorLengthError: If a descriptor has the wrong length; the
            message names the offending point index.
        PointOutOfBoundsError: If a point lies outside the image.

    Returns:
        FeatureSet: The parsed feature set.
    """

    try:
        with open(Path(path), "r", encoding="utf-8") as file:
            document = json.load(file)
    except json.JSONDecodeError as exc:
        raise exception.SchemaError(f"{path} is not valid JSON") from exc
    except OSError as exc:
        raise exception.FeatureFileError(f"cannot read {path}") from exc
    if not isinstance(document, dict):
        raise exception.SchemaError("feature file must hold a JSON object")

    number = (int, float)
    source_id = _expect(document, "source_id", str, "header")
    width = _expect(document, "width", int, "header")
    height = _expect(document, "height", int, "header")
    descriptor_len = _expect(document, "descriptor_len", int, "header")
    entries = _expect(document, "points", list, "header")
    if width < 1 or height < 1 or descriptor_len < 1:
        raise exception.SchemaError("width, height and descriptor_len must be positive")

    points = []
    for index, entry in enumerate(entries):
        where = f"point {index}"
        if not isinstance(entry, dict):
            raise exception.SchemaError(f"{where}: must be an object")
        values = {key: _expect(entry, key, number, where)
                  for key in ("x", "y", "scale", "orientation")}
        descriptor = _expect(entry, "descriptor", list, where)
        rgb = _expect(entry, "rgb", list, where)
        luminance = _expect(entry, "luminance", int, where)
        if len(descriptor) != descriptor_len:
            raise exception.DescriptorLengthError(
                f"{where}: descriptor has length {len(descriptor)}, expected {descriptor_len}"
            )
        if not all(isinstance(v, number) and not isinstance(v, bool) and v >= 0
                   for v in descriptor):
            raise exception.SchemaError(f"{where}: descriptor must hold non-negative numbers")
        if (len(rgb) != 3
                or not all(isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= 255
                           for v in rgb)):
            raise exception.SchemaError(f"{where}: rgb must be three integers in 0-255")
        if not 0 <= luminance <= 255:
            raise exception.SchemaError(f"{where}: luminance must be in 0-255")
        if values["scale"] <= 0 or not 0 <= values["orientation"] < 360:
            raise exception.SchemaError(f"{where}: scale must be positive and orientation in [0, 360)")
        if not (0 <= values["x"] < width and 0 <= values["y"] < height):
            raise exception.PointOutOfBoundsError(
                f"{where}: ({values['x']}, {values['y']}) is outside {width}x{height}"
            )
        points.append(FeaturePoint(
            x=float(values["x"]),
            y=float(values["y"]),
            scale=float(values["scale"]),
            orientation=float(values["orientation"]),
            descriptor=tuple(float(v) for v in descriptor),
            color=ColorSample.from_rgb(*rgb),
            luminance=luminance,
        ))

    return FeatureSet(
        source_id=source_id,
        image_w=width,
        image_h=height,
        descriptor_len=descriptor_len,
        points=tuple(points),
    )
