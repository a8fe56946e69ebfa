"""
shelfscan
~~~~~~~~~

Raster primitives: codecs, colour conversion, resampling, blurring,
cropping and normalized cross-correlation.

:license: MIT, see LICENSE for more details.
"""

import io
import math
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import PIL.Image
from scipy import ndimage

from shelfscan.engine import exception
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.interface import Fetcher

log = logging.getLogger("shelfscan.imagecore")

# Rec.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class RasterImage:
    """A row-major raster with one (luminance) or three (RGB) channels.

    Pixel data is held as a numpy array of shape `(height, width)` or
    `(height, width, 3)`. Decoded images are `uint8`; intermediate results
    may be floating point on the same 0-255 scale.

    Attributes:
        data (np.ndarray): The pixel array.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise exception.InvalidParameterError(
                f"unsupported raster shape {data.shape}"
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise exception.InvalidParameterError("raster must be at least 1x1")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> Tuple[int, int]:
        """`(width, height)` of the raster."""

        return (self.width, self.height)

    def to_uint8(self) -> "RasterImage":
        """Round and clip to the 8-bit range."""

        if self.data.dtype == np.uint8:
            return self
        return RasterImage(np.clip(np.rint(self.data), 0, 255).astype(np.uint8))

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def rgb(self) -> np.ndarray:
        """Pixel data as a float `(h, w, 3)` array, replicating gray."""

        data = self.as_float()
        if data.ndim == 2:
            return np.repeat(data[:, :, None], 3, axis=2)
        return data

    def channel(self, index: int) -> "RasterImage":
        """One channel of an RGB raster (the raster itself if gray)."""

        if self.channels == 1:
            return self
        return RasterImage(self.data[:, :, index])


def _like(source: RasterImage, values: np.ndarray) -> RasterImage:
    """Wrap `values`, rounding back to 8 bits if `source` was 8-bit."""

    if source.data.dtype == np.uint8:
        return RasterImage(np.clip(np.rint(values), 0, 255).astype(np.uint8))
    return RasterImage(values)


def load_image(source: Union[str, Path]) -> RasterImage:
    """Decode a PNG or JPEG image from a path or an http(s) URL.

    Args:
        source (str, Path): File path or URL.

    Raises:
        ImageDecodeError: If the file is missing or not a decodable image.
        ImageFetchError: If a remote image cannot be downloaded.

    Returns:
        RasterImage: An 8-bit gray or RGB raster.
    """

    try:
        if Fetcher.is_remote(str(source)):
            handle = io.BytesIO(Fetcher.fetch(str(source)))
        else:
            handle = open(Path(source), "rb")
        with handle:
            with PIL.Image.open(handle) as decoded:
                decoded.load()
                data = _decoded_pixels(decoded)
    except exception.ImageFetchError:
        raise
    except (OSError, ValueError, PIL.Image.DecompressionBombError) as exc:
        raise exception.ImageDecodeError(f"cannot decode {source}") from exc

    log.debug("Loaded %s (%sx%s)", source, data.shape[1], data.shape[0])
    return RasterImage(data)


def _decoded_pixels(image: PIL.Image.Image) -> np.ndarray:
    """Normalize any decoded Pillow mode to 8-bit L or RGB pixels."""

    if image.mode in ("L", "RGB"):
        return np.array(image, dtype=np.uint8)
    if image.mode in ("I", "I;16", "F"):
        array = np.asarray(image, dtype=np.float64)
        peak = array.max() if array.size and array.max() > 255 else 255.0
        return np.clip(np.rint(array * 255.0 / peak), 0, 255).astype(np.uint8)
    if image.mode in ("1", "LA"):
        return np.array(image.convert("L"), dtype=np.uint8)
    return np.array(image.convert("RGB"), dtype=np.uint8)


def save_png(img: RasterImage, path: Union[str, Path]) -> Path:
    """Encode a raster as PNG.

    Args:
        img (RasterImage): The raster; float data is rounded to 8 bits.
        path (str, Path): Destination with a `.png` suffix.

    Raises:
        ImageEncodeError: If the suffix is not `.png` or writing fails.

    Returns:
        Path: The absolute path of the written file.
    """

    path = Path(path)
    if path.suffix.lower() != ".png":
        raise exception.ImageEncodeError(f"only PNG output is supported, got {path.name}")
    try:
        PIL.Image.fromarray(img.to_uint8().data).save(path, format="PNG")
    except OSError as exc:
        raise exception.ImageEncodeError(f"cannot write {path}") from exc
    return path.resolve()


def to_grayscale(img: RasterImage) -> RasterImage:
    """Convert to a single Rec.601 luminance channel.

    Single-channel input is returned as an identical copy.
    """

    if img.channels == 1:
        return RasterImage(img.data.copy())
    luma = img.as_float() @ LUMA_WEIGHTS
    return _like(img, luma)


def rgb_to_hsl(r: float, g: float, b: float) -> Tuple[float, float, float]:
    """Convert 8-bit RGB to HSL with lightness on the 0-255 scale.

    Args:
        r (float): Red, 0-255.
        g (float): Green, 0-255.
        b (float): Blue, 0-255.

    Returns:
        Tuple[float, float, float]: Hue in degrees [0, 360), saturation in
        [0, 1] and lightness in [0, 255]. Achromatic input has hue 0.
    """

    h, s, l = rgb_to_hsl_array(np.array([[r, g, b]], dtype=np.float64))[0]
    return (float(h), float(s), float(l))


def rgb_to_hsl_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rgb_to_hsl` over an `(..., 3)` array."""

    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin
    lightness = 0.5 * (cmax + cmin)

    chromatic = delta > 0
    safe = np.where(chromatic, delta, 1.0)
    denom = 1.0 - np.abs(2.0 * lightness - 1.0)
    saturation = np.where(chromatic & (denom > 0), delta / np.where(denom > 0, denom, 1.0), 0.0)

    hue = np.zeros_like(cmax)
    red_max = chromatic & (cmax == r)
    green_max = chromatic & ~red_max & (cmax == g)
    blue_max = chromatic & ~red_max & ~green_max
    hue = np.where(red_max, ((g - b) / safe) % 6.0, hue)
    hue = np.where(green_max, (b - r) / safe + 2.0, hue)
    hue = np.where(blue_max, (r - g) / safe + 4.0, hue)
    hue = (hue * 60.0) % 360.0

    return np.stack([hue, np.clip(saturation, 0.0, 1.0), lightness * 255.0], axis=-1)


def hsl_to_rgb(h: float, s: float, l: float) -> Tuple[int, int, int]:
    """Inverse of :func:`rgb_to_hsl`, rounded to 8-bit channels."""

    lightness = l / 255.0
    chroma = (1.0 - abs(2.0 * lightness - 1.0)) * s
    hp = (h % 360.0) / 60.0
    x = chroma * (1.0 - abs(hp % 2.0 - 1.0))
    sector = int(hp) % 6
    r1, g1, b1 = (
        (chroma, x, 0.0),
        (x, chroma, 0.0),
        (0.0, chroma, x),
        (0.0, x, chroma),
        (x, 0.0, chroma),
        (chroma, 0.0, x),
    )[sector]
    m = lightness - chroma / 2.0
    return tuple(int(min(255, max(0, round((c + m) * 255.0)))) for c in (r1, g1, b1))


def resize_bilinear(
    img: RasterImage,
    new_w: int,
    new_h: int,
    antialias: bool = False,
) -> RasterImage:
    """Resample with bilinear interpolation.

    Pixel centres are aligned, so a target equal to the source size is an
    exact copy. Aspect ratio is not preserved automatically.

    Args:
        img (RasterImage): Source raster.
        new_w (int): Target width, >= 1.
        new_h (int): Target height, >= 1.
        antialias (bool, optional): Apply a Gaussian prefilter when
            shrinking. Defaults to `False`.

    Raises:
        InvalidParameterError: If a target dimension is below 1.

    Returns:
        RasterImage: The resampled raster.
    """

    if new_w < 1 or new_h < 1:
        raise exception.InvalidParameterError(
            f"target size must be positive, got {new_w}x{new_h}"
        )
    if (new_w, new_h) == img.shape:
        return RasterImage(img.data.copy())

    source = img
    fx = img.width / new_w
    fy = img.height / new_h
    if antialias and (fx > 1.0 or fy > 1.0):
        sigma = 0.5 * math.sqrt(max(fx, fy) ** 2 - 1.0)
        source = gaussian_blur(RasterImage(img.as_float()), sigma)

    ys = (np.arange(new_h) + 0.5) * fy - 0.5
    xs = (np.arange(new_w) + 0.5) * fx - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    data = source.as_float()

    def sample(plane: np.ndarray) -> np.ndarray:
        return ndimage.map_coordinates(plane, [grid_y, grid_x], order=1, mode="nearest")

    if data.ndim == 2:
        out = sample(data)
    else:
        out = np.stack([sample(data[:, :, c]) for c in range(3)], axis=-1)
    return _like(img, out)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3 * sigma)."""

    radius = max(1, int(math.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(img: RasterImage, sigma: float) -> RasterImage:
    """Separable Gaussian blur with edge clamping.

    Raises:
        InvalidParameterError: If `sigma` is not positive.
    """

    if not sigma > 0:
        raise exception.InvalidParameterError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    data = img.as_float()
    for axis in (0, 1):
        data = ndimage.correlate1d(data, kernel, axis=axis, mode="nearest")
    return _like(img, data)


def ncc(a: RasterImage, b: RasterImage) -> float:
    """Normalized cross-correlation mapped from [-1, 1] into [0, 1].

    A constant input carries no correlation and yields 0.5.

    Raises:
        DimensionMismatchError: If the rasters differ in size or are not
            single-channel.
    """

    if a.shape != b.shape or a.channels != 1 or b.channels != 1:
        raise exception.DimensionMismatchError(
            f"ncc needs equal single-channel rasters, got {a.shape}/{a.channels} "
            f"and {b.shape}/{b.channels}"
        )
    va = a.as_float().ravel()
    vb = b.as_float().ravel()
    va = va - va.mean()
    vb = vb - vb.mean()
    norm = math.sqrt(float(va @ va) * float(vb @ vb))
    if norm == 0.0:
        return 0.5
    rho = float(va @ vb) / norm
    return min(1.0, max(0.0, 0.5 * (rho + 1.0)))


def crop_box(img: RasterImage, envelope: Envelope) -> Tuple[int, int, int, int]:
    """Integer pixel box `(x0, y0, x1, y1)` of an envelope clipped to `img`.

    Raises:
        EmptyRegionError: If the envelope centre lies outside the image or
            the clipped box is empty.
    """

    if not (0 <= envelope.center_x < img.width and 0 <= envelope.center_y < img.height):
        raise exception.EmptyRegionError(
            f"envelope centre {envelope.center} is outside {img.width}x{img.height}"
        )
    hx, hy = envelope.half_extents()
    x0 = int(math.floor(envelope.center_x - hx + 0.5))
    y0 = int(math.floor(envelope.center_y - hy + 0.5))
    x1 = x0 + int(round(2.0 * hx))
    y1 = y0 + int(round(2.0 * hy))
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(img.width, x1), min(img.height, y1)
    if x1 <= x0 or y1 <= y0:
        raise exception.EmptyRegionError("envelope does not intersect the image")
    return (x0, y0, x1, y1)


def extract_subimage(img: RasterImage, envelope: Envelope) -> RasterImage:
    """Axis-aligned crop of the envelope's bounding box.

    The envelope rotation widens the box but the crop itself is not
    rotation-rectified.
    """

    x0, y0, x1, y1 = crop_box(img, envelope)
    return RasterImage(img.data[y0:y1, x0:x1].copy())
