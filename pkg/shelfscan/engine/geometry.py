"""
shelfscan
~~~~~~~~~

Rotated rectangles in scene coordinates.

:license: MIT, see LICENSE for more details.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from shelfscan.engine import exception


@dataclass(frozen=True)
class Envelope:
    """Estimated object rectangle in scene coordinates.

    `rotation` is in degrees, measured in image coordinates (y down): the
    pattern's x axis maps onto the direction (cos(rotation), sin(rotation)).

    Attributes:
        center_x (float): Rectangle centre, scene pixels.
        center_y (float): Rectangle centre, scene pixels.
        width (float): Extent along the rotated x axis.
        height (float): Extent along the rotated y axis.
        rotation (float): Degrees.
    """

    center_x: float
    center_y: float
    width: float
    height: float
    rotation: float = 0.0

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise exception.InvalidParameterError(
                f"envelope needs positive size, got {self.width}x{self.height}"
            )

    @property
    def center(self) -> Tuple[float, float]:
        return (self.center_x, self.center_y)

    def scaled(self, factor: float) -> "Envelope":
        """Scale the rectangle about its centre."""

        return Envelope(
            self.center_x,
            self.center_y,
            self.width * factor,
            self.height * factor,
            self.rotation,
        )

    def half_extents(self) -> Tuple[float, float]:
        """Half width and half height of the axis-aligned bounding box."""

        theta = math.radians(self.rotation)
        cos_t, sin_t = abs(math.cos(theta)), abs(math.sin(theta))
        return (
            0.5 * (self.width * cos_t + self.height * sin_t),
            0.5 * (self.width * sin_t + self.height * cos_t),
        )

    def bounding_box(self) -> Tuple[float, float, float, float]:
        """Axis-aligned bounding box as `(x0, y0, x1, y1)`."""

        hx, hy = self.half_extents()
        return (
            self.center_x - hx,
            self.center_y - hy,
            self.center_x + hx,
            self.center_y + hy,
        )

    def contains(self, xs, ys) -> np.ndarray:
        """Test points against the rotated rectangle (boundary inclusive).

        Args:
            xs (array_like): Point x coordinates.
            ys (array_like): Point y coordinates.

        Returns:
            np.ndarray: Boolean mask with the broadcast shape of the input.
        """

        theta = math.radians(self.rotation)
        dx = np.asarray(xs, dtype=np.float64) - self.center_x
        dy = np.asarray(ys, dtype=np.float64) - self.center_y
        # project onto the rectangle's own axes
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        return (np.abs(u) <= 0.5 * self.width) & (np.abs(v) <= 0.5 * self.height)

    def iou(self, other: "Envelope") -> float:
        """Intersection over union of the two axis-aligned bounding boxes."""

        ax0, ay0, ax1, ay1 = self.bounding_box()
        bx0, by0, bx1, by1 = other.bounding_box()
        iw = min(ax1, bx1) - max(ax0, bx0)
        ih = min(ay1, by1) - max(ay0, by0)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
        return inter / union if union > 0 else 0.0
