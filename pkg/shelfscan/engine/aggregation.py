"""
shelfscan
~~~~~~~~~

Two-pass vote aggregation around a proposition.

:license: MIT, see LICENSE for more details.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
from scipy import ndimage

from shelfscan.engine import exception
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.matching import Vote, wrap_degrees
from shelfscan.engine.votespace import Proposition, VoteSpace

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def window_size(p_size: int) -> int:
    """Aggregation window for a pattern whose larger dimension is `p_size`."""

    if p_size < 1:
        raise exception.InvalidParameterError(f"pattern size must be >= 1, got {p_size}")
    return (int(p_size) // 100 + 1) * 2 + 1


def _unit_sum(angles_deg) -> Tuple[float, float, int]:
    radians = np.radians(np.asarray(angles_deg, dtype=np.float64))
    return float(np.cos(radians).sum()), float(np.sin(radians).sum()), int(radians.size)


def resultant_length(angles_deg) -> float:
    """Length of the mean unit vector, 0 for no angles."""

    c, s, n = _unit_sum(angles_deg)
    return math.hypot(c, s) / n if n else 0.0


def circular_mean(angles_deg) -> float:
    """Direction of the summed unit vectors, degrees in [-180, 180).

    Returns 0 when the vectors cancel out.
    """

    c, s, n = _unit_sum(angles_deg)
    if n == 0 or math.hypot(c, s) < 1e-12:
        return 0.0
    return wrap_degrees(math.degrees(math.atan2(s, c)))


def circular_variance(angles_deg) -> float:
    """Variance of the angles as unit vectors: `1 - R**2`."""

    return 1.0 - resultant_length(angles_deg) ** 2


def unique_filter(votes: Iterable[Vote]) -> List[Vote]:
    """Keep the strongest vote per pattern feature.

    Equal adjacency goes to the lower scene index. The result is ordered
    by `pattern_idx`.
    """

    best = {}
    for vote in votes:
        current = best.get(vote.pattern_idx)
        if (current is None
                or vote.adjacency > current.adjacency
                or (vote.adjacency == current.adjacency and vote.scene_idx < current.scene_idx)):
            best[vote.pattern_idx] = vote
    return [best[key] for key in sorted(best)]


@dataclass(frozen=True)
class VoteGroup:
    """Votes gathered for one proposition, unique per pattern feature."""

    votes: Tuple[Vote, ...]
    proposition: Proposition

    def __post_init__(self) -> None:
        object.__setattr__(self, "votes", tuple(self.votes))

    def __len__(self) -> int:
        return len(self.votes)

    @property
    def quotients(self) -> np.ndarray:
        return np.array([v.scale_quotient for v in self.votes], dtype=np.float64)

    @property
    def rotations(self) -> np.ndarray:
        return np.array([v.rotation_delta for v in self.votes], dtype=np.float64)

    @property
    def adjacency_sum(self) -> float:
        return math.fsum(v.adjacency for v in self.votes)

    @property
    def mean_scale_quotient(self) -> float:
        return float(self.quotients.mean()) if self.votes else 0.0

    @property
    def circular_mean_rotation(self) -> float:
        return circular_mean(self.rotations)

    @property
    def scale_variance(self) -> float:
        return float(self.quotients.var()) if self.votes else 0.0

    @property
    def rotation_variance(self) -> float:
        return circular_variance(self.rotations) if self.votes else 0.0


def aggregate_pass1(vs: VoteSpace, prop: Proposition, w: int) -> VoteGroup:
    """Unique votes of the `w` x `w` window centred on the proposition."""

    half = w // 2
    votes = vs.votes_in_box(prop.x - half, prop.y - half, prop.x + half + 1, prop.y + half + 1)
    return VoteGroup(tuple(unique_filter(votes)), prop)


def estimate_envelope(group: VoteGroup, pattern_w: int, pattern_h: int) -> Envelope:
    """Object rectangle implied by a vote group.

    Raises:
        EmptyGroupError: If the group holds no votes.
    """

    if not group.votes:
        raise exception.EmptyGroupError("cannot estimate the envelope of an empty group")
    weights = np.array([v.adjacency for v in group.votes], dtype=np.float64)
    xs = np.array([v.scene_x for v in group.votes], dtype=np.float64)
    ys = np.array([v.scene_y for v in group.votes], dtype=np.float64)
    quotient = group.mean_scale_quotient
    return Envelope(
        center_x=float(np.average(xs, weights=weights)),
        center_y=float(np.average(ys, weights=weights)),
        width=pattern_w * quotient,
        height=pattern_h * quotient,
        rotation=group.circular_mean_rotation,
    )


def flood_fill(seed: Tuple[int, int], passable: np.ndarray) -> np.ndarray:
    """8-connected component of `passable` containing `seed`.

    Args:
        seed (Tuple[int, int]): `(x, y)` start pixel, always visited.
        passable (np.ndarray): `(height, width)` boolean mask.

    Returns:
        np.ndarray: Boolean mask of the visited pixels.
    """

    x, y = seed
    mask = np.array(passable, dtype=bool)
    mask[y, x] = True
    labels, _ = ndimage.label(mask, structure=EIGHT_CONNECTED)
    return labels == labels[y, x]


def aggregate_pass2(
    vs: VoteSpace,
    prop: Proposition,
    envelope: Envelope,
    w: int,
    shrink: float = 0.8,
) -> VoteGroup:
    """Flood-fill aggregation constrained by a shrunken envelope.

    Starting at the proposition, the fill spreads over pixels that lie
    inside `envelope` scaled by `shrink` and whose `w` x `w` window holds a
    vote. The votes of every visited pixel's window are collected.
    """

    if not 0 < shrink <= 1:
        raise exception.InvalidParameterError(f"shrink must be in (0, 1], got {shrink}")
    occupied = ndimage.maximum_filter(vs.counts > 0, size=w, mode="constant", cval=0)

    shrunk = envelope.scaled(shrink)
    x0, y0, x1, y1 = shrunk.bounding_box()
    ix0, iy0 = max(0, int(math.floor(x0)) - 1), max(0, int(math.floor(y0)) - 1)
    ix1, iy1 = min(vs.width, int(math.ceil(x1)) + 1), min(vs.height, int(math.ceil(y1)) + 1)
    inside = np.zeros_like(occupied)
    if ix1 > ix0 and iy1 > iy0:
        yy, xx = np.mgrid[iy0:iy1, ix0:ix1]
        # a bucket pixel covers [x, x + 1), judged at its centre
        inside[iy0:iy1, ix0:ix1] = shrunk.contains(xx + 0.5, yy + 0.5)

    visited = flood_fill((prop.x, prop.y), occupied & inside)
    collect = ndimage.binary_dilation(visited, structure=np.ones((w, w), dtype=bool))
    return VoteGroup(tuple(unique_filter(vs.votes_in_mask(collect))), prop)
