"""
shelfscan
~~~~~~~~~

Per-pixel vote buckets, the adjacency-sum vote image and proposition
detection.

:license: MIT, see LICENSE for more details.
"""

import logging
from typing import Dict, Iterable, List, NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from shelfscan.engine import exception
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage, gaussian_blur
from shelfscan.engine.matching import Vote

log = logging.getLogger("shelfscan.votespace")


class Proposition(NamedTuple):
    x: int
    y: int
    window_adjacency_sum: float


class VoteSpace:
    """Votes bucketed by the scene pixel they fall on.

    `vote_image[y, x]` always equals the adjacency sum of the live votes in
    bucket `(x, y)`. Erased votes keep their index but leave their bucket.

    Attributes:
        width (int): Scene width.
        height (int): Scene height.
        votes (List[Vote]): Every vote ever added, indexed by insertion.
        buckets (Dict[Tuple[int, int], List[int]]): Live vote indices per
            `(x, y)` pixel.
        vote_image (np.ndarray): `(height, width)` adjacency sums.
        counts (np.ndarray): `(height, width)` live vote counts.
    """

    def __init__(self, width: int, height: int) -> None:
        if width < 1 or height < 1:
            raise exception.InvalidParameterError(
                f"vote space needs positive size, got {width}x{height}"
            )
        self.width = width
        self.height = height
        self.votes: List[Vote] = []
        self.buckets: Dict[Tuple[int, int], List[int]] = {}
        self.vote_image = np.zeros((height, width), dtype=np.float64)
        self.counts = np.zeros((height, width), dtype=np.int64)
        self._alive = np.zeros(0, dtype=bool)
        self._positions = np.zeros((0, 2), dtype=np.float64)

    def __len__(self) -> int:
        return int(self._alive.sum())

    @property
    def total_mass(self) -> float:
        return float(self.vote_image.sum())

    def add(self, votes: Iterable[Vote]) -> None:
        """Bucket `votes`; nothing is added if any of them is out of bounds.

        Raises:
            VoteOutOfBoundsError: Naming the index of the first bad vote.
        """

        votes = list(votes)
        for index, vote in enumerate(votes):
            if not (0 <= vote.scene_x < self.width and 0 <= vote.scene_y < self.height):
                raise exception.VoteOutOfBoundsError(
                    f"vote {index} at ({vote.scene_x}, {vote.scene_y}) is outside "
                    f"{self.width}x{self.height}"
                )
        if not votes:
            return

        first = len(self.votes)
        positions = np.array([(v.scene_x, v.scene_y) for v in votes], dtype=np.float64)
        xs = np.floor(positions[:, 0]).astype(np.int64)
        ys = np.floor(positions[:, 1]).astype(np.int64)
        weights = np.array([v.adjacency for v in votes], dtype=np.float64)
        for offset, (x, y) in enumerate(zip(xs.tolist(), ys.tolist())):
            self.buckets.setdefault((x, y), []).append(first + offset)
        np.add.at(self.vote_image, (ys, xs), weights)
        np.add.at(self.counts, (ys, xs), 1)

        self.votes.extend(votes)
        self._alive = np.concatenate([self._alive, np.ones(len(votes), dtype=bool)])
        self._positions = np.concatenate([self._positions, positions])

    def live_indices(self) -> np.ndarray:
        return np.nonzero(self._alive)[0]

    def votes_at(self, x: int, y: int) -> List[Vote]:
        return [self.votes[i] for i in self.buckets.get((x, y), [])]

    def votes_in_box(self, x0: int, y0: int, x1: int, y1: int) -> List[Vote]:
        """Live votes whose bucket lies in `[x0, x1) x [y0, y1)`, clipped."""

        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(self.width, x1), min(self.height, y1)
        if x1 <= x0 or y1 <= y0:
            return []
        rows, cols = np.nonzero(self.counts[y0:y1, x0:x1])
        found = []
        for y, x in zip((rows + y0).tolist(), (cols + x0).tolist()):
            found.extend(self.votes[i] for i in self.buckets[(x, y)])
        return found

    def votes_in_mask(self, mask: np.ndarray) -> List[Vote]:
        """Live votes whose bucket is set in a `(height, width)` mask."""

        rows, cols = np.nonzero(mask & (self.counts > 0))
        found = []
        for y, x in zip(rows.tolist(), cols.tolist()):
            found.extend(self.votes[i] for i in self.buckets[(x, y)])
        return found

    def erase(self, envelope: Envelope) -> int:
        """Remove the live votes positioned inside `envelope`.

        Returns:
            int: The number of removed votes.
        """

        live = self.live_indices()
        if len(live) == 0:
            return 0
        inside = envelope.contains(self._positions[live, 0], self._positions[live, 1])
        removed = live[inside]
        if len(removed) == 0:
            return 0

        self._alive[removed] = False
        touched = set()
        for index in removed.tolist():
            vote = self.votes[index]
            key = (int(np.floor(vote.scene_x)), int(np.floor(vote.scene_y)))
            self.buckets[key].remove(index)
            touched.add(key)
        for x, y in touched:
            bucket = self.buckets[(x, y)]
            if not bucket:
                del self.buckets[(x, y)]
                self.vote_image[y, x] = 0.0
                self.counts[y, x] = 0
                continue
            # exact sum of the survivors
            self.vote_image[y, x] = sum(self.votes[i].adjacency for i in bucket)
            self.counts[y, x] = len(bucket)
        return len(removed)


def accumulate(votes: Iterable[Vote], scene_w: int, scene_h: int) -> VoteSpace:
    """Bucket votes at `(floor(scene_x), floor(scene_y))`.

    Raises:
        VoteOutOfBoundsError: If a vote lies outside the scene.
    """

    space = VoteSpace(scene_w, scene_h)
    space.add(votes)
    return space


def add_votes(vs: VoteSpace, votes: Iterable[Vote]) -> VoteSpace:
    vs.add(votes)
    return vs


def _check_window(w_size: int) -> None:
    if w_size < 1 or w_size % 2 == 0:
        raise exception.InvalidParameterError(f"window size must be odd and positive, got {w_size}")


def window_sums(vs: VoteSpace, w_size: int) -> np.ndarray:
    """Vote image summed over a centred `w_size` square, zero outside."""

    _check_window(w_size)
    kernel = np.ones((w_size, w_size), dtype=np.float64)
    return ndimage.correlate(vs.vote_image, kernel, mode="constant", cval=0.0)


def detect_propositions(vs: VoteSpace, w_size: int, quality: float = 0.01) -> List[Proposition]:
    """Windowed-sum local maxima of the vote image.

    A pixel is a proposition if its windowed sum is positive, at least
    `quality` times the global maximum, and no pixel in its `w_size`
    neighbourhood has a larger sum or an equal sum at a smaller `(y, x)`.

    Returns:
        List[Proposition]: By window sum descending, then by `(y, x)`.
    """

    sums = window_sums(vs, w_size)
    peak = sums.max()
    if peak <= 0:
        return []
    neighbourhood = ndimage.maximum_filter(sums, size=w_size, mode="constant", cval=-1.0)
    candidates = (sums == neighbourhood) & (sums > 0) & (sums >= quality * peak)

    half = w_size // 2
    found = []
    for y, x in zip(*np.nonzero(candidates)):
        y0, x0 = max(0, y - half), max(0, x - half)
        window = sums[y0:y + half + 1, x0:x + half + 1]
        # argwhere is row-major, so the first tie is the smallest (y, x)
        ty, tx = np.argwhere(window == sums[y, x])[0]
        if ty + y0 == y and tx + x0 == x:
            found.append(Proposition(int(x), int(y), float(sums[y, x])))
    found.sort(key=lambda p: (-p.window_adjacency_sum, p.y, p.x))
    return found


def erase_region(vs: VoteSpace, envelope: Envelope) -> None:
    removed = vs.erase(envelope)
    log.debug("Erased %d votes inside %s", removed, envelope)


def render_debug(vs: VoteSpace, sigma: float = 2.0) -> RasterImage:
    """Blurred vote image stretched to the full 8-bit range."""

    if not vs.vote_image.any():
        return RasterImage(np.zeros((vs.height, vs.width), dtype=np.uint8))
    blurred = gaussian_blur(RasterImage(vs.vote_image), sigma).data
    low, high = float(blurred.min()), float(blurred.max())
    if high <= low:
        return RasterImage(np.zeros((vs.height, vs.width), dtype=np.uint8))
    scaled = np.rint((blurred - low) / (high - low) * 255.0)
    return RasterImage(np.clip(scaled, 0, 255).astype(np.uint8))
