"""
shelfscan
~~~~~~~~~

Descriptor matching and vote construction.

Each scene feature is matched to its nearest pattern feature; the
correspondence set is thresholded at the midpoint of its distance range,
colour filtered, gated on scale quotient and turned into weighted votes
anchored at the projected pattern centre.

:license: MIT, see LICENSE for more details.
"""

import heapq
import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from shelfscan.engine import exception
from shelfscan.engine.features import ColorSample, FeaturePoint, FeatureSet

log = logging.getLogger("shelfscan.matching")


@dataclass(frozen=True)
class MatchConfig:
    """Matching parameters.

    Attributes:
        scale_quotient_range (Tuple[float, float]): Open interval of
            accepted scene/pattern scale quotients.
        hue_threshold (float): Maximum circular hue difference in degrees.
        lightness_range (Tuple[float, float]): Lightness band (0-255) in
            which the colour filter is active.
        rgb_spread_min (float): Channel spread a point needs for the colour
            filter to be active.
        exact_nn (bool): Use an exact kd-tree instead of the forest.
        ann_trees (int): Randomized trees in the forest.
        ann_checks (int): Points compared per approximate query.
        ann_leaf_size (int): Maximum points in a forest leaf.
        ann_seed (int): Seed of the forest construction.
    """

    scale_quotient_range: Tuple[float, float] = (0.75, 1.5)
    hue_threshold: float = 45.0
    lightness_range: Tuple[float, float] = (10.0, 240.0)
    rgb_spread_min: float = 10.0
    exact_nn: bool = False
    ann_trees: int = 4
    ann_checks: int = 64
    ann_leaf_size: int = 4
    ann_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_quotient_range", tuple(self.scale_quotient_range))
        object.__setattr__(self, "lightness_range", tuple(self.lightness_range))
        low, high = self.scale_quotient_range
        if not 0 < low < high:
            raise exception.InvalidValueError(
                f"scale_quotient_range needs 0 < lower < upper, got {self.scale_quotient_range}"
            )
        lo, hi = self.lightness_range
        if not lo <= hi:
            raise exception.InvalidValueError("lightness_range lower bound exceeds upper bound")
        if self.hue_threshold <= 0 or self.rgb_spread_min < 0:
            raise exception.InvalidValueError("hue_threshold must be positive")
        if self.ann_trees < 1 or self.ann_checks < 1 or self.ann_leaf_size < 1:
            raise exception.InvalidValueError("ann_trees, ann_checks and ann_leaf_size must be >= 1")


class RawMatch(NamedTuple):
    scene_idx: int
    pattern_idx: int
    descriptor_distance: float


class Vote(NamedTuple):
    """One accepted correspondence.

    `scene_x`/`scene_y` is the pattern centre projected into the scene;
    `feature_x`/`feature_y` is the matched scene feature itself.
    """

    pattern_idx: int
    scene_idx: int
    descriptor_distance: float
    adjacency: float
    scale_quotient: float
    rotation_delta: float
    scene_x: float
    scene_y: float
    feature_x: float
    feature_y: float


class DescriptorIndex(ABC):
    """Nearest-neighbour index over the pattern descriptors."""

    def __init__(self, data: np.ndarray) -> None:
        self._data = np.array(data, dtype=np.float64)
        self._data.setflags(write=False)

    def __len__(self) -> int:
        return len(self._data)

    @abstractmethod
    def query(self, descriptors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest indexed descriptor for every row of `descriptors`.

        Returns:
            Tuple[np.ndarray, np.ndarray]: Indices and L2 distances.
        """


class ExactIndex(DescriptorIndex):
    """Exact L2 nearest neighbour through a kd-tree."""

    def __init__(self, data: np.ndarray) -> None:
        super().__init__(data)
        self._tree = cKDTree(self._data)

    def query(self, descriptors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        descriptors = np.asarray(descriptors, dtype=np.float64).reshape(-1, self._data.shape[1])
        if len(descriptors) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        distances, indices = self._tree.query(descriptors, k=1)
        return np.asarray(indices, dtype=np.int64), np.asarray(distances, dtype=np.float64)


class _Leaf:
    __slots__ = ("indices",)

    def __init__(self, indices: np.ndarray) -> None:
        self.indices = indices


class _Split:
    __slots__ = ("dim", "value", "left", "right")

    def __init__(self, dim: int, value: float, left, right) -> None:
        self.dim = dim
        self.value = value
        self.left = left
        self.right = right


class KDForestIndex(DescriptorIndex):
    """Randomized kd-tree forest with best-bin-first search.

    Every tree splits on a dimension drawn at random among the five of
    highest variance and cuts at the mean. A query descends all trees,
    then keeps exploring the closest unexplored branches from one shared
    priority queue until `checks` points have been compared.
    """

    TOP_DIMS: int = 5
    SAMPLE: int = 100

    def __init__(
        self,
        data: np.ndarray,
        trees: int = 4,
        checks: int = 64,
        leaf_size: int = 4,
        seed: int = 0,
    ) -> None:
        super().__init__(data)
        self.checks = checks
        self.leaf_size = leaf_size
        rng = np.random.default_rng(seed)
        everything = np.arange(len(self._data))
        self._roots = [self._build(everything, rng) for _ in range(trees)]

    def _build(self, indices: np.ndarray, rng: np.random.Generator):
        if len(indices) <= self.leaf_size:
            return _Leaf(indices)
        points = self._data[indices]
        if len(points) > self.SAMPLE:
            sample = points[rng.choice(len(points), self.SAMPLE, replace=False)]
        else:
            sample = points
        variance = sample.var(axis=0)
        top = np.argsort(-variance, kind="stable")[:self.TOP_DIMS]
        top = top[variance[top] > 0]
        if len(top) == 0:
            return _Leaf(indices)
        dim = int(rng.choice(top))
        value = float(sample[:, dim].mean())
        left = points[:, dim] < value
        if left.all() or not left.any():
            return _Leaf(indices)
        return _Split(dim, value, self._build(indices[left], rng), self._build(indices[~left], rng))

    def _query_one(self, q: np.ndarray) -> Tuple[int, float]:
        best_index, best_d2 = -1, math.inf
        checked = set()
        compared = 0
        order = itertools.count()
        heap = [(0.0, next(order), root) for root in self._roots]
        heapq.heapify(heap)
        while heap:
            mindist, _, node = heapq.heappop(heap)
            if mindist >= best_d2:
                break
            while isinstance(node, _Split):
                diff = q[node.dim] - node.value
                near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
                heapq.heappush(heap, (mindist + diff * diff, next(order), far))
                node = near
            fresh = [i for i in node.indices.tolist() if i not in checked]
            if fresh:
                checked.update(fresh)
                compared += len(fresh)
                d2 = ((self._data[fresh] - q) ** 2).sum(axis=1)
                k = int(np.argmin(d2))
                if d2[k] < best_d2 or (d2[k] == best_d2 and fresh[k] < best_index):
                    best_index, best_d2 = fresh[k], float(d2[k])
            if compared >= self.checks:
                break
        return best_index, math.sqrt(best_d2)

    def query(self, descriptors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        descriptors = np.asarray(descriptors, dtype=np.float64).reshape(-1, self._data.shape[1])
        indices = np.zeros(len(descriptors), dtype=np.int64)
        distances = np.zeros(len(descriptors))
        for row, q in enumerate(descriptors):
            indices[row], distances[row] = self._query_one(q)
        return indices, distances


def build_index(pattern_features: FeatureSet, cfg: Optional[MatchConfig] = None) -> DescriptorIndex:
    """Index the pattern descriptors.

    Raises:
        EmptyFeatureSetError: If the pattern has no features.
    """

    cfg = cfg or MatchConfig()
    if len(pattern_features) == 0:
        raise exception.EmptyFeatureSetError(
            f"cannot index empty feature set {pattern_features.source_id!r}"
        )
    if cfg.exact_nn:
        return ExactIndex(pattern_features.descriptors)
    return KDForestIndex(
        pattern_features.descriptors,
        trees=cfg.ann_trees,
        checks=cfg.ann_checks,
        leaf_size=cfg.ann_leaf_size,
        seed=cfg.ann_seed,
    )


def match_descriptors(
    scene: FeatureSet,
    index: DescriptorIndex,
    cfg: Optional[MatchConfig] = None,
) -> List[RawMatch]:
    """One nearest pattern feature per scene feature, unfiltered."""

    if len(scene) == 0:
        return []
    indices, distances = index.query(scene.descriptors)
    return [
        RawMatch(scene_idx, int(pattern_idx), float(distance))
        for scene_idx, (pattern_idx, distance) in enumerate(zip(indices, distances))
    ]


def distance_threshold(matches: List[RawMatch]) -> float:
    """Midpoint between the smallest and the largest match distance.

    Raises:
        EmptyMatchListError: If `matches` is empty.
    """

    if not matches:
        raise exception.EmptyMatchListError("distance threshold of an empty match list")
    distances = [m.descriptor_distance for m in matches]
    return (min(distances) + max(distances)) / 2.0


def adjacency(distance: float, threshold: float) -> float:
    """Map a descriptor distance below `threshold` onto (0, 1]."""

    return 1.0 - (distance / threshold) ** 2


def hue_distance(a: float, b: float) -> float:
    """Circular distance between two hues in degrees."""

    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _color_active(color: ColorSample, cfg: MatchConfig) -> bool:
    lo, hi = cfg.lightness_range
    return lo <= color.l <= hi and color.rgb_spread > cfg.rgb_spread_min


def color_filter(
    pattern_pt: FeaturePoint,
    scene_pt: FeaturePoint,
    cfg: Optional[MatchConfig] = None,
) -> bool:
    """Keep (`True`) or reject a correspondence on hue.

    The filter only judges pairs whose points both have a usable hue:
    lightness inside `lightness_range` and an RGB spread above
    `rgb_spread_min`. Any other pair is kept.
    """

    cfg = cfg or MatchConfig()
    if not (_color_active(pattern_pt.color, cfg) and _color_active(scene_pt.color, cfg)):
        return True
    return hue_distance(pattern_pt.color.h, scene_pt.color.h) <= cfg.hue_threshold


def wrap_degrees(angle):
    """Wrap degrees into [-180, 180)."""

    wrapped = np.mod(np.asarray(angle, dtype=np.float64) + 180.0, 360.0) - 180.0
    wrapped = np.where(wrapped >= 180.0, wrapped - 360.0, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def make_votes(
    scene: FeatureSet,
    pattern: FeatureSet,
    cfg: Optional[MatchConfig] = None,
    index: Optional[DescriptorIndex] = None,
) -> List[Vote]:
    """Match, filter and weight correspondences into votes.

    Args:
        scene (FeatureSet): Scene features.
        pattern (FeatureSet): Pattern features.
        cfg (MatchConfig, optional): Matching parameters.
        index (DescriptorIndex, optional): A prebuilt index of `pattern`.

    Returns:
        List[Vote]: Votes in scene feature order; empty if either set is.
    """

    cfg = cfg or MatchConfig()
    if len(scene) == 0 or len(pattern) == 0:
        return []
    index = index or build_index(pattern, cfg)
    matches = match_descriptors(scene, index, cfg)
    threshold = distance_threshold(matches)
    if threshold <= 0:
        return []

    low, high = cfg.scale_quotient_range
    pcx, pcy = pattern.center
    votes: List[Vote] = []
    dropped = {"distance": 0, "color": 0, "scale": 0, "outside": 0}
    for match in matches:
        if not match.descriptor_distance < threshold:
            dropped["distance"] += 1
            continue
        scene_pt = scene.points[match.scene_idx]
        pattern_pt = pattern.points[match.pattern_idx]
        if not color_filter(pattern_pt, scene_pt, cfg):
            dropped["color"] += 1
            continue
        quotient = scene_pt.scale / pattern_pt.scale
        if not low < quotient < high:
            dropped["scale"] += 1
            continue

        delta = wrap_degrees(scene_pt.orientation - pattern_pt.orientation)
        theta = math.radians(delta)
        dx, dy = pcx - pattern_pt.x, pcy - pattern_pt.y
        x = scene_pt.x + quotient * (dx * math.cos(theta) - dy * math.sin(theta))
        y = scene_pt.y + quotient * (dx * math.sin(theta) + dy * math.cos(theta))
        if not (0 <= x < scene.image_w and 0 <= y < scene.image_h):
            dropped["outside"] += 1
            continue

        votes.append(Vote(
            pattern_idx=match.pattern_idx,
            scene_idx=match.scene_idx,
            descriptor_distance=match.descriptor_distance,
            adjacency=adjacency(match.descriptor_distance, threshold),
            scale_quotient=quotient,
            rotation_delta=delta,
            scene_x=x,
            scene_y=y,
            feature_x=scene_pt.x,
            feature_y=scene_pt.y,
        ))

    log.debug(
        "%s vs %s: %d matches, threshold %.4f, %d votes, dropped %s",
        pattern.source_id, scene.source_id, len(matches), threshold, len(votes), dropped,
    )
    return votes
