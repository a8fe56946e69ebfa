"""
shelfscan
~~~~~~~~~

Product detection orchestration: the pattern size cascade, the
per-pattern proposition loop, the detect/extract/redetect protocol and
the consolidation of overlapping detections.

:license: MIT, see LICENSE for more details.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

from shelfscan.engine import exception
from shelfscan.engine.aggregation import (
    aggregate_pass1,
    aggregate_pass2,
    estimate_envelope,
    window_size,
)
from shelfscan.engine.features import ExtractorConfig, FeatureSet, extract_features
from shelfscan.engine.filtercascade import CascadeContext, Filter, run_cascade
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage, extract_subimage, resize_bilinear
from shelfscan.engine.matching import MatchConfig, make_votes
from shelfscan.engine.votespace import accumulate, detect_propositions, erase_region, render_debug
from shelfscan.utils.config import RunConfig

log = logging.getLogger("shelfscan.pipeline")

DebugSink = Callable[[str, RasterImage], None]


@dataclass(frozen=True)
class SceneContext:
    scene_id: str
    image: RasterImage
    features: FeatureSet

    @classmethod
    def from_image(
        cls,
        image: RasterImage,
        scene_id: str = "scene",
        cfg: Optional[ExtractorConfig] = None,
    ) -> "SceneContext":
        return cls(scene_id, image, extract_features(image, cfg, source_id=scene_id))


@dataclass(frozen=True)
class PatternEntry:
    """One pattern image the detection loop runs with.

    Attributes:
        pattern_id (str): The product the entry belongs to.
        entry_id (str): `<id>@<step>` for size cascade entries,
            `<id>#scene` for a pattern extracted from the scene.
        image (RasterImage): Pattern pixels.
        features (FeatureSet): Features of `image`.
        parent_id (str, optional): The product the entry derives from.
        scale_step (int): Number of halvings from the original pattern,
            negative for enlargements.
        base_feature_count (int): Feature count of the original pattern.
    """

    pattern_id: str
    entry_id: str
    image: RasterImage
    features: FeatureSet
    parent_id: Optional[str] = None
    scale_step: int = 0
    base_feature_count: int = 0

    @classmethod
    def from_image(
        cls,
        image: RasterImage,
        pattern_id: str,
        cfg: Optional[ExtractorConfig] = None,
    ) -> "PatternEntry":
        entry_id = f"{pattern_id}@0"
        features = extract_features(image, cfg, source_id=entry_id)
        return cls(pattern_id, entry_id, image, features, None, 0, len(features))

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height

    @property
    def max_dim(self) -> int:
        return max(self.image.width, self.image.height)

    @property
    def center(self):
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass(frozen=True)
class Occurrence:
    """An accepted detection."""

    pattern_id: str
    envelope: Envelope
    adjacency_sum: float
    normalized_adjacency: float
    phase: int
    vote_count: int
    entry_id: str = ""
    base_feature_count: int = 1

    def to_dict(self) -> dict:
        env = self.envelope
        return {
            "pattern": self.pattern_id,
            "entry": self.entry_id,
            "center": [env.center_x, env.center_y],
            "size": [env.width, env.height],
            "rotation": env.rotation,
            "adjacency_sum": self.adjacency_sum,
            "normalized_adjacency": self.normalized_adjacency,
            "phase": self.phase,
            "votes": self.vote_count,
        }


@dataclass
class PatternDiagnostics:
    """Counters of one product's detection run."""

    entries: int = 0
    votes: int = 0
    propositions: int = 0
    accepted: int = 0
    phases: int = 0
    rejections: Dict[int, int] = field(default_factory=lambda: {int(f): 0 for f in Filter})

    def reject(self, which: Filter) -> None:
        self.rejections[int(which)] += 1

    def merge(self, other: "PatternDiagnostics") -> None:
        self.entries += other.entries
        self.votes += other.votes
        self.propositions += other.propositions
        self.accepted += other.accepted
        for key, count in other.rejections.items():
            self.rejections[key] += count

    def to_dict(self) -> dict:
        return {
            "entries": self.entries,
            "votes": self.votes,
            "propositions": self.propositions,
            "accepted": self.accepted,
            "phases": self.phases,
            "rejections": {f"f{key}": count for key, count in sorted(self.rejections.items())},
        }


@dataclass
class DetectionReport:
    scene_id: str
    occurrences: List[Occurrence] = field(default_factory=list)
    diagnostics: Dict[str, PatternDiagnostics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene_id,
            "occurrences": [occ.to_dict() for occ in self.occurrences],
            "diagnostics": {key: diag.to_dict() for key, diag in self.diagnostics.items()},
        }

    def write(self, path: Union[str, Path]) -> Path:
        """Write the report as JSON.

        Raises:
            OutputWriteError: If the file cannot be written.
        """

        path = Path(path)
        try:
            with open(path, "w", encoding="utf-8") as file:
                json.dump(self.to_dict(), file, indent=2, sort_keys=True)
        except OSError as exc:
            raise exception.OutputWriteError(f"cannot write {path}") from exc
        return path.resolve()


def _map(function, items: Sequence, workers: int) -> list:
    """Apply `function` to `items`, results in input order."""

    if workers <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))


def _derive(
    pattern: PatternEntry,
    image: RasterImage,
    step: int,
    cfg: Optional[ExtractorConfig],
) -> PatternEntry:
    entry_id = f"{pattern.pattern_id}@{step}"
    return PatternEntry(
        pattern_id=pattern.pattern_id,
        entry_id=entry_id,
        image=image,
        features=extract_features(image, cfg, source_id=entry_id),
        parent_id=pattern.pattern_id,
        scale_step=step,
        base_feature_count=pattern.base_feature_count,
    )


def build_size_cascade(
    pattern: PatternEntry,
    min_dim: int = 100,
    cfg: Optional[ExtractorConfig] = None,
    upscale_steps: int = 0,
) -> List[PatternEntry]:
    """The pattern, its successive halvings and optional doublings.

    Halving stops before an entry whose larger dimension would drop below
    `min_dim`. With `upscale_steps`, doubled entries at steps -1, -2, ...
    are listed first; they cover objects above the scale gate of the
    original. Every derivative gets freshly extracted features.
    """

    if upscale_steps < 0:
        raise exception.InvalidValueError("upscale_steps must be >= 0")
    entries = [pattern]
    image = pattern.image
    step = pattern.scale_step
    for _ in range(upscale_steps):
        image = resize_bilinear(image, image.width * 2, image.height * 2)
        step -= 1
        entries.insert(0, _derive(pattern, image, step, cfg))

    image = pattern.image
    step = pattern.scale_step
    while True:
        new_w, new_h = image.width // 2, image.height // 2
        if max(new_w, new_h) < min_dim or min(new_w, new_h) < 1:
            break
        image = resize_bilinear(image, new_w, new_h, antialias=True)
        step += 1
        entries.append(_derive(pattern, image, step, cfg))
    return entries


def detect_single_pattern(
    scene: SceneContext,
    entry: PatternEntry,
    cfg: Optional[RunConfig] = None,
    phase: int = 1,
    match_cfg: Optional[MatchConfig] = None,
    diagnostics: Optional[PatternDiagnostics] = None,
    debug_sink: Optional[DebugSink] = None,
) -> List[Occurrence]:
    """Find every occurrence of one pattern entry in the scene.

    Propositions are examined strongest first. Each goes through the first
    aggregation pass and its filters, then the flood-fill pass and its
    filters; an accepted detection is reported and its votes erased before
    the next proposition.

    Args:
        scene (SceneContext): Scene image and features.
        entry (PatternEntry): The pattern entry to look for.
        cfg (RunConfig, optional): Run configuration.
        phase (int, optional): Recorded in the occurrences. Defaults to 1.
        match_cfg (MatchConfig, optional): Overrides `cfg.matching`.
        diagnostics (PatternDiagnostics, optional): Counters to update.
        debug_sink (Callable, optional): Receives the rendered vote image
            as `(name, image)`.

    Returns:
        List[Occurrence]: Accepted detections in acceptance order.
    """

    cfg = cfg or RunConfig()
    match_cfg = match_cfg or cfg.matching
    diagnostics = diagnostics if diagnostics is not None else PatternDiagnostics()
    pipeline = cfg.pipeline

    votes = make_votes(scene.features, entry.features, match_cfg)
    space = accumulate(votes, scene.image.width, scene.image.height)
    diagnostics.entries += 1
    diagnostics.votes += len(votes)
    if debug_sink is not None:
        debug_sink(
            f"{entry.pattern_id}_{phase}_{entry.scale_step}",
            render_debug(space, cfg.debug.render_sigma),
        )
    if not votes:
        return []

    w = window_size(entry.max_dim)
    propositions = detect_propositions(space, w, pipeline.quality)
    context = CascadeContext(
        pattern_features=entry.features,
        scene_features=scene.features,
        pattern_image=entry.image,
        scene_image=scene.image,
        pattern_feature_count=len(entry.features),
    )
    base_count = max(1, entry.base_feature_count)

    occurrences: List[Occurrence] = []
    for prop in propositions[:pipeline.max_propositions]:
        diagnostics.propositions += 1
        first = aggregate_pass1(space, prop, w)
        verdict = run_cascade(first, 1, context, cfg.cascade)
        if not verdict.accepted:
            diagnostics.reject(verdict.rejecting_filter)
            continue
        if not first.votes:
            continue

        envelope = estimate_envelope(first, entry.width, entry.height)
        second = aggregate_pass2(space, prop, envelope, w, pipeline.shrink)
        envelope = estimate_envelope(second, entry.width, entry.height)
        verdict = run_cascade(second, 2, replace(context, envelope=envelope), cfg.cascade)
        if not verdict.accepted:
            diagnostics.reject(verdict.rejecting_filter)
            continue

        occurrence = Occurrence(
            pattern_id=entry.pattern_id,
            envelope=envelope,
            adjacency_sum=second.adjacency_sum,
            normalized_adjacency=second.adjacency_sum / base_count,
            phase=phase,
            vote_count=len(second),
            entry_id=entry.entry_id,
            base_feature_count=base_count,
        )
        occurrences.append(occurrence)
        diagnostics.accepted += 1
        erase_region(space, envelope)
        log.debug(
            "%s accepted at (%.1f, %.1f), %d votes, sum %.3f",
            entry.entry_id, envelope.center_x, envelope.center_y,
            occurrence.vote_count, occurrence.adjacency_sum,
        )

    log.info(
        "%s phase %d: %d votes, %d propositions, %d accepted",
        entry.entry_id, phase, len(votes), min(len(propositions), pipeline.max_propositions),
        len(occurrences),
    )
    return occurrences


def _center_key(occ: Occurrence):
    return (occ.envelope.center_x, occ.envelope.center_y)


def consolidate(
    occurrences: Sequence[Occurrence],
    same_pattern: bool,
    iou_threshold: float = 0.5,
) -> List[Occurrence]:
    """Merge overlapping detections.

    Occurrences whose bounding boxes reach `iou_threshold` are grouped
    transitively. With `same_pattern`, only detections of one product are
    grouped and each group becomes its strongest member carrying the sum
    of the group's adjacency. Otherwise each group keeps only the member
    with the best normalized adjacency.

    Returns:
        List[Occurrence]: By normalized adjacency descending, then centre.
    """

    occurrences = list(occurrences)
    parent = list(range(len(occurrences)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(occurrences)):
        for j in range(i + 1, len(occurrences)):
            a, b = occurrences[i], occurrences[j]
            if same_pattern and a.pattern_id != b.pattern_id:
                continue
            if a.envelope.iou(b.envelope) >= iou_threshold:
                parent[find(j)] = find(i)

    groups: Dict[int, List[Occurrence]] = {}
    for i, occ in enumerate(occurrences):
        groups.setdefault(find(i), []).append(occ)

    merged = []
    for members in groups.values():
        if same_pattern:
            keeper = min(members, key=lambda o: (-o.adjacency_sum, _center_key(o)))
            if len(members) > 1:
                total = math.fsum(o.adjacency_sum for o in members)
                keeper = replace(
                    keeper,
                    adjacency_sum=total,
                    normalized_adjacency=total / keeper.base_feature_count,
                )
        else:
            keeper = min(members, key=lambda o: (-o.normalized_adjacency, _center_key(o)))
        merged.append(keeper)
    merged.sort(key=lambda o: (-o.normalized_adjacency, o.pattern_id, _center_key(o)))
    return merged


def run_two_phase(
    scene: SceneContext,
    base_pattern: PatternEntry,
    cfg: Optional[RunConfig] = None,
    diagnostics: Optional[PatternDiagnostics] = None,
    debug_sink: Optional[DebugSink] = None,
) -> List[Occurrence]:
    """Detect with the size cascade, then again with a pattern cut from the scene.

    The second phase uses the strongest first-phase detection as its
    pattern, so it matches the scene's resolution, blur and lighting. It
    is skipped when the first phase finds nothing.
    """

    cfg = cfg or RunConfig()
    diagnostics = diagnostics if diagnostics is not None else PatternDiagnostics()
    pipeline = cfg.pipeline
    entries = build_size_cascade(
        base_pattern, pipeline.min_dim, cfg.extractor, pipeline.upscale_steps
    )

    def detect_entry(entry: PatternEntry):
        counters = PatternDiagnostics()
        found = detect_single_pattern(scene, entry, cfg, 1, None, counters, debug_sink)
        return found, counters

    phase1: List[Occurrence] = []
    for found, counters in _map(detect_entry, entries, pipeline.workers):
        phase1.extend(found)
        diagnostics.merge(counters)
    diagnostics.phases = 1
    phase1 = consolidate(phase1, True, pipeline.iou_threshold)
    if not phase1 or not pipeline.two_phase:
        return phase1

    best = min(phase1, key=lambda o: (-o.adjacency_sum, _center_key(o)))
    crop = extract_subimage(scene.image, best.envelope)
    entry_id = f"{base_pattern.pattern_id}#scene"
    features = extract_features(crop, cfg.extractor, source_id=entry_id)
    if len(features) == 0:
        log.info("%s: scene crop has no features, phase 2 skipped", entry_id)
        return phase1

    extracted = PatternEntry(
        pattern_id=base_pattern.pattern_id,
        entry_id=entry_id,
        image=crop,
        features=features,
        parent_id=base_pattern.pattern_id,
        scale_step=0,
        base_feature_count=base_pattern.base_feature_count,
    )
    match_cfg = replace(cfg.matching, scale_quotient_range=pipeline.phase2_scale_quotient_range)
    phase2 = detect_single_pattern(scene, extracted, cfg, 2, match_cfg, diagnostics, debug_sink)
    diagnostics.phases = 2
    return consolidate(phase1 + phase2, True, pipeline.iou_threshold)


def run_multi_product(
    scene: SceneContext,
    patterns: Sequence[PatternEntry],
    cfg: Optional[RunConfig] = None,
    debug_sink: Optional[DebugSink] = None,
) -> DetectionReport:
    """Run every product and keep the best of overlapping detections.

    Raises:
        EmptyPatternListError: If `patterns` is empty.
    """

    cfg = cfg or RunConfig()
    patterns = list(patterns)
    if not patterns:
        raise exception.EmptyPatternListError("at least one pattern is required")

    def run_product(pattern: PatternEntry):
        counters = PatternDiagnostics()
        return run_two_phase(scene, pattern, cfg, counters, debug_sink), counters

    report = DetectionReport(scene.scene_id)
    found: List[Occurrence] = []
    for pattern, (occurrences, counters) in zip(
        patterns, _map(run_product, patterns, cfg.pipeline.workers)
    ):
        found.extend(occurrences)
        if pattern.pattern_id in report.diagnostics:
            report.diagnostics[pattern.pattern_id].merge(counters)
        else:
            report.diagnostics[pattern.pattern_id] = counters
    report.occurrences = consolidate(found, False, cfg.pipeline.iou_threshold)
    log.info("%s: %d occurrences of %d patterns", scene.scene_id,
             len(report.occurrences), len(patterns))
    return report


class Detector:
    """Configured entry point to the detection pipeline.

    Usage:

        >>> from shelfscan import Detector, load_image
        >>> detector = Detector()
        >>> report = detector.detect(
        ...     load_image("shelf.jpg"),
        ...     {"cereal": load_image("cereal.png")},
        ... )
        >>> len(report.occurrences)
        3
    """

    def __init__(self, cfg: Optional[RunConfig] = None, debug_sink: Optional[DebugSink] = None):
        self.cfg = cfg or RunConfig()
        self.debug_sink = debug_sink

    def scene(self, image: RasterImage, scene_id: str = "scene") -> SceneContext:
        return SceneContext.from_image(image, scene_id, self.cfg.extractor)

    def pattern(self, image: RasterImage, pattern_id: str) -> PatternEntry:
        return PatternEntry.from_image(image, pattern_id, self.cfg.extractor)

    def detect(
        self,
        scene_image: RasterImage,
        patterns: Mapping[str, RasterImage],
        scene_id: str = "scene",
    ) -> DetectionReport:
        scene = self.scene(scene_image, scene_id)
        entries = [self.pattern(image, pattern_id) for pattern_id, image in patterns.items()]
        return run_multi_product(scene, entries, self.cfg, self.debug_sink)
