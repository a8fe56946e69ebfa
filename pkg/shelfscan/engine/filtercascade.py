"""
shelfscan
~~~~~~~~~

The six accept/reject filters judging a vote group, and their per-pass
wiring.

:license: MIT, see LICENSE for more details.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Optional, Tuple

import numpy as np

from shelfscan.engine import exception
from shelfscan.engine.aggregation import VoteGroup, resultant_length
from shelfscan.engine.features import FeatureSet
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage, extract_subimage, ncc, resize_bilinear

log = logging.getLogger("shelfscan.filtercascade")


class Filter(IntEnum):
    VOTE_COUNT = 1
    ADJACENCY_SUM = 2
    SCALE_VARIANCE = 3
    ROTATION_VARIANCE = 4
    BINARY_LUMINANCE = 5
    GLOBAL_NCC = 6


PASS_FILTERS: Dict[int, Tuple[Filter, ...]] = {
    1: (Filter.VOTE_COUNT, Filter.ADJACENCY_SUM, Filter.SCALE_VARIANCE, Filter.ROTATION_VARIANCE),
    2: (Filter.SCALE_VARIANCE, Filter.ROTATION_VARIANCE, Filter.BINARY_LUMINANCE, Filter.GLOBAL_NCC),
}

SCALE_REFERENCES = ("mean_of_squares", "square_of_mean")
NCC_RULES = ("all", "mean")
DEGENERATE_RESULTANT = 1e-6


@dataclass(frozen=True)
class CascadeConfig:
    """Filter thresholds.

    Attributes:
        min_votes (int): Groups need strictly more votes.
        adjacency_divisor (float): Pattern feature count over this is the
            minimum adjacency sum.
        scale_var_factor (float): Scale quotient variance limit, relative
            to `scale_variance_reference`.
        rot_var_factor (float): Rotation variance limit.
        hamming_reject_frac (float): Rejected above this fraction of
            differing luminance-order bits.
        ncc_threshold (float): Minimum normalized cross-correlation.
        ncc_patch (int): Side of the square both images are resized to.
        scale_variance_reference (str): `"mean_of_squares"` or
            `"square_of_mean"`.
        ncc_channel_rule (str): `"all"` channels must pass, or their
            `"mean"` must.
        disabled_filters (Tuple[int, ...]): Filters skipped in both passes.
    """

    min_votes: int = 6
    adjacency_divisor: float = 200.0
    scale_var_factor: float = 0.6
    rot_var_factor: float = 0.6
    hamming_reject_frac: float = 0.25
    ncc_threshold: float = 0.5
    ncc_patch: int = 20
    scale_variance_reference: str = "mean_of_squares"
    ncc_channel_rule: str = "all"
    disabled_filters: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "disabled_filters", tuple(int(f) for f in self.disabled_filters))
        if self.min_votes < 0 or self.ncc_patch < 2:
            raise exception.InvalidValueError("min_votes must be >= 0 and ncc_patch >= 2")
        if self.adjacency_divisor <= 0 or self.scale_var_factor <= 0 or self.rot_var_factor <= 0:
            raise exception.InvalidValueError(
                "adjacency_divisor and the variance factors must be positive"
            )
        if not 0 < self.hamming_reject_frac < 1 or not 0 < self.ncc_threshold < 1:
            raise exception.InvalidValueError(
                "hamming_reject_frac and ncc_threshold must be in (0, 1)"
            )
        if self.scale_variance_reference not in SCALE_REFERENCES:
            raise exception.InvalidValueError(
                f"scale_variance_reference must be one of {SCALE_REFERENCES}"
            )
        if self.ncc_channel_rule not in NCC_RULES:
            raise exception.InvalidValueError(f"ncc_channel_rule must be one of {NCC_RULES}")
        if any(f not in Filter._value2member_map_ for f in self.disabled_filters):
            raise exception.InvalidValueError("disabled_filters may only name filters 1-6")


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    rejecting_filter: Optional[Filter]
    measured_value: float
    threshold_value: float

    @classmethod
    def judge(cls, passed: bool, which: Filter, measured: float, threshold: float) -> "FilterVerdict":
        return cls(bool(passed), None if passed else which, float(measured), float(threshold))


@dataclass(frozen=True)
class CascadeContext:
    """What the filters need besides the vote group."""

    pattern_features: FeatureSet
    scene_features: FeatureSet
    pattern_image: RasterImage
    scene_image: RasterImage
    pattern_feature_count: int
    envelope: Optional[Envelope] = None


def f1_vote_count(group: VoteGroup, cfg: Optional[CascadeConfig] = None) -> FilterVerdict:
    cfg = cfg or CascadeConfig()
    return FilterVerdict.judge(len(group) > cfg.min_votes, Filter.VOTE_COUNT, len(group), cfg.min_votes)


def f2_adjacency_sum(
    group: VoteGroup,
    pattern_feature_count: int,
    cfg: Optional[CascadeConfig] = None,
) -> FilterVerdict:
    cfg = cfg or CascadeConfig()
    threshold = pattern_feature_count / cfg.adjacency_divisor
    total = group.adjacency_sum
    return FilterVerdict.judge(total >= threshold, Filter.ADJACENCY_SUM, total, threshold)


def f3_scale_variance(group: VoteGroup, cfg: Optional[CascadeConfig] = None) -> FilterVerdict:
    """Scale quotients must agree; groups below two votes pass."""

    cfg = cfg or CascadeConfig()
    if len(group) < 2:
        return FilterVerdict.judge(True, Filter.SCALE_VARIANCE, 0.0, 0.0)
    quotients = group.quotients
    if cfg.scale_variance_reference == "mean_of_squares":
        reference = float(np.mean(quotients ** 2))
    else:
        reference = float(np.mean(quotients)) ** 2
    threshold = cfg.scale_var_factor * reference
    variance = float(quotients.var())
    return FilterVerdict.judge(variance <= threshold, Filter.SCALE_VARIANCE, variance, threshold)


def f4_rotation_variance(group: VoteGroup, cfg: Optional[CascadeConfig] = None) -> FilterVerdict:
    """Rotation differences must agree.

    Rotations are unit vectors, so their variance is `1 - R**2` and the
    mean squared magnitude it is compared against is 1. A resultant that
    vanishes has no direction and is rejected.
    """

    cfg = cfg or CascadeConfig()
    resultant = resultant_length(group.rotations)
    variance = 1.0 - resultant ** 2
    # the variance-to-mean-square rule of the scale filter, 0.6 by default
    threshold = cfg.rot_var_factor
    if resultant < DEGENERATE_RESULTANT:
        return FilterVerdict.judge(False, Filter.ROTATION_VARIANCE, variance, threshold)
    return FilterVerdict.judge(variance <= threshold, Filter.ROTATION_VARIANCE, variance, threshold)


def f5_binary_luminance(
    group: VoteGroup,
    pattern_features: FeatureSet,
    scene_features: FeatureSet,
    cfg: Optional[CascadeConfig] = None,
) -> FilterVerdict:
    """Luminance order of every vote pair must agree between the images.

    For each pair `i < j` of votes (ordered by pattern feature) one bit
    records whether feature `i` is brighter than feature `j`, in the
    pattern and in the scene. The group is rejected when too many bits
    differ.
    """

    cfg = cfg or CascadeConfig()
    threshold = cfg.hamming_reject_frac
    votes = sorted(group.votes, key=lambda v: (v.pattern_idx, v.scene_idx))
    if len(votes) < 2:
        return FilterVerdict.judge(True, Filter.BINARY_LUMINANCE, 0.0, threshold)

    lp = pattern_features.luminances[[v.pattern_idx for v in votes]]
    ls = scene_features.luminances[[v.scene_idx for v in votes]]
    upper = np.triu_indices(len(votes), k=1)
    bits_pattern = (lp[:, None] > lp[None, :])[upper]
    bits_scene = (ls[:, None] > ls[None, :])[upper]
    fraction = float(np.count_nonzero(bits_pattern != bits_scene)) / len(bits_pattern)
    return FilterVerdict.judge(fraction <= threshold, Filter.BINARY_LUMINANCE, fraction, threshold)


def f6_global_ncc(
    envelope: Envelope,
    scene_img: RasterImage,
    pattern_img: RasterImage,
    cfg: Optional[CascadeConfig] = None,
) -> FilterVerdict:
    """Per-channel correlation of the envelope crop with the pattern."""

    cfg = cfg or CascadeConfig()
    threshold = cfg.ncc_threshold
    try:
        crop = extract_subimage(scene_img, envelope)
    except exception.EmptyRegionError:
        return FilterVerdict.judge(False, Filter.GLOBAL_NCC, 0.0, threshold)

    side = cfg.ncc_patch
    crop_rgb = resize_bilinear(crop, side, side, antialias=True).rgb()
    pattern_rgb = resize_bilinear(pattern_img, side, side, antialias=True).rgb()
    scores = [
        ncc(RasterImage(crop_rgb[:, :, c]), RasterImage(pattern_rgb[:, :, c]))
        for c in range(3)
    ]
    measured = min(scores) if cfg.ncc_channel_rule == "all" else float(np.mean(scores))
    return FilterVerdict.judge(measured >= threshold, Filter.GLOBAL_NCC, measured, threshold)


def run_filter(which: Filter, group: VoteGroup, context: CascadeContext, cfg: CascadeConfig) -> FilterVerdict:
    if which is Filter.VOTE_COUNT:
        return f1_vote_count(group, cfg)
    if which is Filter.ADJACENCY_SUM:
        return f2_adjacency_sum(group, context.pattern_feature_count, cfg)
    if which is Filter.SCALE_VARIANCE:
        return f3_scale_variance(group, cfg)
    if which is Filter.ROTATION_VARIANCE:
        return f4_rotation_variance(group, cfg)
    if which is Filter.BINARY_LUMINANCE:
        return f5_binary_luminance(group, context.pattern_features, context.scene_features, cfg)
    if context.envelope is None:
        raise exception.InvalidParameterError("the correlation filter needs an envelope")
    return f6_global_ncc(context.envelope, context.scene_image, context.pattern_image, cfg)


def run_cascade(
    group: VoteGroup,
    pass_id: int,
    context: CascadeContext,
    cfg: Optional[CascadeConfig] = None,
) -> FilterVerdict:
    """Run the filters of one aggregation pass in numeric order.

    The first rejection stops the cascade and is returned.

    Raises:
        InvalidParameterError: If `pass_id` is not 1 or 2.
    """

    cfg = cfg or CascadeConfig()
    if pass_id not in PASS_FILTERS:
        raise exception.InvalidParameterError(f"pass_id must be 1 or 2, got {pass_id}")
    for which in PASS_FILTERS[pass_id]:
        if which in cfg.disabled_filters:
            continue
        verdict = run_filter(which, group, context, cfg)
        if not verdict.accepted:
            log.debug(
                "Pass %d at (%d, %d): filter %d rejected (%.4g vs %.4g)",
                pass_id, group.proposition.x, group.proposition.y,
                which, verdict.measured_value, verdict.threshold_value,
            )
            return verdict
    return FilterVerdict(True, None, float(len(group)), 0.0)
