import itertools

import numpy as np
import pytest

from shelfscan.engine import exception
from shelfscan.engine.aggregation import VoteGroup
from shelfscan.engine.features import ColorSample, FeaturePoint, FeatureSet
from shelfscan.engine.filtercascade import (
    CascadeConfig,
    CascadeContext,
    Filter,
    f1_vote_count,
    f2_adjacency_sum,
    f3_scale_variance,
    f4_rotation_variance,
    f5_binary_luminance,
    f6_global_ncc,
    run_cascade,
)
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage
from shelfscan.engine.matching import Vote
from shelfscan.engine.votespace import Proposition


def vote(k, adjacency=1.0, quotient=1.0, rotation=0.0, scene_idx=None):
    scene_idx = k if scene_idx is None else scene_idx
    return Vote(k, scene_idx, 0.0, adjacency, quotient, rotation, 5.0, 5.0, 5.0, 5.0)


def group(votes):
    return VoteGroup(tuple(votes), Proposition(5, 5, 0.0))


def uniform(count, **kwargs):
    return group([vote(k, **kwargs) for k in range(count)])


def luminance_set(values):
    points = []
    for k, value in enumerate(values):
        color = ColorSample.from_rgb(value, value, value)
        points.append(FeaturePoint(float(k), 0.0, 1.0, 0.0, (1.0,), color, value))
    return FeatureSet("lum", max(1, len(values)), 1, 1, tuple(points))


def test_cascade_config_validation():
    with pytest.raises(exception.InvalidValueError):
        CascadeConfig(ncc_threshold=1.0)
    with pytest.raises(exception.InvalidValueError):
        CascadeConfig(scale_variance_reference="median")
    with pytest.raises(exception.InvalidValueError):
        CascadeConfig(disabled_filters=(7,))
    assert CascadeConfig(disabled_filters=[6]).disabled_filters == (6,)


def test_f1_needs_more_than_min_votes():
    assert not f1_vote_count(uniform(6)).accepted
    verdict = f1_vote_count(uniform(7))
    assert verdict.accepted
    assert verdict.rejecting_filter is None
    rejected = f1_vote_count(uniform(6))
    assert rejected.rejecting_filter is Filter.VOTE_COUNT
    assert (rejected.measured_value, rejected.threshold_value) == (6.0, 6.0)


def test_f2_compares_against_the_pattern_feature_count():
    g = uniform(4, adjacency=0.5)
    assert f2_adjacency_sum(g, 400).accepted
    assert not f2_adjacency_sum(g, 401).accepted
    assert f2_adjacency_sum(g, 401).threshold_value == pytest.approx(2.005)


def test_f3_scale_variance():
    assert f3_scale_variance(uniform(5, quotient=1.2)).accepted
    assert f3_scale_variance(group([vote(0, quotient=9.0)])).accepted

    outlier = group([vote(k, quotient=q) for k, q in enumerate([0.1, 0.1, 0.1, 3.0])])
    verdict = f3_scale_variance(outlier)
    assert not verdict.accepted
    assert verdict.measured_value == pytest.approx(1.576875)
    assert verdict.threshold_value == pytest.approx(0.6 * 2.2575)


def test_f3_reference_variants():
    spread = group([vote(k, quotient=q) for k, q in enumerate([0.8, 1.0, 1.4])])
    # variance 0.0622 against 0.6 * 1.2 and 0.6 * 1.1378
    assert f3_scale_variance(spread).accepted
    assert f3_scale_variance(spread, CascadeConfig(scale_variance_reference="square_of_mean")).accepted
    tight = CascadeConfig(scale_var_factor=0.05, scale_variance_reference="square_of_mean")
    assert not f3_scale_variance(spread, tight).accepted


def test_f4_rotation_variance():
    assert f4_rotation_variance(uniform(4, rotation=45.0)).accepted
    quarter = group([vote(0, rotation=0.0), vote(1, rotation=90.0)])
    assert f4_rotation_variance(quarter).measured_value == pytest.approx(0.5)
    assert f4_rotation_variance(quarter).accepted
    assert not f4_rotation_variance(quarter, CascadeConfig(rot_var_factor=0.4)).accepted


def test_f4_rejects_cancelling_rotations():
    opposite = group([vote(0, rotation=0.0), vote(1, rotation=180.0)])
    assert not f4_rotation_variance(opposite).accepted
    spread = group([vote(k, rotation=r) for k, r in enumerate([0.0, 120.0, -120.0])])
    assert f4_rotation_variance(spread).rejecting_filter is Filter.ROTATION_VARIANCE


def test_f4_limit_matches_the_scale_filter_factor():
    assert CascadeConfig().rot_var_factor == CascadeConfig().scale_var_factor == 0.6
    # two directions 120 degrees apart keep a resultant of 0.5, variance 0.75
    wide = group([vote(0, rotation=0.0), vote(1, rotation=120.0)])
    verdict = f4_rotation_variance(wide)
    assert verdict.measured_value == pytest.approx(0.75)
    assert verdict.threshold_value == pytest.approx(0.6)
    assert not verdict.accepted
    assert f4_rotation_variance(wide, CascadeConfig(rot_var_factor=0.8)).accepted


def test_f4_crosses_the_wrap_around():
    around = group([vote(k, rotation=r) for k, r in enumerate([179.0, -179.0, 178.0, -178.0])])
    assert f4_rotation_variance(around).measured_value == pytest.approx(0.0, abs=1e-3)


def test_f5_binary_luminance():
    pattern = luminance_set([10, 20, 30, 40])
    same_order = luminance_set([50, 60, 70, 80])
    reversed_order = luminance_set([80, 70, 60, 50])
    g = uniform(4)
    assert f5_binary_luminance(g, pattern, same_order).accepted
    verdict = f5_binary_luminance(g, pattern, reversed_order)
    assert not verdict.accepted
    assert verdict.measured_value == 1.0


def test_f5_fraction_boundary():
    pattern = luminance_set([10, 20, 30, 40, 50])
    # one swapped neighbour pair flips 1 of 10 bits, two pairs 2 of 10
    one = luminance_set([20, 10, 30, 40, 50])
    assert f5_binary_luminance(uniform(5), pattern, one).measured_value == pytest.approx(0.1)
    assert f5_binary_luminance(uniform(5), pattern, one).accepted
    # reversing three of five flips 3 of 10
    three = luminance_set([30, 20, 10, 40, 50])
    assert not f5_binary_luminance(uniform(5), pattern, three).accepted


def test_f5_single_vote_passes():
    pattern = luminance_set([10])
    assert f5_binary_luminance(uniform(1), pattern, pattern).accepted


@pytest.fixture(scope="module")
def pasted(pattern_art):
    canvas = np.full((200, 300, 3), 100, dtype=np.uint8)
    canvas[40:160, 50:210] = pattern_art.data
    return RasterImage(canvas)


def test_f6_accepts_the_exact_crop(pattern_art, pasted):
    env = Envelope(50 + 79.5, 40 + 59.5, 160, 120)
    verdict = f6_global_ncc(env, pasted, pattern_art)
    assert verdict.accepted
    assert verdict.measured_value == pytest.approx(1.0)


def test_f6_rejects_an_inverted_crop(pattern_art, pasted):
    negative = RasterImage(255 - pasted.data)
    env = Envelope(50 + 79.5, 40 + 59.5, 160, 120)
    verdict = f6_global_ncc(env, negative, pattern_art)
    assert not verdict.accepted
    assert verdict.measured_value == pytest.approx(0.0)


def test_f6_rejects_an_envelope_off_the_scene(pattern_art, pasted):
    verdict = f6_global_ncc(Envelope(400, 50, 160, 120), pasted, pattern_art)
    assert not verdict.accepted
    assert verdict.rejecting_filter is Filter.GLOBAL_NCC


def test_f6_channel_rule(pattern_art, pasted):
    mixed = pasted.data.copy()
    mixed[:, :, 0] = 255 - mixed[:, :, 0]
    env = Envelope(50 + 79.5, 40 + 59.5, 160, 120)
    strict = f6_global_ncc(env, RasterImage(mixed), pattern_art)
    lenient = f6_global_ncc(env, RasterImage(mixed), pattern_art, CascadeConfig(ncc_channel_rule="mean"))
    assert not strict.accepted
    assert lenient.accepted
    assert lenient.measured_value == pytest.approx(2 / 3)


@pytest.fixture
def context(pattern_art, pasted):
    features = luminance_set(list(range(10, 90, 10)))
    return CascadeContext(
        pattern_features=features,
        scene_features=features,
        pattern_image=pattern_art,
        scene_image=pasted,
        pattern_feature_count=100,
        envelope=Envelope(50 + 79.5, 40 + 59.5, 160, 120),
    )


def test_run_cascade_accepts(context):
    g = uniform(8)
    assert run_cascade(g, 1, context).accepted
    assert run_cascade(g, 2, context).accepted


def test_run_cascade_stops_at_the_first_rejection(context):
    g = group([vote(k, quotient=q) for k, q in enumerate([0.1] * 3 + [3.0])])
    verdict = run_cascade(g, 1, context)
    assert verdict.rejecting_filter is Filter.VOTE_COUNT
    verdict = run_cascade(g, 1, context, CascadeConfig(disabled_filters=(1,)))
    assert verdict.rejecting_filter is Filter.SCALE_VARIANCE


def test_run_cascade_skips_disabled_filters(context):
    g = uniform(3)
    assert run_cascade(g, 1, context, CascadeConfig(disabled_filters=(1,))).accepted


def test_run_cascade_pass_two_needs_an_envelope(context):
    bare = CascadeContext(
        context.pattern_features, context.scene_features, context.pattern_image,
        context.scene_image, context.pattern_feature_count,
    )
    with pytest.raises(exception.InvalidParameterError):
        run_cascade(uniform(8), 2, bare)
    assert run_cascade(uniform(8), 2, bare, CascadeConfig(disabled_filters=(6,))).accepted


def test_run_cascade_pass_id():
    with pytest.raises(exception.InvalidParameterError):
        run_cascade(uniform(8), 3, None)


def test_f2_small_pattern():
    assert f2_adjacency_sum(uniform(2, adjacency=0.03), 10).accepted


def test_f3_two_clusters_still_pass():
    g = group([vote(k, quotient=q) for k, q in enumerate([0.5, 1.5])])
    verdict = f3_scale_variance(g)
    assert verdict.accepted
    assert verdict.measured_value == pytest.approx(0.25)
    assert verdict.threshold_value == pytest.approx(0.75)


def test_f4_small_spread_around_zero():
    g = group([vote(0, rotation=10.0), vote(1, rotation=-10.0)])
    assert f4_rotation_variance(g).accepted


def test_f5_one_of_three_pairs_differs():
    pattern = luminance_set([10, 20, 30])
    scene = luminance_set([5, 25, 15])
    verdict = f5_binary_luminance(uniform(3), pattern, scene)
    assert not verdict.accepted
    assert verdict.measured_value == pytest.approx(1 / 3)


@pytest.fixture(scope="module")
def disabled_sets():
    every = [f.value for f in Filter]
    return [
        frozenset(chosen)
        for size in range(len(every) + 1)
        for chosen in itertools.combinations(every, size)
    ]


def test_disabling_a_filter_never_rejects_an_accepted_group(pattern_art, pasted, disabled_sets):
    rng = np.random.default_rng(31)
    configs = {d: CascadeConfig(disabled_filters=tuple(sorted(d))) for d in disabled_sets}
    for _ in range(30):
        values = rng.choice(256, size=12, replace=False).tolist()
        order = rng.permutation(12)
        count = int(rng.integers(1, 13))
        votes = [
            vote(k, adjacency=rng.uniform(0.0, 1.0), quotient=rng.uniform(0.5, 2.0),
                 rotation=rng.uniform(-60.0, 60.0), scene_idx=int(order[k]))
            for k in range(count)
        ]
        scene_values = [values[j] for j in np.argsort(order)]
        if rng.random() < 0.5:
            scene_values = rng.permutation(scene_values).tolist()
        dx, dy = rng.uniform(-20.0, 20.0, size=2)
        ctx = CascadeContext(
            pattern_features=luminance_set(values),
            scene_features=luminance_set(scene_values),
            pattern_image=pattern_art,
            scene_image=pasted,
            pattern_feature_count=300,
            envelope=Envelope(129.5 + dx, 99.5 + dy, 160, 120),
        )
        for pass_id in (1, 2):
            accepted = {d: run_cascade(group(votes), pass_id, ctx, configs[d]).accepted for d in disabled_sets}
            for d in disabled_sets:
                for f in Filter:
                    if accepted[d]:
                        assert accepted[d | {f.value}]
