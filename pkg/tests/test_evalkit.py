import json
import math
from dataclasses import replace

import numpy as np
import pytest

from shelfscan.engine import exception
from shelfscan.engine.evalkit import (
    GroundTruth,
    Metrics,
    Placement,
    SceneSpec,
    SuiteSpec,
    generate_pattern,
    generate_scene,
    load_suite,
    look_alike,
    run_suite,
    score,
    suite_patterns,
    suite_scene,
    validate_suite,
)
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage, rgb_to_hsl_array
from shelfscan.engine.pipeline import DetectionReport, Occurrence, PatternDiagnostics


def occurrence(pattern_id, x, y, strength):
    return Occurrence(pattern_id, Envelope(x, y, 160, 120), strength, strength, 1, 10)


def placement(pattern_id, x, y):
    return Placement(pattern_id, x, y, 1.0, 0.0, 160, 120)


def report(occurrences, patterns):
    return DetectionReport("scene", list(occurrences), {p: PatternDiagnostics() for p in patterns})


def test_generate_pattern_is_seeded():
    first = generate_pattern(np.random.default_rng(1), 64, 48)
    second = generate_pattern(np.random.default_rng(1), 64, 48)
    assert first.shape == (64, 48)
    assert first.channels == 3
    assert first.data.dtype == np.uint8
    assert np.array_equal(first.data, second.data)


def test_generate_scene_is_seeded(pattern_art):
    spec = SceneSpec({"a": pattern_art}, placements=2, width=480, height=360, seed=4)
    first_image, first_truth = generate_scene(spec)
    second_image, second_truth = generate_scene(spec)
    assert np.array_equal(first_image.data, second_image.data)
    assert first_truth == second_truth
    assert first_image.shape == (480, 360)


def test_generate_scene_placements(pattern_art, second_art):
    spec = SceneSpec({"b": second_art, "a": pattern_art}, placements=3, width=640, height=480,
                     seed=9, scale_range=(0.6, 1.0), rotation_range=(-10.0, 10.0))
    _, truth = generate_scene(spec)
    assert [p.pattern_id for p in truth.placements] == ["a", "b", "a"]
    for p in truth.placements:
        assert 0.6 <= p.scale <= 1.0
        assert -10.0 <= p.rotation <= 10.0
        radius = 0.5 * math.hypot(p.pattern_w, p.pattern_h) * p.scale
        assert radius <= p.center_x <= 640 - radius
        assert radius <= p.center_y <= 480 - radius
    # non-overlapping bounding circles
    for i, a in enumerate(truth.placements):
        for b in truth.placements[i + 1:]:
            ra = 0.5 * math.hypot(a.pattern_w, a.pattern_h) * a.scale
            rb = 0.5 * math.hypot(b.pattern_w, b.pattern_h) * b.scale
            assert math.hypot(a.center_x - b.center_x, a.center_y - b.center_y) >= ra + rb


def test_identity_placement_is_pixel_exact(pattern_art):
    spec = SceneSpec({"a": pattern_art}, placements=1, width=400, height=300, seed=2,
                     scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0), noise_sigma=0.0)
    image, truth = generate_scene(spec)
    p = truth.placements[0]
    x0 = int(round(p.center_x - (pattern_art.width - 1) / 2.0))
    y0 = int(round(p.center_y - (pattern_art.height - 1) / 2.0))
    window = image.data[y0:y0 + pattern_art.height, x0:x0 + pattern_art.width]
    assert np.array_equal(window, pattern_art.data)


@pytest.mark.parametrize(
    "changes",
    [
        {"scale_range": (0.4, 1.0)},
        {"scale_range": (1.0, 2.5)},
        {"rotation_range": (-45.0, 0.0)},
        {"patterns": {}},
        {"color_cast": 1.0},
    ],
)
def test_generate_scene_rejects_bad_specs(pattern_art, changes):
    values = {"patterns": {"a": pattern_art}, "placements": 1, "width": 400, "height": 300}
    values.update(changes)
    with pytest.raises(exception.InvalidParameterError):
        generate_scene(SceneSpec(**values))


def test_generate_scene_overflow(pattern_art):
    spec = SceneSpec({"a": pattern_art}, placements=10, width=240, height=240,
                     scale_range=(0.8, 0.8))
    with pytest.raises(exception.PlacementOverflowError):
        generate_scene(spec)


def test_color_cast_keeps_the_layout(pattern_art):
    spec = SceneSpec({"a": pattern_art}, placements=2, width=480, height=360, seed=5,
                     noise_sigma=0.0)
    plain_image, plain_truth = generate_scene(spec)
    cast_image, cast_truth = generate_scene(replace(spec, color_cast=0.5))
    assert cast_truth == plain_truth
    plain, cast = plain_image.rgb(), cast_image.rgb()
    # one gain per channel, visible wherever the channel is not clipped
    ratios = []
    for c in range(3):
        usable = (plain[:, :, c] > 20) & (cast[:, :, c] > 0) & (cast[:, :, c] < 255)
        ratios.append(np.median(cast[:, :, c][usable] / plain[:, :, c][usable]))
    assert max(ratios) - min(ratios) > 0.05
    assert all(0.5 <= r <= 1.5 for r in ratios)


def test_look_alike_mosaic_moves_every_tile(pattern_art):
    mosaic = look_alike(pattern_art, "mosaic", np.random.default_rng(0))
    assert mosaic.shape == pattern_art.shape
    th, tw = pattern_art.height // 3, pattern_art.width // 3

    def tiles(image):
        return [image.data[r * th:(r + 1) * th, c * tw:(c + 1) * tw].tobytes()
                for r in range(3) for c in range(3)]

    original, shuffled = tiles(pattern_art), tiles(mosaic)
    assert sorted(original) == sorted(shuffled)
    assert all(shuffled[k] != original[k] for k in range(9))
    # the untiled right column is left as it was
    assert np.array_equal(mosaic.data[:, 3 * tw:], pattern_art.data[:, 3 * tw:])


def test_look_alike_inverted_mirrors_lightness_only(pattern_art):
    inverted = look_alike(pattern_art, "inverted", np.random.default_rng(0))
    before, after = rgb_to_hsl_array(pattern_art.rgb()), rgb_to_hsl_array(inverted.rgb())
    np.testing.assert_allclose(after[..., 2], 255.0 - before[..., 2], atol=1e-9)
    np.testing.assert_allclose(after[..., 1], before[..., 1], atol=1e-9)
    chromatic = before[..., 1] > 0
    np.testing.assert_allclose(after[..., 0][chromatic], before[..., 0][chromatic], atol=1e-6)


def test_look_alike_of_gray():
    gray = RasterImage(np.array([[0, 100, 255]], dtype=np.uint8))
    inverted = look_alike(gray, "inverted", np.random.default_rng(0))
    assert inverted.rgb()[0, :, 0].tolist() == [255.0, 155.0, 0.0]


@pytest.mark.parametrize(
    "kind, grid",
    [
        ("mirror", 3),
        ("mosaic", 1),
        ("mosaic", 200),
    ],
)
def test_look_alike_errors(pattern_art, kind, grid):
    with pytest.raises(exception.InvalidParameterError):
        look_alike(pattern_art, kind, np.random.default_rng(0), grid)


def test_ground_truth_document(tmp_path):
    truth = GroundTruth("s", 640, 480, (placement("a", 100.5, 80.0),))
    path = truth.write(tmp_path / "truth.json")
    document = json.loads(path.read_text())
    assert document["placements"][0]["center"] == [100.5, 80.0]
    assert GroundTruth.from_dict(document) == truth
    with pytest.raises(exception.SchemaError):
        GroundTruth.from_dict({"scene": "s", "width": 1, "height": 1, "placements": [{}]})


def test_match_radius_follows_the_placed_size():
    assert placement("a", 0, 0).match_radius == 5
    assert Placement("a", 0, 0, 2.0, 0.0, 160, 120).match_radius == 9
    assert Placement("a", 0, 0, 0.5, 0.0, 160, 120).match_radius == 3


def test_score_perfect_report():
    truth = GroundTruth("s", 640, 480, (placement("a", 100, 100), placement("b", 400, 100)))
    found = report([occurrence("a", 100, 100, 0.9), occurrence("b", 401, 100, 0.8)], ["a", "b"])
    metrics = score(found, truth)
    assert metrics.detection_rate == 1.0
    assert metrics.false_detection_chance == 0.0
    assert metrics.avg_false_detections is None
    assert metrics.mean_localization_error == pytest.approx(0.5)


def test_score_counts_false_positives_per_process():
    truth = GroundTruth("s", 640, 480, (
        placement("a", 100, 100), placement("a", 300, 100), placement("b", 500, 100),
    ))
    found = report([
        occurrence("a", 101, 100, 0.9),
        occurrence("a", 301, 102, 0.8),
        occurrence("a", 600, 400, 0.5),
        occurrence("c", 10, 10, 0.4),
    ], ["a", "b", "c"])
    metrics = score(found, truth)
    assert metrics.matched == 2
    assert metrics.detection_rate == pytest.approx(2 / 3)
    assert metrics.processes == 3
    assert metrics.processes_with_false == 2
    assert metrics.false_detection_chance == pytest.approx(2 / 3)
    assert metrics.avg_false_detections == 1.0
    assert metrics.mean_localization_error == pytest.approx((1 + math.sqrt(5)) / 2)
    assert metrics.localization_error_max == pytest.approx(math.sqrt(5))


def test_score_matches_one_to_one():
    truth = GroundTruth("s", 640, 480, (placement("a", 100, 100),))
    found = report([
        occurrence("a", 101, 100, 0.5),
        occurrence("a", 100, 100, 0.9),
        occurrence("a", 102, 100, 0.2),
    ], ["a"])
    metrics = score(found, truth)
    assert metrics.matched == 1
    # the strongest claims the placement
    assert metrics.localization_error_sum == 0.0
    assert metrics.false_positives == 2
    assert metrics.false_detection_chance == 1.0
    assert metrics.avg_false_detections == 2.0


def test_score_match_radius_override():
    truth = GroundTruth("s", 640, 480, (placement("a", 100, 100),))
    found = report([occurrence("a", 110, 100, 0.9)], ["a"])
    assert score(found, truth).matched == 0
    assert score(found, truth, match_radius=12).matched == 1


def test_score_without_placements():
    metrics = score(report([], ["a"]), GroundTruth("s", 10, 10))
    assert metrics.detection_rate is None
    assert metrics.false_detection_chance == 0.0
    assert metrics.processes == 1


def test_metrics_add_up():
    total = Metrics(2, 1, 1, 0, 0, 1.5, 1.5) + Metrics(3, 3, 2, 1, 4, 3.0, 2.0)
    assert (total.placements, total.matched, total.processes) == (5, 4, 3)
    assert total.localization_error_max == 2.0
    assert total.mean_localization_error == pytest.approx(4.5 / 4)
    assert total.to_dict()["detection_rate"] == pytest.approx(0.8)


def test_validate_suite():
    suite = validate_suite({"name": "tiny", "scenes": 2, "placements": [1, 2], "scale_range": [1, 1.5]})
    assert suite.placements == (1, 2)
    assert suite.scale_range == (1.0, 1.5)
    assert suite.exact_nn is True


@pytest.mark.parametrize(
    "document",
    [
        [],
        {"scenes": 2},
        {"name": "x", "colour": "red"},
        {"name": "x", "scenes": 0},
        {"name": "x", "scenes": True},
        {"name": "x", "placements": [3]},
        {"name": "x", "placements": [3, 1]},
        {"name": "x", "placements": [0, 0]},
        {"name": "x", "scale_range": [0.2, 1.0]},
        {"name": "x", "rotation_range": [-40, 10]},
        {"name": "x", "pattern_size": [8, 8]},
        {"name": "x", "negative": "no"},
        {"name": "x", "look_alikes": -1},
        {"name": "x", "look_alikes": 1.5},
        {"name": "x", "color_cast": 1.5},
    ],
)
def test_validate_suite_errors(document):
    with pytest.raises(exception.SuiteSpecError):
        validate_suite(document)


def test_load_suite_errors(tmp_path):
    broken = tmp_path / "suite.json"
    broken.write_text("{")
    with pytest.raises(exception.SuiteSpecError):
        load_suite(broken)
    with pytest.raises(exception.SuiteSpecError):
        load_suite(tmp_path / "missing.json")


def test_suite_scenes_are_reproducible():
    suite = SuiteSpec("rep", seed=3, scenes=2, width=480, height=360, patterns=2,
                      pattern_size=(96, 72), placements=(1, 3))
    patterns = suite_patterns(suite)
    assert sorted(patterns) == ["p0", "p1"]
    first, again = suite_scene(suite, 1, patterns), suite_scene(suite, 1, patterns)
    assert first.scene_id == "rep-001"
    assert first.seed == again.seed
    assert 1 <= first.placements <= 3


def test_negative_suite_scenes_plant_only_distractors():
    suite = SuiteSpec("neg", scenes=1, width=480, height=360, patterns=1,
                      pattern_size=(96, 72), placements=(2, 2), negative=True)
    spec = suite_scene(suite, 0, suite_patterns(suite))
    assert spec.placements == 0
    assert len(spec.distractors) == 2
    _, truth = generate_scene(spec)
    assert truth.placements == ()


def test_suite_look_alikes_derive_from_the_patterns():
    suite = SuiteSpec("neg", scenes=1, width=640, height=480, patterns=1,
                      pattern_size=(96, 72), placements=(1, 1), look_alikes=2, negative=True)
    patterns = suite_patterns(suite)
    spec = suite_scene(suite, 0, patterns)
    assert len(spec.distractors) == 3
    expected = look_alike(patterns["p0"], "inverted", np.random.default_rng(0))
    assert np.array_equal(spec.distractors[2].data, expected.data)
    mosaic = spec.distractors[1]
    assert sorted(mosaic.data.ravel().tolist()) == sorted(patterns["p0"].data.ravel().tolist())
    _, truth = generate_scene(spec)
    assert truth.placements == ()


def test_run_suite_collects_rows():
    suite = SuiteSpec("tiny", seed=1, scenes=2, width=400, height=300, patterns=2,
                      placements=(1, 1), pattern_size=(96, 72), scale_range=(1.0, 1.2),
                      rotation_range=(-5.0, 5.0), noise_sigma=2.0)
    result = run_suite(suite)
    assert [row.scene_id for row in result.rows] == ["tiny-000", "tiny-001"]
    assert result.metrics.placements == 2
    assert result.metrics.processes == 4
    assert all(row.processes == 2 for row in result.rows)
    assert result.metrics.matched == sum(row.matched for row in result.rows)
