import json
import math
from dataclasses import replace

import numpy as np
import pytest

from shelfscan.engine import exception
from shelfscan.engine.evalkit import generate_pattern, look_alike
from shelfscan.engine.filtercascade import CascadeConfig, Filter
from shelfscan.engine.geometry import Envelope
from shelfscan.engine.imagecore import RasterImage, resize_bilinear
from shelfscan.engine.matching import MatchConfig
from shelfscan.engine.pipeline import (
    DetectionReport,
    Detector,
    Occurrence,
    PatternDiagnostics,
    PatternEntry,
    SceneContext,
    build_size_cascade,
    consolidate,
    detect_single_pattern,
    run_multi_product,
    run_two_phase,
)
from shelfscan.utils.config import PipelineConfig, RunConfig

EXACT = RunConfig(matching=MatchConfig(exact_nn=True))


def paste(art, width, height, offsets, fill=90):
    canvas = np.full((height, width, 3), fill, dtype=np.uint8)
    for x, y in offsets:
        canvas[y:y + art.height, x:x + art.width] = art.data
    return RasterImage(canvas)


def near(occurrence, x, y, tolerance=3.0):
    return math.hypot(occurrence.envelope.center_x - x, occurrence.envelope.center_y - y) <= tolerance


def occurrence(pattern_id, x, adjacency_sum, base=10, width=10.0):
    return Occurrence(
        pattern_id=pattern_id,
        envelope=Envelope(x, 0.0, width, 10.0),
        adjacency_sum=adjacency_sum,
        normalized_adjacency=adjacency_sum / base,
        phase=1,
        vote_count=10,
        entry_id=f"{pattern_id}@0",
        base_feature_count=base,
    )


@pytest.fixture(scope="module")
def art_entry(pattern_art):
    return PatternEntry.from_image(pattern_art, "art", EXACT.extractor)


@pytest.fixture(scope="module")
def single_scene(pattern_art):
    return SceneContext.from_image(paste(pattern_art, 320, 240, [(100, 60)]), "single")


@pytest.fixture(scope="module")
def double_scene(pattern_art):
    return SceneContext.from_image(paste(pattern_art, 480, 240, [(20, 60), (300, 60)]), "double")


def test_pattern_entry_from_image(pattern_art, art_entry):
    assert art_entry.entry_id == "art@0"
    assert art_entry.scale_step == 0
    assert art_entry.parent_id is None
    assert art_entry.base_feature_count == len(art_entry.features)
    assert (art_entry.width, art_entry.height, art_entry.max_dim) == (160, 120, 160)
    assert art_entry.center == (79.5, 59.5)


def test_size_cascade_halves_down_to_min_dim():
    art = generate_pattern(np.random.default_rng(3), 400, 300)
    base = PatternEntry.from_image(art, "big")
    entries = build_size_cascade(base, min_dim=100)
    assert [e.entry_id for e in entries] == ["big@0", "big@1", "big@2"]
    assert [e.image.shape for e in entries] == [(400, 300), (200, 150), (100, 75)]
    assert all(e.base_feature_count == base.base_feature_count for e in entries)
    assert all(e.parent_id == "big" for e in entries[1:])


def test_size_cascade_of_a_small_pattern(art_entry):
    assert build_size_cascade(art_entry, min_dim=100) == [art_entry]


def test_size_cascade_with_doubled_entries(art_entry):
    entries = build_size_cascade(art_entry, min_dim=64, upscale_steps=2)
    assert [e.entry_id for e in entries] == ["art@-2", "art@-1", "art@0", "art@1"]
    assert [e.image.shape for e in entries] == [(640, 480), (320, 240), (160, 120), (80, 60)]
    assert [e.scale_step for e in entries] == [-2, -1, 0, 1]
    assert all(len(e.features) > 0 for e in entries)


def test_default_cascade_covers_the_scale_range_of_a_small_pattern(art_entry):
    pipeline = PipelineConfig()
    entries = build_size_cascade(art_entry, pipeline.min_dim, upscale_steps=pipeline.upscale_steps)
    low, high = MatchConfig().scale_quotient_range
    # entry k accepts objects whose scale lies strictly inside its gate times 2 ** -k
    covered = sorted((low * 2.0 ** -e.scale_step, high * 2.0 ** -e.scale_step) for e in entries)
    assert covered[0][0] <= 0.5 and covered[-1][1] >= 2.0
    assert all(a[1] == b[0] for a, b in zip(covered, covered[1:]))


def test_size_cascade_rejects_negative_upscaling(art_entry):
    with pytest.raises(exception.InvalidValueError):
        build_size_cascade(art_entry, upscale_steps=-1)


def test_detect_single_pattern(single_scene, art_entry):
    diagnostics = PatternDiagnostics()
    found = detect_single_pattern(single_scene, art_entry, EXACT, diagnostics=diagnostics)
    assert len(found) == 1
    occ = found[0]
    assert near(occ, 179.5, 119.5)
    assert occ.envelope.width == pytest.approx(160, rel=0.15)
    assert occ.envelope.height == pytest.approx(120, rel=0.15)
    assert abs(occ.envelope.rotation) < 10.0
    assert occ.vote_count > 6
    assert occ.phase == 1
    assert occ.entry_id == "art@0"
    assert occ.normalized_adjacency == pytest.approx(occ.adjacency_sum / len(art_entry.features))
    assert diagnostics.entries == 1
    assert diagnostics.accepted == 1
    assert diagnostics.propositions >= 1


def test_detect_single_pattern_finds_every_copy(double_scene, art_entry):
    found = detect_single_pattern(double_scene, art_entry, EXACT)
    assert len(found) == 2
    centres = sorted((o.envelope.center_x, o.envelope.center_y) for o in found)
    assert centres[0] == pytest.approx((99.5, 119.5), abs=3.0)
    assert centres[1] == pytest.approx((379.5, 119.5), abs=3.0)


def test_detect_single_pattern_feeds_the_debug_sink(single_scene, art_entry):
    received = []
    detect_single_pattern(single_scene, art_entry, EXACT, phase=2,
                          debug_sink=lambda name, image: received.append((name, image)))
    assert [name for name, _ in received] == ["art_2_0"]
    assert received[0][1].shape == (320, 240)


def test_featureless_pattern_finds_nothing(single_scene):
    flat = PatternEntry.from_image(RasterImage(np.full((50, 50), 128, dtype=np.uint8)), "flat")
    diagnostics = PatternDiagnostics()
    assert detect_single_pattern(single_scene, flat, EXACT, diagnostics=diagnostics) == []
    assert diagnostics.votes == 0
    assert run_two_phase(single_scene, flat, EXACT) == []


def test_run_two_phase_redetects_with_the_scene_crop(single_scene, art_entry):
    diagnostics = PatternDiagnostics()
    found = run_two_phase(single_scene, art_entry, EXACT, diagnostics)
    assert len(found) == 1
    assert near(found[0], 179.5, 119.5, 3.0)
    assert diagnostics.phases == 2
    # doubled, original and halved entries, then the scene crop
    assert diagnostics.entries == 4
    assert found[0].entry_id in {"art@0", "art#scene"}


@pytest.mark.parametrize(
    "scale, entry_id",
    [
        (1.6, "art@-1"),
        (0.6, "art@1"),
    ],
)
def test_cascade_entries_find_objects_outside_the_original_gate(pattern_art, scale, entry_id):
    size = (round(pattern_art.width * scale), round(pattern_art.height * scale))
    scene = SceneContext.from_image(
        paste(resize_bilinear(pattern_art, *size, antialias=True), 480, 360, [(40, 50)]), "scaled"
    )
    base = PatternEntry.from_image(pattern_art, "art")
    cfg = replace(EXACT, pipeline=replace(EXACT.pipeline, two_phase=False))
    found = run_two_phase(scene, base, cfg)
    assert len(found) == 1
    assert found[0].entry_id == entry_id
    assert near(found[0], 40 + (size[0] - 1) / 2, 50 + (size[1] - 1) / 2, 3.0)


def test_run_two_phase_can_stop_after_phase_one(single_scene, art_entry):
    cfg = replace(EXACT, pipeline=replace(EXACT.pipeline, two_phase=False))
    diagnostics = PatternDiagnostics()
    found = run_two_phase(single_scene, art_entry, cfg, diagnostics)
    assert len(found) == 1
    assert found[0].phase == 1
    assert diagnostics.phases == 1


def test_late_filters_reject_a_tile_mosaic(pattern_art, art_entry):
    mosaic = look_alike(pattern_art, "mosaic", np.random.default_rng(2))
    scene = SceneContext.from_image(paste(mosaic, 320, 240, [(100, 60)]), "mosaic")
    assert run_two_phase(scene, art_entry, EXACT) == []

    loose = replace(EXACT, cascade=CascadeConfig(disabled_filters=(5, 6)))
    diagnostics = PatternDiagnostics()
    assert len(run_two_phase(scene, art_entry, loose, diagnostics)) >= 1
    assert diagnostics.accepted >= 1


def test_run_multi_product(single_scene, art_entry, second_art):
    other = PatternEntry.from_image(second_art, "other")
    report = run_multi_product(single_scene, [art_entry, other], EXACT)
    assert report.scene_id == "single"
    assert set(report.diagnostics) == {"art", "other"}
    best = report.occurrences[0]
    assert best.pattern_id == "art"
    assert near(best, 179.5, 119.5, 3.0)
    strengths = [o.normalized_adjacency for o in report.occurrences]
    assert strengths == sorted(strengths, reverse=True)


def test_run_multi_product_is_independent_of_workers(single_scene, art_entry, second_art):
    other = PatternEntry.from_image(second_art, "other")
    threaded = replace(EXACT, pipeline=replace(EXACT.pipeline, workers=2))
    serial = run_multi_product(single_scene, [art_entry, other], EXACT)
    parallel = run_multi_product(single_scene, [art_entry, other], threaded)
    assert parallel.to_dict() == serial.to_dict()


@pytest.fixture(scope="module")
def default_count(double_scene, art_entry):
    return len(run_multi_product(double_scene, [art_entry], EXACT).occurrences)


@pytest.mark.parametrize(
    "stricter",
    [
        {"min_votes": 20},
        {"adjacency_divisor": 20.0},
        {"scale_var_factor": 0.2},
        {"rot_var_factor": 0.2},
        {"hamming_reject_frac": 0.1},
        {"ncc_threshold": 0.8},
        {"min_votes": 20, "adjacency_divisor": 20.0, "ncc_threshold": 0.8},
    ],
)
def test_stricter_thresholds_never_add_detections(double_scene, art_entry, default_count, stricter):
    cfg = replace(EXACT, cascade=CascadeConfig(**stricter))
    report = run_multi_product(double_scene, [art_entry], cfg)
    assert default_count == 2
    assert len(report.occurrences) <= default_count


def test_run_multi_product_needs_patterns(single_scene):
    with pytest.raises(exception.EmptyPatternListError):
        run_multi_product(single_scene, [])


def test_detector(pattern_art):
    detector = Detector(EXACT)
    report = detector.detect(paste(pattern_art, 320, 240, [(100, 60)]), {"art": pattern_art}, "shelf")
    assert report.scene_id == "shelf"
    assert [o.pattern_id for o in report.occurrences][:1] == ["art"]


def test_consolidate_same_pattern_sums_adjacency():
    weak, strong = occurrence("a", 0.0, 3.0), occurrence("a", 2.0, 5.0)
    merged = consolidate([weak, strong], same_pattern=True)
    assert len(merged) == 1
    assert merged[0].envelope == strong.envelope
    assert merged[0].adjacency_sum == 8.0
    assert merged[0].normalized_adjacency == 0.8


def test_consolidate_same_pattern_keeps_other_products():
    merged = consolidate([occurrence("a", 0.0, 3.0), occurrence("b", 2.0, 5.0)], same_pattern=True)
    assert [o.pattern_id for o in merged] == ["b", "a"]


def test_consolidate_across_products_keeps_the_best():
    merged = consolidate(
        [occurrence("a", 0.0, 3.0), occurrence("b", 2.0, 5.0, base=100)], same_pattern=False
    )
    assert [o.pattern_id for o in merged] == ["a"]
    assert merged[0].adjacency_sum == 3.0


def test_consolidate_groups_transitively():
    # 0 overlaps 3 and 3 overlaps 6, but 0 and 6 do not overlap
    chain = [occurrence("a", 0.0, 1.0), occurrence("a", 3.0, 2.0), occurrence("a", 6.0, 1.5)]
    merged = consolidate(chain, same_pattern=True)
    assert len(merged) == 1
    assert merged[0].envelope.center_x == 3.0
    assert merged[0].adjacency_sum == 4.5


def test_consolidate_keeps_separate_detections():
    apart = [occurrence("a", 0.0, 1.0), occurrence("a", 4.0, 2.0)]
    merged = consolidate(apart, same_pattern=True)
    assert [o.envelope.center_x for o in merged] == [4.0, 0.0]


def test_consolidate_is_idempotent():
    mixed = [
        occurrence("a", 0.0, 3.0), occurrence("b", 2.0, 5.0, base=20),
        occurrence("a", 30.0, 1.0), occurrence("c", 31.0, 4.0), occurrence("b", 60.0, 2.0),
    ]
    once = consolidate(mixed, same_pattern=False)
    assert consolidate(once, same_pattern=False) == once
    assert consolidate([], same_pattern=False) == []


def test_diagnostics():
    first, second = PatternDiagnostics(), PatternDiagnostics()
    first.reject(Filter.VOTE_COUNT)
    second.reject(Filter.VOTE_COUNT)
    second.reject(Filter.GLOBAL_NCC)
    second.votes = 12
    first.merge(second)
    document = first.to_dict()
    assert document["votes"] == 12
    assert document["rejections"] == {"f1": 2, "f2": 0, "f3": 0, "f4": 0, "f5": 0, "f6": 1}


def test_report_write(tmp_path):
    report = DetectionReport("shelf", [occurrence("a", 5.0, 2.0)], {"a": PatternDiagnostics()})
    path = report.write(tmp_path / "report.json")
    document = json.loads(path.read_text())
    assert document["scene"] == "shelf"
    assert document["occurrences"][0]["pattern"] == "a"
    assert document["occurrences"][0]["center"] == [5.0, 0.0]
    assert document["diagnostics"]["a"]["accepted"] == 0

    with pytest.raises(exception.OutputWriteError):
        report.write(tmp_path / "missing" / "report.json")
