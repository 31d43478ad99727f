import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasetrack.geometry import BBox, translate
from phasetrack.registration import Displacement, DisplacementTable, PairResult
from phasetrack.synth import NoiseModel, SynthConfig, corrupt, generate, random_walk
from phasetrack.tracker import (
    DETECTED,
    ESTIMATED,
    Detection,
    Head,
    Track,
    TrackElement,
    TrackerParams,
    associate,
    build_tracks,
    filter_tracks,
    greedy_match,
    project,
    tracks_from_detections,
    tracks_to_detections,
)


def pan_table(n, step=(0, 0), start=0, every=1):
    frames = [start + k * every for k in range(n)]
    pairs = [PairResult(a, b, Displacement(*step)) for a, b in zip(frames, frames[1:])]
    return DisplacementTable.from_pairs(pairs)


def brute_force_matching(overlap, threshold):
    """Among all one-to-one matchings over admissible pairs, the one whose
    descending list of overlaps is lexicographically largest."""
    rows, cols = overlap.shape
    best, best_pairs = None, []
    for k in range(min(rows, cols) + 1):
        for rs in itertools.combinations(range(rows), k):
            for cs in itertools.permutations(range(cols), k):
                pairs = list(zip(rs, cs))
                if any(overlap[r, c] < threshold for r, c in pairs):
                    continue
                key = sorted((overlap[r, c] for r, c in pairs), reverse=True)
                if best is None or key > best:
                    best, best_pairs = key, pairs
    return sorted(best_pairs)


# associate

def det(frame, x, y, w=10, h=10, score=0.9, label="tire"):
    return Detection(frame, label, BBox(x, y, w, h), score)


def test_associate_identical_boxes_match():
    m = associate([Head(0, BBox(0, 0, 10, 10), "tire")], [det(0, 0, 0)])
    assert m.pairs == [(0, 0)] and m.unmatched_tracks == [] and m.unmatched_detections == []


def test_associate_low_overlap_unmatched():
    m = associate([Head(0, BBox(0, 0, 10, 10), "tire")], [det(0, 8, 8)])
    assert m.pairs == [] and m.unmatched_tracks == [0] and m.unmatched_detections == [0]


def test_greedy_three_detection_example():
    overlap = np.array([[0.9, 0.6, 0.0], [0.0, 0.7, 0.0]])
    expected = brute_force_matching(overlap, 0.5)
    assert expected == [(0, 0), (1, 1)]
    assert sorted(greedy_match(overlap, 0.5)) == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_greedy_equals_brute_force_on_distinct_overlaps(rows, cols, seed):
    rng = np.random.default_rng(seed)
    overlap = rng.permutation(rows * cols).reshape(rows, cols) / (rows * cols)
    assert sorted(greedy_match(overlap, 0.5)) == brute_force_matching(overlap, 0.5)


def test_associate_through_boxes_matches_greedy_order():
    heads = [Head(0, BBox(0, 0, 10, 10), "tire"), Head(1, BBox(3, 0, 10, 10), "tire")]
    dets = [det(0, 0.5, 0), det(0, 2.5, 0), det(0, 40, 40)]
    m = associate(heads, dets)
    assert m.pairs == [(0, 0), (1, 1)]
    assert m.unmatched_detections == [2]


def test_associate_ties_prefer_score_then_track_id():
    heads = [Head(3, BBox(0, 0, 10, 10), "tire"), Head(1, BBox(0, 0, 10, 10), "tire")]
    dets = [det(0, 0, 0, score=0.5), det(0, 0, 0, score=0.8)]
    m = associate(heads, dets)
    # both IoU 1: detection with score 0.8 goes first and to track 1 (lower id)
    assert m.pairs == [(1, 1), (3, 0)]


def test_associate_is_class_aware():
    heads = [Head(0, BBox(0, 0, 10, 10), "bucket")]
    assert associate(heads, [det(0, 0, 0)]).pairs == []
    assert associate(heads, [det(0, 0, 0)], TrackerParams(class_aware=False)).pairs == [(0, 0)]


def test_associate_empty_inputs():
    m = associate([], [])
    assert (m.pairs, m.unmatched_tracks, m.unmatched_detections) == ([], [], [])


# project

def test_project_static_and_shifted():
    last = TrackElement(0, BBox(10, 10, 5, 5), DETECTED)
    assert project(last, pan_table(2)).box.as_tuple() == (10, 10, 5, 5)
    e = project(last, pan_table(2, (3, -2)))
    assert e.box.as_tuple() == (13, 8, 5, 5) and e.kind == ESTIMATED and e.frame == 1


def test_project_chain_matches_cumulative_displacement():
    table = pan_table(6, (2, 0))
    e = TrackElement(0, BBox(0, 0, 4, 4), DETECTED)
    for _ in range(5):
        e = project(e, table)
    assert e.box.as_tuple() == (10, 0, 4, 4)
    assert e.box == translate(BBox(0, 0, 4, 4), table[5])


def test_project_missing_frame():
    with pytest.raises(KeyError):
        project(TrackElement(9, BBox(0, 0, 4, 4), DETECTED), pan_table(3))
    with pytest.raises(KeyError):
        project(TrackElement(2, BBox(0, 0, 4, 4), DETECTED), pan_table(3))


# build_tracks

def test_single_object_every_frame():
    dets = {k: [det(k, 20, 20)] for k in range(10)}
    (t,) = build_tracks(dets, pan_table(10))
    assert (t.l, t.m, t.v) == (10, 10, 1.0)


def test_gap_filled_by_estimates():
    table = pan_table(8, (3, 1))
    dets = {k: [det(k, 20 + 3 * k, 10 + k)] for k in (0, 1, 2, 5, 6, 7)}
    (t,) = build_tracks(dets, table)
    assert [e.kind for e in t.elements] == [DETECTED] * 3 + [ESTIMATED] * 2 + [DETECTED] * 3
    assert t.frames == list(range(8))
    assert (t.l, t.m, t.v) == (6, 8, 0.75)
    # estimates sit where the camera motion puts them
    assert t.elements[3].box.as_tuple() == (29, 13, 10, 10)
    assert t.elements[4].box.as_tuple() == (32, 14, 10, 10)


def test_two_objects_keep_identity():
    table = pan_table(12, (-2, 1))
    dets = {k: [det(k, 10 - 2 * k + 40, 5 + k), det(k, 80 - 2 * k, 60 + k, score=0.7)] for k in range(12)}
    tracks = build_tracks(dets, table)
    assert len(tracks) == 2
    assert all(t.l == 12 and t.v == 1.0 for t in tracks)
    xs = [[e.box.x for e in t.elements] for t in tracks]
    assert xs[0][0] == 50 and xs[1][0] == 80
    assert all(a != b for a, b in zip(*xs))


def test_gap_longer_than_max_gap_splits():
    dets = {k: [det(k, 20, 20)] for k in (0, 1, 5, 6)}
    tracks = build_tracks(dets, pan_table(7), TrackerParams(max_gap=2))
    assert len(tracks) == 2
    assert [e.kind for e in tracks[0].elements] == [DETECTED, DETECTED, ESTIMATED, ESTIMATED]
    assert tracks[1].frames == [5, 6]


def test_max_gap_zero_closes_immediately():
    dets = {k: [det(k, 20, 20)] for k in (0, 2)}
    tracks = build_tracks(dets, pan_table(3), TrackerParams(max_gap=0))
    assert [t.frames for t in tracks] == [[0], [2]]


def test_trailing_estimates_counted_unless_trimmed():
    dets = {k: [det(k, 20, 20)] for k in (0, 1)}
    table = pan_table(10)
    (t,) = build_tracks(dets, table, TrackerParams(max_gap=5))
    assert (t.l, t.m) == (2, 7)
    (t,) = build_tracks(dets, table, TrackerParams(max_gap=5, trim_trailing=True))
    assert (t.l, t.m, t.v) == (2, 2, 1.0)
    assert t.elements[-1].detected


def test_frames_without_detections_still_get_estimates():
    dets = {0: [det(0, 20, 20)], 30: [], 90: [det(90, 20, 20)]}
    (t,) = build_tracks(dets, pan_table(4, every=30))
    assert t.frames == [0, 30, 60, 90]
    assert (t.l, t.m) == (2, 4)


def test_build_tracks_empty_and_uncovered():
    assert build_tracks({}, pan_table(3)) == []
    assert build_tracks({0: []}, pan_table(3)) == []
    with pytest.raises(KeyError):
        build_tracks({7: [det(7, 0, 0)]}, pan_table(3))


def test_params_validation():
    with pytest.raises(ValueError):
        TrackerParams(iou_threshold=0)
    with pytest.raises(ValueError):
        TrackerParams(t_v=1.1)
    with pytest.raises(ValueError):
        TrackerParams(max_gap=-1)


# filter / export

def ratio_track(tid, l, m):
    els = [TrackElement(k, BBox(0, 0, 1, 1), DETECTED if k < l else ESTIMATED, 1.0) for k in range(m)]
    return Track(tid, "tire", els)


def test_filter_boundaries():
    kept = ratio_track(0, 4, 10)
    dropped = ratio_track(1, 3, 10)
    assert filter_tracks([kept, dropped], 0.4) == [kept]
    assert filter_tracks([dropped, kept], 0.0) == [dropped, kept]


def test_tracks_to_detections():
    table = pan_table(8)
    dets = {k: [det(k, 20, 20, score=0.5 + 0.05 * k)] for k in (0, 1, 2, 5, 6, 7)}
    (t,) = build_tracks(dets, table)
    out = tracks_to_detections([t])
    assert sorted(out) == list(range(8))
    mean = np.mean([0.5 + 0.05 * k for k in (0, 1, 2, 5, 6, 7)])
    for k in (3, 4):
        (d,) = out[k]
        assert d.kind == ESTIMATED and d.score == pytest.approx(mean) and d.track_id == t.id
    assert out[5][0].score == dets[5][0].score and out[5][0].box == dets[5][0].box
    assert tracks_to_detections(filter_tracks([t], 0.9)) == {}


def test_tracks_round_trip_through_detections():
    dets = {k: [det(k, 20, 20)] for k in (0, 1, 4)}
    tracks = build_tracks(dets, pan_table(5))
    back = tracks_from_detections(tracks_to_detections(tracks))
    assert [(t.id, t.frames, [e.kind for e in t.elements]) for t in back] == \
        [(t.id, t.frames, [e.kind for e in t.elements]) for t in tracks]
    with pytest.raises(ValueError):
        tracks_from_detections({0: [det(0, 0, 0)]})


# properties over seeded corrupted scenes

def small_scene(seed, n_frames=20):
    objs = [("tire", BBox(70 + 30 * i, 80 + 20 * (i % 2), 14, 14)) for i in range(3)]
    cfg = SynthConfig(world_size=(256, 256), frame_size=(160, 160), camera_origin=(48, 48),
                      camera_path=random_walk(n_frames, 2, 10, seed), objects=objs, texture_seed=seed)
    return generate(cfg)


def check_structure(tracks, dets, params):
    seen = {}
    for t in tracks:
        assert t.elements[0].detected
        assert t.v == t.l / t.m
        run = 0
        for e in t.elements:
            run = 0 if e.detected else run + 1
            assert run <= params.max_gap
            if e.detected:
                key = (e.frame, e.box.as_tuple())
                seen[key] = seen.get(key, 0) + 1
        assert [b - a for a, b in zip(t.frames, t.frames[1:])] == [1] * (t.m - 1)
    flat = [(d.frame, d.box.as_tuple()) for v in dets.values() for d in v]
    assert sorted(seen.items()) == sorted((k, flat.count(k)) for k in set(flat))


@pytest.mark.parametrize("seed", range(25))
def test_partition_and_gap_bound(seed):
    scene = small_scene(seed)
    noise = NoiseModel(miss_prob=0.4, jitter_sigma=1.0, fp_rate=0.1, fp_lifetime=2, fp_size=(14, 14))
    dets = corrupt(scene.gt, noise, seed, table=scene.true_table, frame_size=(160, 160))
    params = TrackerParams(max_gap=3)
    check_structure(build_tracks(dets, scene.true_table, params), dets, params)


def test_zero_noise_gives_one_perfect_track_per_object():
    scene = small_scene(1)
    dets = corrupt(scene.gt, NoiseModel(), 0)
    tracks = build_tracks(dets, scene.true_table)
    assert len(tracks) == len(scene.gt)
    assert all(t.v == 1.0 and t.m == 20 for t in tracks)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1), st.floats(0, 1))
def test_filtering_is_monotone(seed, t1, t2):
    t1, t2 = sorted((t1, t2))
    scene = small_scene(seed % 7)
    dets = corrupt(scene.gt, NoiseModel(miss_prob=0.5), seed)
    tracks = build_tracks(dets, scene.true_table)
    hi = {t.id for t in filter_tracks(tracks, t2)}
    lo = {t.id for t in filter_tracks(tracks, t1)}
    assert hi <= lo


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(-50, 50), st.integers(-50, 50))
def test_displacement_equivariance(seed, ox, oy):
    scene = small_scene(seed % 5)
    dets = corrupt(scene.gt, NoiseModel(miss_prob=0.3, jitter_sigma=0.5), seed)
    table = scene.true_table
    moved = {f: [Detection(d.frame, d.class_label, translate(d.box, (ox, oy)), d.score) for d in v]
             for f, v in dets.items()}
    a = build_tracks(dets, table)
    b = build_tracks(moved, table)
    assert [(t.id, [e.kind for e in t.elements], t.l, t.m) for t in a] == \
        [(t.id, [e.kind for e in t.elements], t.l, t.m) for t in b]
