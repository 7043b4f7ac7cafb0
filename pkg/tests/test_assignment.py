import itertools

import numpy as np
import pytest

from trackhijack.assignment import Association, associate, build_cost_matrix, hungarian_solve
from trackhijack.geometry import BBox, iou


def brute_force_min_cost(cost: np.ndarray) -> float:
    """Exhaustive minimum over all maximal assignments."""
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return 0.0
    if rows <= cols:
        return min(
            sum(cost[r, c] for r, c in enumerate(perm))
            for perm in itertools.permutations(range(cols), rows)
        )
    return min(
        sum(cost[r, c] for c, r in enumerate(perm))
        for perm in itertools.permutations(range(rows), cols)
    )


def test_build_cost_matrix_identity_box():
    b = BBox(0, 0, 4, 4)
    cost = build_cost_matrix([b], [b])
    assert cost.shape == (1, 1)
    assert cost[0, 0] == 0.0


def test_build_cost_matrix_disjoint():
    cost = build_cost_matrix([BBox(0, 0, 2, 2)], [BBox(50, 50, 2, 2)])
    assert cost[0, 0] == 1.0


def test_build_cost_matrix_entries_match_iou():
    preds = [BBox(0, 0, 4, 4), BBox(10, 0, 6, 6)]
    dets = [BBox(2, 0, 4, 4), BBox(9, 1, 6, 6), BBox(30, 30, 2, 2)]
    cost = build_cost_matrix(preds, dets)
    assert cost.shape == (2, 3)
    for i, p in enumerate(preds):
        for j, d in enumerate(dets):
            assert cost[i, j] == pytest.approx(1.0 - iou(p, d), abs=1e-12)


def test_hungarian_two_by_two():
    matches = hungarian_solve(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert matches == [(0, 0), (1, 1)]


def test_hungarian_zero_diagonal():
    cost = np.ones((4, 4)) - np.eye(4)
    matches = hungarian_solve(cost)
    assert matches == [(i, i) for i in range(4)]


def test_hungarian_empty_inputs():
    assert hungarian_solve(np.zeros((0, 3))) == []
    assert hungarian_solve(np.zeros((3, 0))) == []


def test_hungarian_rejects_non_finite():
    with pytest.raises(ValueError):
        hungarian_solve(np.array([[np.nan, 1.0], [1.0, 0.0]]))


def test_hungarian_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(23)
    for _ in range(120):
        rows = rng.integers(1, 7)
        cols = rng.integers(1, 7)
        # Dyadic rationals: sums are exact in binary floating point, so the
        # optimal totals can be compared with ==.
        cost = rng.integers(0, 1024, size=(rows, cols)) / 1024.0
        matches = hungarian_solve(cost)
        assert len(matches) == min(rows, cols)
        total = sum(cost[r, c] for r, c in matches)
        assert total == brute_force_min_cost(cost)


def test_associate_above_gate():
    track = BBox(0, 0, 10, 10)
    det = BBox(0.5, 0, 10, 10)
    assert iou(track, det) > 0.9
    out = associate([track], [det], 0.3)
    assert out.matches == [(0, 0)]
    assert out.unmatched_tracks == [] and out.unmatched_detections == []


def test_associate_below_gate_severed():
    track = BBox(0, 0, 10, 10)
    det = BBox(9, 0, 10, 10)
    assert iou(track, det) < 0.3
    out = associate([track], [det], 0.3)
    assert out.matches == []
    assert out.unmatched_tracks == [0]
    assert out.unmatched_detections == [0]


def test_associate_gate_validation():
    with pytest.raises(ValueError):
        associate([], [], 0.0)
    with pytest.raises(ValueError):
        associate([], [], 1.0)


def test_associate_finds_global_optimum_not_greedy():
    # Track 0 overlaps detection 0 best of all pairs, but taking it greedily
    # forces track 1 onto a poor detection; the global optimum differs.
    tracks = [BBox(0, 0, 10, 10), BBox(2, 0, 10, 10), BBox(40, 0, 10, 10)]
    dets = [BBox(1, 0, 10, 10), BBox(3.5, 0, 10, 10)]
    cost = build_cost_matrix(tracks, dets)
    matches = associate(tracks, dets, 0.3).matches
    total = sum(cost[r, c] for r, c in matches)
    assert total == pytest.approx(brute_force_min_cost(cost), abs=1e-12)
    assert matches == [(0, 0), (1, 1)]


def test_associate_partition_invariant():
    rng = np.random.default_rng(31)
    for _ in range(50):
        tracks = [
            BBox(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 12), rng.uniform(4, 12))
            for _ in range(rng.integers(0, 5))
        ]
        dets = [
            BBox(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 12), rng.uniform(4, 12))
            for _ in range(rng.integers(0, 5))
        ]
        out = associate(tracks, dets, 0.3)
        seen_t = [r for r, _ in out.matches] + out.unmatched_tracks
        seen_d = [c for _, c in out.matches] + out.unmatched_detections
        assert sorted(seen_t) == list(range(len(tracks)))
        assert sorted(seen_d) == list(range(len(dets)))
        for r, c in out.matches:
            assert iou(tracks[r], dets[c]) >= 0.3


def test_associate_detection_permutation_preserves_matched_ious():
    rng = np.random.default_rng(37)
    tracks = [BBox(0, 0, 10, 10), BBox(15, 0, 10, 10), BBox(30, 0, 10, 10)]
    dets = [BBox(1, 0, 10, 10), BBox(16, 1, 10, 10), BBox(29, -1, 10, 10)]
    base = associate(tracks, dets, 0.3)
    base_ious = sorted(iou(tracks[r], dets[c]) for r, c in base.matches)
    for _ in range(5):
        perm = rng.permutation(len(dets)).tolist()
        shuffled = [dets[p] for p in perm]
        out = associate(tracks, shuffled, 0.3)
        ious = sorted(iou(tracks[r], shuffled[c]) for r, c in out.matches)
        assert ious == pytest.approx(base_ious, abs=1e-12)


def test_association_dataclass_defaults():
    a = Association()
    assert a.matches == [] and a.unmatched_tracks == [] and a.unmatched_detections == []
