"""Track-to-detection assignment: IoU cost, Hungarian matching, gating.

Cost entries are 1 - IoU, so they live in [0, 1]. Gating is applied after
the global optimum is found: optimal pairs whose IoU falls below the gate
are severed into the unmatched sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, iou


@dataclass
class Association:
    """Partition of track and detection indices produced by one association."""

    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)


def build_cost_matrix(
    predicted: Sequence[BBox], detections: Sequence[BBox]
) -> np.ndarray:
    """Entry (i, j) = 1 - iou(predicted[i], detections[j])."""
    cost = np.ones((len(predicted), len(detections)))
    for i, p in enumerate(predicted):
        for j, d in enumerate(detections):
            cost[i, j] = 1.0 - iou(p, d)
    return cost


def hungarian_solve(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost matching of size min(rows, cols), sorted by row."""
    cost = np.asarray(cost, dtype=float)
    if cost.size and not np.isfinite(cost).all():
        raise ValueError("cost matrix entries must be finite")
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def associate(
    predicted: Sequence[BBox], detections: Sequence[BBox], iou_gate: float
) -> Association:
    """Globally match predictions to detections, then sever sub-gate pairs."""
    if not 0.0 < iou_gate < 1.0:
        raise ValueError(f"iou_gate must be in (0, 1), got {iou_gate}")
    cost = build_cost_matrix(predicted, detections)
    out = Association()
    matched_t: set[int] = set()
    matched_d: set[int] = set()
    for r, c in hungarian_solve(cost):
        if cost[r, c] > 1.0 - iou_gate:
            continue
        out.matches.append((r, c))
        matched_t.add(r)
        matched_d.add(c)
    out.unmatched_tracks = [i for i in range(len(predicted)) if i not in matched_t]
    out.unmatched_detections = [
        j for j in range(len(detections)) if j not in matched_d
    ]
    return out
