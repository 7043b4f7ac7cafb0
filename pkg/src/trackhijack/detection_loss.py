"""Erase/fabricate losses over pre-NMS detector candidates, and a toy
differentiable detector to exercise them end to end.

The erase loss sums, over candidates covering the erase center,
``C^2 - CrossEntropy(p, class)`` (as printed; a sign-flip switch is
provided). The fabricate loss pulls a candidate's geometry, confidence and
class toward the fabrication target. Candidate selection uses box-extent
containment of the target center.

The toy detector is a fixed smooth map from a bounded patch-pixel vector
to a small grid of candidates: per anchor, confidence is a sigmoid of an
affine form, class probabilities a softmax of affine logits, and box
center/size affine offsets. Each anchor reads a 16-pixel window, so
perturbing one pixel touches only the anchors whose window covers it. All
parameters are drawn once from a seeded generator; everything downstream
is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import BBox, contains_center

N_PIXELS = 64
N_ANCHORS = 16
N_CLASSES = 4
WINDOW = 16
BASE_SIZE = 14.0
PROB_FLOOR = 1e-12


class NonDecreasing(RuntimeError):
    """The optimizer could not decrease the loss at all from its start point."""


@dataclass(frozen=True)
class CandidateBox:
    """Pre-NMS detector proposal: box, objectness confidence, class simplex."""

    box: BBox
    confidence: float
    class_probs: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        p = np.asarray(self.class_probs, dtype=float)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("class_probs must be a probability simplex")


@dataclass(frozen=True)
class FabricationTarget:
    center: tuple[float, float]
    size: tuple[float, float]
    class_index: int

    def __post_init__(self):
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("target size must be positive")


@dataclass(frozen=True)
class ToyDetectorParams:
    anchor_centers: np.ndarray  # (N_ANCHORS, 2)
    windows: np.ndarray  # (N_ANCHORS, WINDOW) pixel indices
    conf_w: np.ndarray  # (N_ANCHORS, WINDOW)
    conf_b: np.ndarray  # (N_ANCHORS,)
    cls_w: np.ndarray  # (N_ANCHORS, N_CLASSES, WINDOW)
    cls_b: np.ndarray  # (N_ANCHORS, N_CLASSES)
    center_w: np.ndarray  # (N_ANCHORS, 2, WINDOW)
    size_w: np.ndarray  # (N_ANCHORS, 2, WINDOW)


@dataclass
class ToyScene:
    """Bounded patch pixels plus the fixed map from pixels to candidates."""

    delta: np.ndarray
    eps: float
    params: ToyDetectorParams

    def __post_init__(self):
        if self.delta.shape != (N_PIXELS,):
            raise ValueError(f"delta must have shape ({N_PIXELS},)")
        if np.abs(self.delta).max() > self.eps + 1e-12:
            raise ValueError("delta exceeds the pixel bound")

    def with_delta(self, delta: np.ndarray) -> "ToyScene":
        return ToyScene(delta.copy(), self.eps, self.params)


def make_toy_scene(seed: int = 0, eps: float = 1.0) -> ToyScene:
    rng = np.random.default_rng(seed)
    centers = np.array(
        [[8.0 + 16.0 * (k % 4), 8.0 + 16.0 * (k // 4)] for k in range(N_ANCHORS)]
    )
    windows = np.array(
        [[(4 * k + j) % N_PIXELS for j in range(WINDOW)] for k in range(N_ANCHORS)]
    )
    params = ToyDetectorParams(
        anchor_centers=centers,
        windows=windows,
        conf_w=rng.normal(0.0, 0.35, (N_ANCHORS, WINDOW)),
        conf_b=rng.normal(0.0, 1.0, N_ANCHORS),
        cls_w=rng.normal(0.0, 0.4, (N_ANCHORS, N_CLASSES, WINDOW)),
        cls_b=rng.normal(0.0, 0.8, (N_ANCHORS, N_CLASSES)),
        center_w=rng.normal(0.0, 0.25, (N_ANCHORS, 2, WINDOW)),
        size_w=rng.normal(0.0, 0.12, (N_ANCHORS, 2, WINDOW)),
    )
    return ToyScene(np.zeros(N_PIXELS), eps, params)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def toy_detect(scene: ToyScene) -> list[CandidateBox]:
    p = scene.params
    out = []
    for k in range(N_ANCHORS):
        local = scene.delta[p.windows[k]]
        conf = _sigmoid(p.conf_w[k] @ local + p.conf_b[k])
        probs = _softmax(p.cls_w[k] @ local + p.cls_b[k])
        cx, cy = p.anchor_centers[k] + p.center_w[k] @ local
        w, h = BASE_SIZE + p.size_w[k] @ local
        out.append(
            CandidateBox(
                box=BBox(cx, cy, w, h),
                confidence=float(conf),
                class_probs=tuple(float(v) for v in probs),
            )
        )
    return out


def _cross_entropy(probs: Sequence[float], class_index: int) -> float:
    return -float(np.log(max(probs[class_index], PROB_FLOOR)))


def l1_loss(
    candidates: Sequence[CandidateBox],
    target: FabricationTarget,
    flip_ce_sign: bool = False,
) -> float:
    """Erase loss at the target center (as printed; see flip_ce_sign).

    The cross-entropy enters with a minus sign by default. Minimizing the
    sum drives covering candidates' confidence and target-class probability
    down together; flip_ce_sign switches the cross-entropy term to +.
    """
    sign = 1.0 if flip_ce_sign else -1.0
    total = 0.0
    for cand in candidates:
        if contains_center(cand.box, target.center):
            total += cand.confidence**2 + sign * _cross_entropy(
                cand.class_probs, target.class_index
            )
    return total


def l2_loss(candidates: Sequence[CandidateBox], target: FabricationTarget) -> float:
    """Fabrication loss: pull covering candidates onto the target box."""
    cx_t, cy_t = target.center
    sw_t, sh_t = np.sqrt(target.size[0]), np.sqrt(target.size[1])
    total = 0.0
    for cand in candidates:
        if not contains_center(cand.box, target.center):
            continue
        b = cand.box
        total += (b.cx - cx_t) ** 2 + (b.cy - cy_t) ** 2
        total += (np.sqrt(b.w) - sw_t) ** 2 + (np.sqrt(b.h) - sh_t) ** 2
        total += (1.0 - cand.confidence) ** 2
        total += _cross_entropy(cand.class_probs, target.class_index)
    return float(total)


def total_loss(
    candidates: Sequence[CandidateBox],
    erase_target: FabricationTarget,
    fab_target: FabricationTarget,
    lambda_fab: float,
    flip_ce_sign: bool = False,
) -> float:
    if lambda_fab < 0:
        raise ValueError("lambda_fab must be >= 0")
    out = l1_loss(candidates, erase_target, flip_ce_sign)
    if lambda_fab:
        out += lambda_fab * l2_loss(candidates, fab_target)
    return out


def scene_loss(
    scene: ToyScene,
    erase_target: FabricationTarget,
    fab_target: FabricationTarget,
    lambda_fab: float,
    flip_ce_sign: bool = False,
) -> float:
    return total_loss(
        toy_detect(scene), erase_target, fab_target, lambda_fab, flip_ce_sign
    )


def scene_loss_gradient(
    scene: ToyScene,
    erase_target: FabricationTarget,
    fab_target: FabricationTarget,
    lambda_fab: float,
    flip_ce_sign: bool = False,
) -> np.ndarray:
    """Analytic gradient of scene_loss with respect to the patch pixels.

    Candidate membership in the two covering sets is treated as locally
    constant (it changes on a measure-zero set of deltas).
    """
    p = scene.params
    candidates = toy_detect(scene)
    grad = np.zeros(N_PIXELS)
    sign = 1.0 if flip_ce_sign else -1.0
    for k, cand in enumerate(candidates):
        local = scene.delta[p.windows[k]]
        conf = cand.confidence
        probs = np.asarray(cand.class_probs)
        d_conf = conf * (1.0 - conf) * p.conf_w[k]

        def d_log_prob(ci: int) -> np.ndarray:
            # gradient of log softmax component ci wrt the window pixels
            return p.cls_w[k][ci] - probs @ p.cls_w[k]

        contribution = np.zeros(WINDOW)
        if contains_center(cand.box, erase_target.center):
            ci = erase_target.class_index
            contribution += 2.0 * conf * d_conf
            if probs[ci] > PROB_FLOOR:
                # d(-CE)/d = +d(log p)/d; flipped: d(+CE)/d = -d(log p)/d
                contribution += -sign * d_log_prob(ci)
        if lambda_fab and contains_center(cand.box, fab_target.center):
            b = cand.box
            ci = fab_target.class_index
            term = np.zeros(WINDOW)
            term += 2.0 * (b.cx - fab_target.center[0]) * p.center_w[k][0]
            term += 2.0 * (b.cy - fab_target.center[1]) * p.center_w[k][1]
            term += (
                2.0
                * (np.sqrt(b.w) - np.sqrt(fab_target.size[0]))
                * p.size_w[k][0]
                / (2.0 * np.sqrt(b.w))
            )
            term += (
                2.0
                * (np.sqrt(b.h) - np.sqrt(fab_target.size[1]))
                * p.size_w[k][1]
                / (2.0 * np.sqrt(b.h))
            )
            term += -2.0 * (1.0 - conf) * d_conf
            if probs[ci] > PROB_FLOOR:
                term += -d_log_prob(ci)
            contribution += lambda_fab * term
        np.add.at(grad, p.windows[k], contribution)
    return grad


def optimize_patch(
    scene: ToyScene,
    erase_target: FabricationTarget,
    fab_target: FabricationTarget,
    lambda_fab: float,
    steps: int,
    step_size: float,
    flip_ce_sign: bool = False,
) -> tuple[ToyScene, list[float]]:
    """Projected gradient descent on the patch pixels with backtracking.

    Each iteration halves the step until the loss does not increase, so the
    returned trace is non-increasing. Stops early once no decrease is
    possible; raises NonDecreasing only if that happens on the very first
    step (the targets are unreachable from this scene).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if step_size <= 0:
        raise ValueError("step_size must be positive")

    delta = scene.delta.copy()
    current = scene_loss(
        scene.with_delta(delta), erase_target, fab_target, lambda_fab, flip_ce_sign
    )
    trace = [current]
    for _ in range(steps):
        grad = scene_loss_gradient(
            scene.with_delta(delta), erase_target, fab_target, lambda_fab, flip_ce_sign
        )
        lr = step_size
        accepted = None
        while lr >= 1e-12:
            cand = np.clip(delta - lr * grad, -scene.eps, scene.eps)
            loss = scene_loss(
                scene.with_delta(cand),
                erase_target,
                fab_target,
                lambda_fab,
                flip_ce_sign,
            )
            if loss < current - 1e-15:
                accepted = (cand, loss)
                break
            lr /= 2.0
        if accepted is None:
            # No step size gives a strict decrease: converged (or stuck at
            # the start, which means the targets are unreachable from here).
            break
        delta, current = accepted
        trace.append(current)
    if len(trace) == 1:
        raise NonDecreasing("loss cannot be decreased from the initial patch")
    return scene.with_delta(delta), trace


def write_loss_trace(path, trace: Sequence[float]) -> None:
    """Two-column plot data: step index and loss value per line."""
    lines = ["# step loss"]
    lines += [f"{i} {loss!r}" for i, loss in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_loss_trace(path) -> list[float]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        out.append(float(line.split()[1]))
    return out
