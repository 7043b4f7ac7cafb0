"""Tracker hijacking over an idealized adversarial-example channel.

The attacker watches a scenario's detections, and on each attacked frame
replaces the target's detection with a fabricated box of identical shape,
shifted along the attacker-desired direction as far as association allows
(and no farther than the patch overlap constraint permits). A successful
per-frame AE is modeled as that direct edit of the detection list.

The attack stops as soon as the target's clean detection would no longer
associate with its original track; the remaining frames then run clean to
measure the two persistent effects: the hijacked track ghosting along the
attacker direction until its miss budget runs out, and the recovered
object staying out of the confirmed output until it re-confirms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import BBox, PatchRegion, Vec2, iou, translate
from .scenarios import Scenario
from .tracking import TrackManager, TrackStatus, TrackerConfig


class Infeasible(RuntimeError):
    """No positive shift satisfies both the association and patch constraints."""


class TargetMissing(RuntimeError):
    """The box a plan wants to erase is not present in the detection list."""


class BudgetExhausted(RuntimeError):
    """The frame budget ran out before the track was hijacked."""

    def __init__(self, frames_attacked: int):
        super().__init__(f"no hijack after {frames_attacked} attacked frames")
        self.frames_attacked = frames_attacked


@dataclass(frozen=True)
class AttackSpec:
    """What the attacker wants: which track, dragged where, built where.

    gamma is the minimum IoU between the fabricated box and the patch
    region; max_frames bounds the number of consecutive attacked frames.
    """

    target: int
    direction: Vec2
    patch: PatchRegion
    gamma: float = 0.1
    max_frames: int = 10

    def __post_init__(self):
        if self.direction.norm == 0.0:
            raise ValueError("attack direction must be non-zero")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")


@dataclass(frozen=True)
class FabricationPlan:
    """One frame's edit: erase the real detection, inject the shifted copy."""

    erase: BBox
    fabricate: BBox
    shift: Vec2


@dataclass(frozen=True)
class PostAttackTrace:
    """Aftermath of a successful attack, counted in clean frames after it stops.

    ghost_frames: how many frames the hijacked track stayed alive while
    coasting (None if it outlived the scenario).
    reconfirm_frames: 1-based index of the first post-attack frame whose
    confirmed output covers the target's clean detection again (None if
    that never happened within the scenario).
    """

    ghost_frames: Optional[int]
    reconfirm_frames: Optional[int]


@dataclass(frozen=True)
class AttackResult:
    success: bool
    frames_attacked: int
    hijacked_track_id: Optional[int]
    start_frame: int
    trace: Optional[PostAttackTrace] = None
    hijacked_velocity: Optional[Vec2] = None


def find_pos(
    predicted_target: BBox,
    detection: BBox,
    direction: Vec2,
    patch: PatchRegion,
    iou_gate: float,
    gamma: float,
    resolution: float = 0.1,
) -> FabricationPlan:
    """Largest shift of the detection along ``direction`` that still associates.

    The shift t is maximized subject to (a) the shifted box keeping
    IoU >= iou_gate with the predicted target box, and (b) the shifted box
    keeping IoU >= gamma with the patch region. Along a fixed direction the
    IoU with a fixed box is unimodal, so the rightmost feasible point of
    (a) is found by bisection; that is verified by sampling and the search
    falls back to a dense scan if the shape is ever violated.
    """
    u = direction.unit()

    def iou_pred(t: float) -> float:
        return iou(translate(detection, u.scaled(t)), predicted_target)

    def iou_patch(t: float) -> float:
        return iou(translate(detection, u.scaled(t)), patch.bounds)

    if iou_pred(0.0) < iou_gate:
        raise Infeasible(
            "detection does not associate with the predicted target box"
        )

    t_hi = (
        detection.w
        + detection.h
        + predicted_target.w
        + predicted_target.h
        + abs(detection.cx - predicted_target.cx)
        + abs(detection.cy - predicted_target.cy)
        + 1.0
    )

    def dense_scan() -> float:
        grid = np.arange(0.0, t_hi + resolution, 0.01)
        feasible = [
            t for t in grid if iou_pred(t) >= iou_gate and iou_patch(t) >= gamma
        ]
        if not feasible or max(feasible) <= 0.0:
            raise Infeasible("no positive shift satisfies both constraints")
        return float(max(feasible))

    # Rightmost point still satisfying (a).
    lo, hi = 0.0, t_hi
    while hi - lo > 1e-3:
        mid = (lo + hi) / 2.0
        if iou_pred(mid) >= iou_gate:
            lo = mid
        else:
            hi = mid
    t_assoc = lo

    samples = [iou_pred(t) for t in np.linspace(0.0, t_assoc, 65)]
    peak = int(np.argmax(samples))
    unimodal = all(
        samples[i] >= samples[i + 1] - 1e-9 for i in range(peak, len(samples) - 1)
    ) and all(samples[i] <= samples[i + 1] + 1e-9 for i in range(peak))

    if not unimodal:
        t_star = dense_scan()
    elif iou_patch(t_assoc) >= gamma:
        t_star = t_assoc
    else:
        t_star = None
        steps = int(math.floor(t_assoc / resolution))
        for k in range(steps, 0, -1):
            t = k * resolution
            if iou_patch(t) >= gamma:
                t_star = t
                break
        if t_star is None:
            raise Infeasible("no positive shift satisfies both constraints")

    if t_star <= 0.0:
        raise Infeasible("no positive shift satisfies both constraints")
    shift = u.scaled(t_star)
    return FabricationPlan(
        erase=detection, fabricate=translate(detection, shift), shift=shift
    )


def apply_idealized_ae(detections: list[BBox], plan: FabricationPlan) -> list[BBox]:
    """Detection list after a fully successful per-frame adversarial example.

    The box matching plan.erase is removed, the fabricated box is appended,
    and everything else passes through untouched.
    """
    erase_idx = None
    for i, det in enumerate(detections):
        if iou(det, plan.erase) >= 0.99:
            erase_idx = i
            break
    if erase_idx is None:
        raise TargetMissing("the box to erase is not in the detection list")
    out = [d for i, d in enumerate(detections) if i != erase_idx]
    out.append(plan.fabricate)
    return out


def default_start_frame(config: TrackerConfig) -> int:
    """First attacked frame: a few frames after the earliest confirmation."""
    return config.h_frames + 3


def _run_warmup(
    scenario: Scenario, config: TrackerConfig, start_frame: int, log_sink
) -> TrackManager:
    if not 0 < start_frame < len(scenario):
        raise ValueError(f"start_frame {start_frame} outside scenario")
    mgr = TrackManager(config)
    for f in range(start_frame):
        snap = mgr.step(scenario.frames[f].plain_boxes())
        _log(log_sink, snap, "warmup")
    return mgr


def resolve_target(
    scenario: Scenario, config: TrackerConfig, start_frame: Optional[int] = None
) -> int:
    """Track id holding the scenario's target at the attack start frame.

    The track must be confirmed by then, otherwise the scenario/config
    combination cannot host an attack and a ValueError is raised.
    """
    start = start_frame if start_frame is not None else default_start_frame(config)
    mgr = _run_warmup(scenario, config, start, None)
    det = scenario.target_box(start)
    if det is None:
        raise ValueError(f"target absent from frame {start}")
    tid = mgr.find_track_of(det)
    if tid is None:
        raise ValueError("target detection does not associate with any track")
    track = mgr.get_track(tid)
    if track is None or track.status is not TrackStatus.CONFIRMED:
        raise ValueError("target track is not confirmed by the attack start frame")
    return tid


def _log(sink, snapshot, phase, attack=None):
    if sink is None:
        return
    payload = {"phase": phase, **snapshot.to_payload()}
    if attack is not None:
        payload["attack"] = attack
    sink.append(payload)


def _plan_payload(plan: FabricationPlan) -> dict:
    return {
        "erased": [plan.erase.cx, plan.erase.cy, plan.erase.w, plan.erase.h],
        "fabricated": [
            plan.fabricate.cx,
            plan.fabricate.cy,
            plan.fabricate.w,
            plan.fabricate.h,
        ],
        "shift": [plan.shift.dx, plan.shift.dy],
    }


def _post_attack_phase(
    mgr: TrackManager,
    scenario: Scenario,
    tid: int,
    first_clean: int,
    config: TrackerConfig,
    log_sink,
) -> PostAttackTrace:
    ghost_frames = None
    reconfirm_frames = None
    post = 0
    for g in range(first_clean, len(scenario)):
        snap = mgr.step(scenario.frames[g].plain_boxes())
        _log(log_sink, snap, "post")
        post += 1
        if ghost_frames is None and tid not in snap.ids():
            ghost_frames = post - 1
        if reconfirm_frames is None:
            det = scenario.target_box(g)
            if det is not None and any(
                cid != tid and iou(box, det) >= config.iou_gate
                for cid, box, _ in mgr.confirmed()
            ):
                reconfirm_frames = post
        if ghost_frames is not None and reconfirm_frames is not None and log_sink is None:
            break
    return PostAttackTrace(ghost_frames=ghost_frames, reconfirm_frames=reconfirm_frames)


def hijack(
    scenario: Scenario,
    config: TrackerConfig,
    spec: AttackSpec,
    start_frame: Optional[int] = None,
    ae_success_prob: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    post_trace: bool = True,
    log_sink: Optional[list] = None,
) -> AttackResult:
    """Run the hijacking attack; returns a result or raises BudgetExhausted.

    Per attacked frame: plan the fabricated box against the target track's
    predicted position, feed the edited detections to the tracker, then
    probe whether the *next* clean detection of the target would still
    associate with the original track. Success means it would not (it
    matches nothing, or a different track).

    ae_success_prob models an unreliable physical AE: each frame in the
    attack window independently applies the edit with this probability and
    passes the clean frame through otherwise. Such frames still consume
    budget.
    """
    start = start_frame if start_frame is not None else default_start_frame(config)
    mgr = _run_warmup(scenario, config, start, log_sink)
    tid = spec.target

    track = mgr.get_track(tid)
    if track is None or track.status is not TrackStatus.CONFIRMED:
        raise ValueError("spec.target is not a confirmed track at the start frame")
    first_det = scenario.target_box(start)
    if first_det is None or mgr.find_track_of(first_det) != tid:
        raise ValueError("spec.target does not hold the scenario target at start")

    if ae_success_prob < 1.0 and rng is None:
        rng = np.random.default_rng(0)

    frames_attacked = 0
    success = False
    f = start
    while f < len(scenario) - 1 and frames_attacked < spec.max_frames:
        frame = scenario.frames[f]
        clean_boxes = frame.plain_boxes()
        target_det = scenario.target_box(f)
        if target_det is None:
            raise ValueError(f"target absent from frame {f} during the attack")

        apply_ae = ae_success_prob >= 1.0 or (rng.random() < ae_success_prob)
        plan = None
        if apply_ae:
            predicted = mgr.predict_box(tid)
            plan = find_pos(
                predicted,
                target_det,
                spec.direction,
                spec.patch,
                config.iou_gate,
                spec.gamma,
            )
            dets = apply_idealized_ae(clean_boxes, plan)
        else:
            dets = clean_boxes

        snap = mgr.step(dets)
        frames_attacked += 1
        _log(log_sink, snap, "attack", _plan_payload(plan) if plan else None)

        if apply_ae:
            fab_index = len(dets) - 1
            assert (tid, fab_index) in mgr.last_matches, (
                "fabricated box failed to associate with the target track"
            )

        probe_det = scenario.target_box(f + 1)
        if probe_det is None:
            raise ValueError(f"target absent from probe frame {f + 1}")
        f += 1
        if mgr.find_track_of(probe_det) != tid:
            success = True
            break

    if not success:
        raise BudgetExhausted(frames_attacked)

    ghost = mgr.get_track(tid)
    vel = ghost.velocity() if ghost is not None else None
    trace = None
    if post_trace:
        trace = _post_attack_phase(mgr, scenario, tid, f, config, log_sink)
    return AttackResult(
        success=True,
        frames_attacked=frames_attacked,
        hijacked_track_id=tid,
        start_frame=start,
        trace=trace,
        hijacked_velocity=vel,
    )


def erase_attack(
    scenario: Scenario,
    config: TrackerConfig,
    target: int,
    n_frames: int,
    start_frame: Optional[int] = None,
    post_trace: bool = True,
    log_sink: Optional[list] = None,
) -> AttackResult:
    """Baseline: drop the target's detection for n_frames, no fabrication.

    Success is probed the same way as for hijacking, with the first clean
    detection after the erasure window.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    start = start_frame if start_frame is not None else default_start_frame(config)
    if start + n_frames >= len(scenario):
        raise ValueError("scenario too short for this erasure window")
    mgr = _run_warmup(scenario, config, start, log_sink)

    track = mgr.get_track(target)
    if track is None or track.status is not TrackStatus.CONFIRMED:
        raise ValueError("target is not a confirmed track at the start frame")

    for f in range(start, start + n_frames):
        frame = scenario.frames[f]
        target_det = scenario.target_box(f)
        if target_det is None:
            raise ValueError(f"target absent from frame {f} during the attack")
        dets = [lb.box for lb in frame.boxes if lb.ident != scenario.target_label]
        snap = mgr.step(dets)
        _log(
            log_sink,
            snap,
            "attack",
            {"erased": [target_det.cx, target_det.cy, target_det.w, target_det.h]},
        )

    probe_frame = start + n_frames
    probe_det = scenario.target_box(probe_frame)
    if probe_det is None:
        raise ValueError(f"target absent from probe frame {probe_frame}")
    success = mgr.find_track_of(probe_det) != target

    trace = None
    vel = None
    if success:
        ghost = mgr.get_track(target)
        vel = ghost.velocity() if ghost is not None else None
        if post_trace:
            trace = _post_attack_phase(
                mgr, scenario, target, probe_frame, config, log_sink
            )
    return AttackResult(
        success=success,
        frames_attacked=n_frames,
        hijacked_track_id=target if success else None,
        start_frame=start,
        trace=trace,
        hijacked_velocity=vel,
    )
