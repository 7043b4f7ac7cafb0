import numpy as np
import pytest

from trackhijack.attack import (
    AttackSpec,
    BudgetExhausted,
    FabricationPlan,
    Infeasible,
    TargetMissing,
    apply_idealized_ae,
    default_start_frame,
    erase_attack,
    find_pos,
    hijack,
    resolve_target,
)
from trackhijack.estimation import NoiseConfig
from trackhijack.geometry import BBox, PatchRegion, Vec2, iou, translate
from trackhijack.scenarios import gen_move_in, gen_move_out
from trackhijack.tracking import TrackerConfig


def config(cov=0.1, r=60, h=6):
    return TrackerConfig(r_frames=r, h_frames=h, noise=NoiseConfig(cov=cov))


def build_spec(scenario, cfg, max_frames, direction=None, gamma=0.1):
    tid = resolve_target(scenario, cfg)
    return AttackSpec(
        target=tid,
        direction=direction or scenario.direction,
        patch=scenario.patch,
        gamma=gamma,
        max_frames=max_frames,
    )


# --- find_pos ---------------------------------------------------------------


def grid_scan_best_shift(detection, predicted, direction, patch, gate, gamma):
    """Dense reference search at 0.01 px resolution."""
    u = direction.unit()
    t_hi = detection.w + detection.h + predicted.w + predicted.h + 60.0
    best = None
    for t in np.arange(0.01, t_hi, 0.01):
        moved = translate(detection, u.scaled(t))
        if iou(moved, predicted) >= gate and iou(moved, patch.bounds) >= gamma:
            best = t
    return best


def test_find_pos_reaches_association_boundary():
    det = BBox(100, 100, 40, 40)
    predicted = BBox(100, 100, 40, 40)
    corridor = PatchRegion(BBox(130, 100, 120, 60))
    plan = find_pos(predicted, det, Vec2(1, 0), corridor, 0.3, 0.1)
    # Analytic boundary for identical squares shifted along x at gate 0.3.
    expected = 40.0 - 0.3 * 2.0 * 40.0 * 40.0 / (1.3 * 40.0)
    assert plan.shift.dx == pytest.approx(expected, abs=0.1)
    assert plan.shift.dy == 0.0
    oracle = grid_scan_best_shift(det, predicted, Vec2(1, 0), corridor, 0.3, 0.1)
    assert plan.shift.dx == pytest.approx(oracle, abs=0.1)
    assert iou(plan.fabricate, predicted) >= 0.3
    assert iou(plan.fabricate, corridor.bounds) >= 0.1


def test_find_pos_respects_patch_constraint():
    det = BBox(100, 100, 40, 40)
    predicted = BBox(100, 100, 40, 40)
    tight = PatchRegion(BBox(100, 100, 30, 30))
    plan = find_pos(predicted, det, Vec2(1, 0), tight, 0.3, 0.25)
    oracle = grid_scan_best_shift(det, predicted, Vec2(1, 0), tight, 0.3, 0.25)
    assert plan.shift.dx == pytest.approx(oracle, abs=0.1)
    assert iou(plan.fabricate, tight.bounds) >= 0.25


def test_find_pos_maximality_against_oracle():
    rng = np.random.default_rng(19)
    for _ in range(25):
        det = BBox(0, 0, rng.uniform(20, 50), rng.uniform(20, 50))
        predicted = BBox(rng.uniform(-4, 4), rng.uniform(-4, 4), det.w * 1.05, det.h * 0.95)
        angle = rng.uniform(0, 2 * np.pi)
        direction = Vec2(np.cos(angle), np.sin(angle))
        patch = PatchRegion(
            BBox(rng.uniform(-10, 10), rng.uniform(-10, 10), det.w, det.h)
        )
        try:
            plan = find_pos(predicted, det, direction, patch, 0.3, 0.1)
        except Infeasible:
            assert grid_scan_best_shift(det, predicted, direction, patch, 0.3, 0.1) is None
            continue
        t = plan.shift.norm
        bumped = translate(det, direction.unit().scaled(t + 0.2))
        assert iou(bumped, predicted) < 0.3 or iou(bumped, patch.bounds) < 0.1


def test_find_pos_gamma_one_with_smaller_patch_is_infeasible():
    det = BBox(0, 0, 40, 40)
    patch = PatchRegion(BBox(0, 0, 20, 20))
    with pytest.raises(Infeasible):
        find_pos(det, det, Vec2(1, 0), patch, 0.3, 1.0)


def test_find_pos_rejects_non_associated_detection():
    det = BBox(0, 0, 20, 20)
    predicted = BBox(100, 0, 20, 20)
    with pytest.raises(Infeasible, match="does not associate"):
        find_pos(predicted, det, Vec2(1, 0), PatchRegion(BBox(0, 0, 40, 40)), 0.3, 0.1)


def test_attack_spec_rejects_zero_direction():
    with pytest.raises(ValueError, match="non-zero"):
        AttackSpec(target=1, direction=Vec2(0, 0), patch=PatchRegion(BBox(0, 0, 1, 1)))


def test_attack_spec_rejects_bad_gamma():
    with pytest.raises(ValueError, match="gamma"):
        AttackSpec(
            target=1, direction=Vec2(1, 0), patch=PatchRegion(BBox(0, 0, 1, 1)), gamma=0.0
        )


# --- apply_idealized_ae -----------------------------------------------------


def test_apply_ae_erases_and_appends():
    a, target, b = BBox(0, 0, 10, 10), BBox(50, 0, 10, 10), BBox(100, 0, 10, 10)
    plan = FabricationPlan(
        erase=target, fabricate=translate(target, Vec2(5, 0)), shift=Vec2(5, 0)
    )
    out = apply_idealized_ae([a, target, b], plan)
    assert out == [a, b, plan.fabricate]


def test_apply_ae_zero_shift_preserves_geometry():
    dets = [BBox(0, 0, 10, 10), BBox(50, 0, 10, 10)]
    plan = FabricationPlan(erase=dets[1], fabricate=dets[1], shift=Vec2(0, 0))
    out = apply_idealized_ae(dets, plan)
    assert sorted((b.cx, b.cy) for b in out) == sorted((b.cx, b.cy) for b in dets)


def test_apply_ae_missing_target():
    plan = FabricationPlan(
        erase=BBox(500, 500, 10, 10), fabricate=BBox(505, 500, 10, 10), shift=Vec2(5, 0)
    )
    with pytest.raises(TargetMissing):
        apply_idealized_ae([BBox(0, 0, 10, 10)], plan)


# --- hijack -----------------------------------------------------------------


def test_hijack_move_out_needs_few_frames():
    cfg = config(cov=0.1)
    scen = gen_move_out(seed=5, noise_sigma=0.5)
    spec = build_spec(scen, cfg, max_frames=3)
    res = hijack(scen, cfg, spec)
    assert res.success
    assert res.frames_attacked <= 3


def test_hijack_against_target_motion_direction_is_hard():
    # Dragging along the target's own apparent motion walks the fabricated
    # box away from the patch, so a single frame cannot finish the job.
    cfg = config(cov=0.1)
    scen = gen_move_in(seed=5, noise_sigma=0.5)
    motion_dir = Vec2(1.0, 0.0)
    spec = build_spec(scen, cfg, max_frames=1, direction=motion_dir)
    with pytest.raises(BudgetExhausted) as err:
        hijack(scen, cfg, spec)
    assert err.value.frames_attacked == 1


def test_hijack_persistence_effects():
    cfg = config(cov=0.1, r=60, h=6)
    scen = gen_move_out(seed=7, noise_sigma=0.5)
    spec = build_spec(scen, cfg, max_frames=5)
    res = hijack(scen, cfg, spec)
    assert res.success
    assert res.trace.ghost_frames is not None
    assert res.trace.ghost_frames <= 60
    assert res.trace.reconfirm_frames == 6


def test_hijack_budget_monotonicity():
    cfg = config(cov=1.0)
    scen = gen_move_out(seed=11, noise_sigma=0.5)
    tid = resolve_target(scen, cfg)

    def run(k):
        spec = AttackSpec(
            target=tid, direction=scen.direction, patch=scen.patch, max_frames=k
        )
        return hijack(scen, cfg, spec, post_trace=False)

    first = None
    for k in range(1, 8):
        try:
            first = run(k)
            break
        except BudgetExhausted:
            continue
    assert first is not None
    # A larger budget attacks the same frames and stops at the same point.
    larger = run(first.frames_attacked + 3)
    assert larger.frames_attacked == first.frames_attacked


def test_hijacked_velocity_aligns_with_attack_direction():
    cfg = config(cov=0.1)
    for gen in (gen_move_in, gen_move_out):
        scen = gen(seed=13, noise_sigma=0.5)
        spec = build_spec(scen, cfg, max_frames=4)
        res = hijack(scen, cfg, spec, post_trace=False)
        assert res.success
        assert res.hijacked_velocity.dot(spec.direction) > 0


def test_hijack_requires_confirmed_target():
    cfg = config()
    scen = gen_move_out(seed=3, noise_sigma=0.5)
    spec = AttackSpec(
        target=999, direction=scen.direction, patch=scen.patch, max_frames=3
    )
    with pytest.raises(ValueError, match="confirmed"):
        hijack(scen, cfg, spec, start_frame=default_start_frame(cfg))


def test_hijack_with_unreliable_ae_uses_more_of_the_budget():
    cfg = config(cov=0.1)
    scen = gen_move_out(seed=21, noise_sigma=0.5)
    tid = resolve_target(scen, cfg)
    spec = AttackSpec(
        target=tid, direction=scen.direction, patch=scen.patch, max_frames=30
    )
    sure = hijack(scen, cfg, spec, post_trace=False)
    flaky = hijack(
        scen,
        cfg,
        spec,
        ae_success_prob=0.4,
        rng=np.random.default_rng(2),
        post_trace=False,
    )
    assert flaky.frames_attacked >= sure.frames_attacked


def test_hijack_log_records_attack_frames(tmp_path):
    cfg = config(cov=0.1)
    scen = gen_move_out(seed=5, noise_sigma=0.5)
    spec = build_spec(scen, cfg, max_frames=3)
    log = []
    res = hijack(scen, cfg, spec, log_sink=log)
    phases = [entry["phase"] for entry in log]
    assert phases.count("attack") == res.frames_attacked
    assert phases[0] == "warmup" and phases[-1] == "post"
    attacked = [e for e in log if e["phase"] == "attack"]
    assert all("attack" in e for e in attacked)
    assert "shift" in attacked[0]["attack"]


# --- erase baseline ---------------------------------------------------------


def test_erase_below_reserve_age_fails_on_straight_line():
    cfg = config(cov=0.1, r=60, h=6)
    scen = gen_move_out(seed=3, noise_sigma=0.0, n_frames=100)
    tid = resolve_target(scen, cfg)
    res = erase_attack(scen, cfg, tid, n_frames=59, post_trace=False)
    assert not res.success


def test_erase_at_reserve_age_succeeds():
    cfg = config(cov=0.1, r=60, h=6)
    scen = gen_move_out(seed=3, noise_sigma=0.0, n_frames=100)
    tid = resolve_target(scen, cfg)
    res = erase_attack(scen, cfg, tid, n_frames=60)
    assert res.success
    # The track was deleted during the window: no ghost remains.
    assert res.trace.ghost_frames == 0
    assert res.trace.reconfirm_frames == 6


def test_erase_never_beats_hijack_on_bundle_sample():
    cfg = config(cov=0.1)
    hijack_succ = erase_succ = 0
    for seed in range(5):
        scen = gen_move_in(seed=30 + seed, noise_sigma=0.5)
        tid = resolve_target(scen, cfg)
        spec = AttackSpec(
            target=tid, direction=scen.direction, patch=scen.patch, max_frames=3
        )
        try:
            hijack(scen, cfg, spec, post_trace=False)
            hijack_succ += 1
        except BudgetExhausted:
            pass
        erase_succ += erase_attack(scen, cfg, tid, n_frames=3, post_trace=False).success
    assert hijack_succ >= erase_succ
    assert hijack_succ == 5


def test_erase_window_must_fit_scenario():
    cfg = config()
    scen = gen_move_out(seed=3, noise_sigma=0.5, n_frames=40)
    tid = resolve_target(scen, cfg)
    with pytest.raises(ValueError, match="too short"):
        erase_attack(scen, cfg, tid, n_frames=60)
