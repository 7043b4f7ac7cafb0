import numpy as np
import pytest

from trackhijack.estimation import (
    H,
    NoiseConfig,
    Q_BASE,
    F,
    KalmanState,
    kf_init,
    kf_predict,
    kf_update,
    velocity,
)
from trackhijack.geometry import BBox


def test_init_state_vector():
    s = kf_init(BBox(10, 20, 4, 6), NoiseConfig(cov=0.1))
    assert np.allclose(s.x, [10, 20, 4, 6, 0, 0])


def test_init_then_predict_keeps_center():
    noise = NoiseConfig(cov=0.1)
    s = kf_init(BBox(10, 20, 4, 6), noise)
    _, box = kf_predict(s, noise)
    assert box.cx == 10 and box.cy == 20


def test_constant_measurement_is_fixed_point():
    noise = NoiseConfig(cov=0.1)
    z = BBox(10, 20, 4, 6)
    s = kf_init(z, noise)
    for _ in range(10):
        s, _ = kf_predict(s, noise)
        s = kf_update(s, z, noise)
    assert abs(s.x[0] - 10) < 1e-6
    assert abs(s.x[1] - 20) < 1e-6


def test_predict_one_step_of_velocity():
    noise = NoiseConfig(cov=0.1)
    s = KalmanState(np.array([0.0, 0.0, 2.0, 2.0, 3.0, -1.0]), np.eye(6))
    _, box = kf_predict(s, noise)
    assert (box.cx, box.cy, box.w, box.h) == (3.0, -1.0, 2.0, 2.0)


def test_predict_twice_is_linear():
    noise = NoiseConfig(cov=0.1)
    s = KalmanState(np.array([0.0, 0.0, 2.0, 2.0, 3.0, 0.0]), np.eye(6))
    s, _ = kf_predict(s, noise)
    s, box = kf_predict(s, noise)
    assert box.cx == 6.0


def test_predict_grows_covariance_trace():
    noise = NoiseConfig(cov=0.1, q=1.0)
    s = kf_init(BBox(0, 0, 2, 2), noise)
    before = np.trace(s.P)
    s, _ = kf_predict(s, noise)
    assert np.trace(s.P) > before


def test_update_zero_cov_trusts_measurement_exactly():
    noise = NoiseConfig(cov=0.0)
    s = kf_init(BBox(0, 0, 10, 10), noise)
    s, _ = kf_predict(s, noise)
    z = BBox(4, -3, 12, 9)
    s = kf_update(s, z, noise)
    assert np.allclose(s.x[:4], [4, -3, 12, 9], atol=1e-9)


def test_update_huge_cov_trusts_prediction():
    noise = NoiseConfig(cov=1e9)
    s = kf_init(BBox(0, 0, 10, 10), noise)
    s, predicted = kf_predict(s, noise)
    s = kf_update(s, BBox(10, 10, 12, 9), noise)
    assert abs(s.x[0] - predicted.cx) < 1e-3
    assert abs(s.x[1] - predicted.cy) < 1e-3


def test_predict_update_cycle_matches_textbook_arithmetic():
    # Independent re-derivation with explicit inverses, including the
    # Joseph-form covariance, checked against the implementation.
    noise = NoiseConfig(cov=0.25, q=2.0)
    rng = np.random.default_rng(3)
    x0 = np.array([5.0, -2.0, 8.0, 6.0, 1.5, -0.5])
    A = rng.normal(size=(6, 6))
    P_init = A @ A.T + 6 * np.eye(6)
    z = BBox(6.2, -1.1, 7.5, 6.4)

    s = KalmanState(x0.copy(), P_init.copy())
    s, _ = kf_predict(s, noise)
    s = kf_update(s, z, noise)

    xp = F @ x0
    Pp = F @ P_init @ F.T + noise.q * Q_BASE
    Pp = (Pp + Pp.T) / 2
    R = noise.cov * np.eye(4)
    K = Pp @ H.T @ np.linalg.inv(H @ Pp @ H.T + R)
    meas = np.array([z.cx, z.cy, z.w, z.h])
    x_post = xp + K @ (meas - H @ xp)
    ikh = np.eye(6) - K @ H
    P_post = ikh @ Pp @ ikh.T + K @ R @ K.T
    P_post = (P_post + P_post.T) / 2

    assert np.allclose(s.x, x_post, atol=1e-10)
    assert np.allclose(s.P, P_post, atol=1e-10)


def test_update_floors_extent():
    noise = NoiseConfig(cov=0.0)
    s = kf_init(BBox(0, 0, 1.5, 1.5), noise)
    s, _ = kf_predict(s, noise)
    s = kf_update(s, BBox(0, 0, 0.2, 0.1), noise)
    assert s.x[2] >= 1.0 and s.x[3] >= 1.0


def test_velocity_zero_after_init():
    s = kf_init(BBox(0, 0, 2, 2), NoiseConfig(cov=0.1))
    v = velocity(s)
    assert (v.dx, v.dy) == (0.0, 0.0)


def run_filter(measurements, noise):
    s = kf_init(measurements[0], noise)
    for z in measurements[1:]:
        s, _ = kf_predict(s, noise)
        s = kf_update(s, z, noise)
    return s


def test_velocity_converges_on_moving_target():
    noise = NoiseConfig(cov=0.01)
    measurements = [BBox(2.0 * t, 0, 10, 10) for t in range(10)]
    s = run_filter(measurements, noise)
    assert abs(velocity(s).dx - 2.0) < 0.2


def test_velocity_mirrors_with_measurements():
    noise = NoiseConfig(cov=0.01)
    forward = [BBox(2.0 * t + 1, 5, 10, 10) for t in range(8)]
    mirrored = [BBox(-b.cx, b.cy, b.w, b.h) for b in forward]
    vf = velocity(run_filter(forward, noise))
    vm = velocity(run_filter(mirrored, noise))
    assert vm.dx == pytest.approx(-vf.dx, abs=1e-12)
    assert vm.dy == pytest.approx(vf.dy, abs=1e-12)


def test_covariance_stays_symmetric_over_random_cycles():
    noise = NoiseConfig(cov=0.5)
    rng = np.random.default_rng(17)
    s = kf_init(BBox(0, 0, 10, 10), noise)
    for _ in range(10_000):
        s, _ = kf_predict(s, noise)
        z = BBox(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(5, 15), rng.uniform(5, 15))
        s = kf_update(s, z, noise)
        assert np.abs(s.P - s.P.T).max() < 1e-9
        assert (np.diag(s.P) >= 0).all()


def test_posterior_gap_monotone_in_cov():
    # Fixed prediction-measurement gap; trust in the detection should fall
    # (posterior lands farther from the measurement) as cov grows.
    gaps = []
    for cov in [1e-3, 1e-2, 0.1, 1.0, 10.0]:
        noise = NoiseConfig(cov=cov)
        s = kf_init(BBox(0, 0, 10, 10), noise)
        s, _ = kf_predict(s, noise)
        s = kf_update(s, BBox(8, 0, 10, 10), noise)
        gaps.append(abs(s.x[0] - 8.0))
    assert all(a <= b + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_determinism_bitwise():
    noise = NoiseConfig(cov=0.3)
    measurements = [BBox(1.7 * t, -0.3 * t, 9, 7) for t in range(20)]
    a = run_filter(measurements, noise)
    b = run_filter(measurements, noise)
    assert (a.x == b.x).all() and (a.P == b.P).all()


def test_noise_config_rejects_negative():
    with pytest.raises(ValueError):
        NoiseConfig(cov=-1.0)
    with pytest.raises(ValueError):
        NoiseConfig(cov=0.1, q=-0.5)
