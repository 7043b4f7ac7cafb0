"""Per-track constant-velocity Kalman filter.

State layout is [cx, cy, w, h, vx, vy]: constant velocity on the box
center, random walk on the extent. The measurement is the detected box
[cx, cy, w, h] with isotropic noise cov * I4. All operations are pure:
they return new states and never mutate their inputs, so states can be
shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, Vec2

STATE_DIM = 6
MEAS_DIM = 4

# Constant-velocity transition: cx += vx, cy += vy.
F = np.eye(STATE_DIM)
F[0, 4] = 1.0
F[1, 5] = 1.0

# Measurement extracts [cx, cy, w, h].
H = np.zeros((MEAS_DIM, STATE_DIM))
H[:4, :4] = np.eye(4)

# Per-unit process noise; scaled by NoiseConfig.q.
Q_BASE = np.diag([0.01, 0.01, 0.01, 0.01, 0.1, 0.1])

# Initial covariance: moderate position/size uncertainty, large velocity
# uncertainty so the velocity adapts quickly from the zero init.
P0 = np.diag([1.0, 1.0, 1.0, 1.0, 100.0, 100.0])

# Extent floor applied after updates, keeps boxes valid under noisy input.
MIN_EXTENT = 1.0


@dataclass(frozen=True)
class NoiseConfig:
    """Filter tuning: measurement noise scale cov, process noise scale q."""

    cov: float
    q: float = 1.0

    def __post_init__(self):
        if self.cov < 0 or self.q < 0:
            raise ValueError("noise scales must be non-negative")


@dataclass
class KalmanState:
    """Filter state: mean vector x (6,) and covariance P (6, 6)."""

    x: np.ndarray
    P: np.ndarray

    def copy(self) -> "KalmanState":
        return KalmanState(self.x.copy(), self.P.copy())

    def box(self) -> BBox:
        return BBox(self.x[0], self.x[1], self.x[2], self.x[3])


def kf_init(measurement: BBox, noise: NoiseConfig) -> KalmanState:
    """Start a filter on a first detection with zero initial velocity."""
    x = np.array(
        [measurement.cx, measurement.cy, measurement.w, measurement.h, 0.0, 0.0]
    )
    return KalmanState(x, P0.copy())


def kf_predict(state: KalmanState, noise: NoiseConfig) -> tuple[KalmanState, BBox]:
    """Advance one frame under the constant-velocity model.

    Returns the predicted state and the predicted box read from it.
    """
    x = F @ state.x
    P = F @ state.P @ F.T + noise.q * Q_BASE
    P = (P + P.T) / 2.0
    out = KalmanState(x, P)
    return out, out.box()


def kf_update(state: KalmanState, z: BBox, noise: NoiseConfig) -> KalmanState:
    """Fold a measured box into the state (Joseph-form covariance update)."""
    meas = np.array([z.cx, z.cy, z.w, z.h])
    R = noise.cov * np.eye(MEAS_DIM)
    S = H @ state.P @ H.T + R
    K = np.linalg.solve(S.T, (state.P @ H.T).T).T
    x = state.x + K @ (meas - H @ state.x)
    ikh = np.eye(STATE_DIM) - K @ H
    P = ikh @ state.P @ ikh.T + K @ R @ K.T
    P = (P + P.T) / 2.0
    x[2] = max(x[2], MIN_EXTENT)
    x[3] = max(x[3], MIN_EXTENT)
    return KalmanState(x, P)


def velocity(state: KalmanState) -> Vec2:
    """Current estimated center velocity in pixels/frame."""
    return Vec2(state.x[4], state.x[5])
