"""Extended Kalman filter localization cycle.

The filter owns nothing but the Gaussian belief; the noise covariances are
passed in every step so an external adapter can rewrite them between steps.
Measurements are processed sequentially with a Mahalanobis acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .errors import SingularInnovationError
from .models import ControlInput, Landmark, LandmarkMap, Measurement, NoiseSpec, Pose

#: Chi-square 95% quantile for 2 degrees of freedom.
DEFAULT_GATE_THRESHOLD = 5.991

_COND_LIMIT = 1e12


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


@dataclass
class GaussianState:
    """Gaussian pose belief: mean (x, y, phi) and 3x3 covariance P.

    The heading component of the mean is wrapped and P is symmetrized on
    construction, so every state produced by the filter satisfies both.
    """

    mean: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).copy()
        self.mean[2] = models.wrap_angle(self.mean[2])
        self.P = _symmetrize(np.asarray(self.P, dtype=float))

    @property
    def pose(self) -> Pose:
        return Pose(self.mean[0], self.mean[1], self.mean[2])


@dataclass
class CovPair:
    """Process covariance Q (v, gamma) and measurement covariance R (r, theta).

    Both are diagonal 2x2 matrices. The pair travels through the filter
    unchanged; adapters produce new pairs rather than mutating this one.
    """

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        self.Q = np.asarray(self.Q, dtype=float).copy()
        self.R = np.asarray(self.R, dtype=float).copy()

    @classmethod
    def from_noise(cls, noise: NoiseSpec) -> "CovPair":
        """Diagonal covariances from per-channel standard deviations."""
        return cls(
            Q=np.diag([noise.sigma_v**2, noise.sigma_gamma**2]),
            R=np.diag([noise.sigma_r**2, noise.sigma_theta**2]),
        )


@dataclass
class InnovationRecord:
    """One measurement's residual and the covariance it was judged against."""

    residual: np.ndarray  # (dr, dtheta), bearing component wrapped
    S: np.ndarray  # 2x2 innovation covariance
    landmark_id: int
    timestep: int
    accepted: bool = True
    H: np.ndarray | None = None  # observation Jacobian, kept for adaptation


def _solve_innovation(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > _COND_LIMIT:
        raise SingularInnovationError("innovation covariance is ill-conditioned")
    return np.linalg.solve(S, rhs)


def predict(
    state: GaussianState,
    u: ControlInput,
    Q: np.ndarray,
    dt: float,
    wheelbase: float,
) -> GaussianState:
    """Time update: propagate the mean and inflate P through the motion model.

    P' = F P F^T + G Q G^T with F, G the motion Jacobians w.r.t. the state
    and the noisy command, both linearized at the current mean.
    """
    pose = state.pose
    next_pose = models.motion_step(pose, u, dt, wheelbase)
    F = models.motion_jacobian_state(pose, u, dt)
    G = models.motion_jacobian_control(pose, u, dt, wheelbase)
    P = F @ state.P @ F.T + G @ Q @ G.T
    return GaussianState(next_pose.as_array(), P)


def predict_measurement(
    state: GaussianState, landmark: Landmark, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Predicted (range, bearing), innovation covariance, and Jacobian.

    Returns:
        zhat: (2,) predicted measurement at the current mean.
        S: 2x2 H P H^T + R, symmetrized.
        H: 2x3 observation Jacobian at the current mean.
    """
    pose = state.pose
    z = models.observe(pose, landmark)
    H = models.observation_jacobian(pose, landmark)
    S = _symmetrize(H @ state.P @ H.T + R)
    return np.array([z.r, z.theta]), S, H


def innovation(z: Measurement, zhat: np.ndarray) -> np.ndarray:
    """Residual z - zhat with the bearing difference wrapped."""
    return np.array([z.r - zhat[0], models.wrap_angle(z.theta - zhat[1])])


def gate(residual: np.ndarray, S: np.ndarray, threshold: float) -> bool:
    """Mahalanobis acceptance test: residual^T S^-1 residual <= threshold."""
    d = float(residual @ _solve_innovation(S, residual))
    return d <= threshold


def update(state: GaussianState, record: InnovationRecord, H: np.ndarray) -> GaussianState:
    """Measurement update with gain K = P H^T S^-1.

    The covariance is propagated as (I - K H) P and re-symmetrized by the
    state constructor.
    """
    # S is symmetric, so K^T solves S K^T = H P.
    K = _solve_innovation(record.S, H @ state.P).T
    mean = state.mean + K @ record.residual
    P = (np.eye(3) - K @ H) @ state.P
    return GaussianState(mean, P)


def step(
    state: GaussianState,
    u: ControlInput,
    measurements: list[Measurement],
    cov: CovPair,
    landmark_map: LandmarkMap,
    dt: float,
    wheelbase: float,
    gate_threshold: float = DEFAULT_GATE_THRESHOLD,
    timestep: int = 0,
) -> tuple[GaussianState, list[InnovationRecord]]:
    """One full localization cycle: predict, then gate and fuse each measurement.

    Measurements are fused sequentially in arrival order; each one is judged
    against the belief updated by its predecessors. Rejected measurements are
    recorded with accepted=False and leave the belief untouched.

    Returns:
        The posterior state and one InnovationRecord per input measurement.
    """
    state = predict(state, u, cov.Q, dt, wheelbase)
    records: list[InnovationRecord] = []
    for z in measurements:
        landmark = landmark_map[z.landmark_id]
        zhat, S, H = predict_measurement(state, landmark, cov.R)
        residual = innovation(z, zhat)
        accepted = gate(residual, S, gate_threshold)
        record = InnovationRecord(residual, S, z.landmark_id, timestep, accepted, H)
        if accepted:
            state = update(state, record, H)
        records.append(record)
    return state, records
