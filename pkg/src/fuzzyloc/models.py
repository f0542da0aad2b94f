"""Vehicle kinematics, range-bearing sensing, and their Jacobians.

Angles are radians wrapped to (-pi, pi]; distances are meters. The motion
model is a discrete-time steered vehicle: the commanded speed and steer angle
are corrupted by additive noise before they act on the pose, so process noise
enters through the control channel rather than directly on the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import DegenerateGeometryError, UnknownLandmarkError

TWO_PI = 2.0 * math.pi

#: Robot-landmark distances below this are treated as degenerate geometry.
DEFAULT_EPSILON_RANGE = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]; the -pi boundary maps to +pi."""
    wrapped = angle % TWO_PI
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Planar pose: position (x, y) in meters, heading phi in radians.

    The heading is wrapped on construction, so two Pose objects describing
    the same physical pose compare equal.
    """

    x: float
    y: float
    phi: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def as_array(self) -> np.ndarray:
        """Pose as a (3,) float array (x, y, phi)."""
        return np.array([self.x, self.y, self.phi], dtype=float)


@dataclass(frozen=True)
class ControlInput:
    """Speed command v (m/s) and steer angle gamma (rad)."""

    v: float
    gamma: float


@dataclass(frozen=True)
class Landmark:
    """Point feature of the known map with a stable integer id."""

    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Measurement:
    """Range-bearing reading of one landmark.

    Attributes
    ----------
    landmark_id : id of the observed landmark (known correspondence).
    r : measured range in meters, nominally nonnegative.
    theta : bearing relative to the robot heading, wrapped to (-pi, pi].
    """

    landmark_id: int
    r: float
    theta: float


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations of the control and sensor noise channels."""

    sigma_v: float  # m/s
    sigma_gamma: float  # rad
    sigma_r: float  # m
    sigma_theta: float  # rad


class LandmarkMap:
    """Ordered collection of landmarks with unique-id lookup."""

    def __init__(self, landmarks: Iterable[Landmark]):
        self.landmarks: tuple[Landmark, ...] = tuple(landmarks)
        self._by_id: dict[int, Landmark] = {}
        for lm in self.landmarks:
            if lm.id in self._by_id:
                raise ValueError(f"duplicate landmark id {lm.id}")
            self._by_id[lm.id] = lm

    def __len__(self) -> int:
        return len(self.landmarks)

    def __iter__(self) -> Iterator[Landmark]:
        return iter(self.landmarks)

    def __contains__(self, landmark_id: int) -> bool:
        return landmark_id in self._by_id

    def __getitem__(self, landmark_id: int) -> Landmark:
        try:
            return self._by_id[landmark_id]
        except KeyError:
            raise UnknownLandmarkError(landmark_id) from None


def motion_step(
    pose: Pose,
    u: ControlInput,
    dt: float,
    wheelbase: float,
    noise: tuple[float, float] = (0.0, 0.0),
) -> Pose:
    """Propagate a pose one control period.

    Args:
        pose: current pose.
        u: commanded speed and steer angle.
        dt: control period in seconds.
        wheelbase: distance between axles in meters.
        noise: additive (dv, dgamma) perturbation on the command; zero for
            the filter's mean propagation, sampled for ground truth.

    Returns:
        The pose after one period, heading wrapped.
    """
    v = u.v + noise[0]
    gamma = u.gamma + noise[1]
    heading = pose.phi + gamma
    return Pose(
        pose.x + dt * v * math.cos(heading),
        pose.y + dt * v * math.sin(heading),
        pose.phi + dt * v / wheelbase * math.sin(gamma),
    )


def motion_jacobian_state(pose: Pose, u: ControlInput, dt: float) -> np.ndarray:
    """Jacobian of the noise-free motion step w.r.t. (x, y, phi).

    The heading row is independent of the pose, so the matrix is identity
    plus a heading-to-position shear.
    """
    heading = pose.phi + u.gamma
    return np.array(
        [
            [1.0, 0.0, -dt * u.v * math.sin(heading)],
            [0.0, 1.0, dt * u.v * math.cos(heading)],
            [0.0, 0.0, 1.0],
        ]
    )


def motion_jacobian_control(
    pose: Pose, u: ControlInput, dt: float, wheelbase: float
) -> np.ndarray:
    """Jacobian of the motion step w.r.t. the noisy command (v, gamma).

    Evaluated at zero noise; this is the matrix that maps control noise
    covariance into pose covariance during the filter's time update.
    """
    heading = pose.phi + u.gamma
    sin_h = math.sin(heading)
    cos_h = math.cos(heading)
    return np.array(
        [
            [dt * cos_h, -dt * u.v * sin_h],
            [dt * sin_h, dt * u.v * cos_h],
            [dt * math.sin(u.gamma) / wheelbase, dt * u.v * math.cos(u.gamma) / wheelbase],
        ]
    )


def observe(
    pose: Pose,
    landmark: Landmark,
    noise: tuple[float, float] = (0.0, 0.0),
    epsilon_range: float = DEFAULT_EPSILON_RANGE,
) -> Measurement:
    """Range-bearing observation of a landmark from a pose.

    noise = (dr, dtheta) is added exactly; the bearing is wrapped after the
    noise is applied.
    """
    dx = landmark.x - pose.x
    dy = landmark.y - pose.y
    r = math.hypot(dx, dy)
    if r < epsilon_range:
        raise DegenerateGeometryError(
            f"landmark {landmark.id} within {epsilon_range} m of the robot"
        )
    theta = math.atan2(dy, dx) - pose.phi + noise[1]
    return Measurement(landmark.id, r + noise[0], wrap_angle(theta))


def observation_jacobian(
    pose: Pose,
    landmark: Landmark,
    epsilon_range: float = DEFAULT_EPSILON_RANGE,
) -> np.ndarray:
    """Jacobian of (range, bearing) w.r.t. (x, y, phi).

    Rows are (range, bearing); d(bearing)/d(phi) is exactly -1.
    """
    dx = landmark.x - pose.x
    dy = landmark.y - pose.y
    q = dx * dx + dy * dy
    r = math.sqrt(q)
    if r < epsilon_range:
        raise DegenerateGeometryError(
            f"landmark {landmark.id} within {epsilon_range} m of the robot"
        )
    return np.array(
        [
            [-dx / r, -dy / r, 0.0],
            [dy / q, -dx / q, -1.0],
        ]
    )
