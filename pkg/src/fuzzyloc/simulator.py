"""Seedable ground-truth world, waypoint driver, and Monte Carlo runner.

Ground truth propagates at the control rate with noise-perturbed commands;
the filter predicts with the clean commands and updates against noisy scans
at the (slower) observation rate. All randomness comes from two substreams
spawned from one seed, one for control noise and one for sensor noise, so a
run is reproducible and the truth trajectory never depends on the filter
variant.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ekf, metrics, models
from .adaptation import AdaptationConfig, CovarianceAdapter, StepTrace
from .ekf import CovPair, GaussianState
from .errors import ScenarioError
from .models import ControlInput, Landmark, LandmarkMap, Measurement, NoiseSpec, Pose

VARIANTS = ("ekf", "anfekf-r", "anfekf-q", "anfekf-rq")

_VARIANT_MODE = {"ekf": None, "anfekf-r": "r", "anfekf-q": "q", "anfekf-rq": "rq"}

#: A waypoint counts as reached inside this radius (m).
WAYPOINT_RADIUS = 1.0

#: The filter starts at the true pose with a near-certain belief.
DEFAULT_P0_DIAG = (1e-6, 1e-6, 1e-6)

SCENARIO_SCHEMA = "fuzzyloc-scenario-v1"

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class Scenario:
    """World, vehicle, sensing, and noise description of one experiment.

    Angles are radians here; the JSON form stores angular fields in degrees.
    true_noise generates the world, assumed_noise initializes the filter's
    covariances; they differ exactly when the filter is mis-specified.
    """

    landmarks: tuple[Landmark, ...]
    waypoints: tuple[tuple[float, float], ...]
    wheelbase: float
    speed: float
    gamma_max: float
    sensor_range: float
    sensor_fov: float
    control_rate: float
    observe_rate: float
    true_noise: NoiseSpec
    assumed_noise: NoiseSpec
    duration: float
    seed: int = 0
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def ticks_per_observation(self) -> int:
        return int(round(self.control_rate / self.observe_rate))

    def validate(self) -> None:
        """Raise ScenarioError on any structurally invalid field."""
        if not self.landmarks:
            raise ScenarioError("scenario has no landmarks")
        if not self.waypoints:
            raise ScenarioError("scenario has no waypoints")
        ids = [lm.id for lm in self.landmarks]
        if len(ids) != len(set(ids)):
            raise ScenarioError("landmark ids are not unique")
        for name in ("wheelbase", "speed", "gamma_max", "sensor_range", "sensor_fov",
                     "control_rate", "observe_rate", "duration"):
            if getattr(self, name) <= 0.0:
                raise ScenarioError(f"{name} must be positive")
        ratio = self.control_rate / self.observe_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ScenarioError("control_rate must be an integer multiple of observe_rate")
        for label, noise in (("true_noise", self.true_noise), ("assumed_noise", self.assumed_noise)):
            for field_name in ("sigma_v", "sigma_gamma", "sigma_r", "sigma_theta"):
                if getattr(noise, field_name) <= 0.0:
                    raise ScenarioError(f"{label}.{field_name} must be positive")


def default_scenario() -> Scenario:
    """Built-in benchmark: a 3 m/s vehicle on a closed waypoint loop.

    The loop spans roughly 170 m x 90 m with 26 landmarks placed every 17 m
    or so along the path, alternating sides at a 7 m offset. That spacing
    keeps at least one landmark inside the forward half-plane sensor
    footprint nearly everywhere, so the filter never dead-reckons for more
    than a moment. Noise levels: 0.3 m/s speed, 3 deg steer, 0.1 m range,
    1 deg bearing; the assumed noise matches the true noise.
    """
    noise = NoiseSpec(sigma_v=0.3, sigma_gamma=3.0 * _DEG, sigma_r=0.1, sigma_theta=1.0 * _DEG)
    landmark_xy = [
        (58.0, 11.0), (79.0, 19.0), (75.0, 41.0), (87.0, 56.0), (66.0, 64.0),
        (70.0, 86.0), (51.0, 83.0), (34.0, 97.0), (17.0, 83.0), (0.0, 97.0),
        (-17.0, 83.0), (-34.0, 97.0), (-51.0, 83.0), (-70.0, 86.0), (-66.0, 64.0),
        (-87.0, 56.0), (-75.0, 41.0), (-79.0, 19.0), (-58.0, 11.0), (-51.0, -7.0),
        (-34.0, 7.0), (-17.0, -7.0), (0.0, 7.0), (17.0, -7.0), (34.0, 7.0),
        (51.0, -7.0),
    ]
    return Scenario(
        landmarks=tuple(Landmark(i + 1, x, y) for i, (x, y) in enumerate(landmark_xy)),
        waypoints=((60.0, 0.0), (85.0, 45.0), (60.0, 90.0), (-60.0, 90.0), (-85.0, 45.0), (-60.0, 0.0)),
        wheelbase=4.0,
        speed=3.0,
        gamma_max=30.0 * _DEG,
        sensor_range=20.0,
        sensor_fov=180.0 * _DEG,
        control_rate=40.0,
        observe_rate=5.0,
        true_noise=noise,
        assumed_noise=noise,
        duration=100.0,
        seed=0,
    )


def _noise_to_dict(noise: NoiseSpec) -> dict:
    return {
        "sigma_v": noise.sigma_v,
        "sigma_gamma_deg": noise.sigma_gamma / _DEG,
        "sigma_r": noise.sigma_r,
        "sigma_theta_deg": noise.sigma_theta / _DEG,
    }


def _noise_from_dict(data: dict) -> NoiseSpec:
    return NoiseSpec(
        sigma_v=float(data["sigma_v"]),
        sigma_gamma=float(data["sigma_gamma_deg"]) * _DEG,
        sigma_r=float(data["sigma_r"]),
        sigma_theta=float(data["sigma_theta_deg"]) * _DEG,
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    """JSON-ready form; angular fields are stored in degrees."""
    return {
        "schema": SCENARIO_SCHEMA,
        "landmarks": [[lm.id, lm.x, lm.y] for lm in scenario.landmarks],
        "waypoints": [list(wp) for wp in scenario.waypoints],
        "wheelbase": scenario.wheelbase,
        "speed": scenario.speed,
        "gamma_max_deg": scenario.gamma_max / _DEG,
        "sensor_range": scenario.sensor_range,
        "sensor_fov_deg": scenario.sensor_fov / _DEG,
        "control_rate": scenario.control_rate,
        "observe_rate": scenario.observe_rate,
        "true_noise": _noise_to_dict(scenario.true_noise),
        "assumed_noise": _noise_to_dict(scenario.assumed_noise),
        "duration": scenario.duration,
        "seed": scenario.seed,
        "start": list(scenario.start),
    }


def scenario_from_dict(data: dict) -> Scenario:
    """Inverse of scenario_to_dict; validates the result."""
    schema = data.get("schema")
    if schema != SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema: {schema!r} (expected {SCENARIO_SCHEMA!r})")
    try:
        scenario = Scenario(
            landmarks=tuple(Landmark(int(i), float(x), float(y)) for i, x, y in data["landmarks"]),
            waypoints=tuple((float(x), float(y)) for x, y in data["waypoints"]),
            wheelbase=float(data["wheelbase"]),
            speed=float(data["speed"]),
            gamma_max=float(data["gamma_max_deg"]) * _DEG,
            sensor_range=float(data["sensor_range"]),
            sensor_fov=float(data["sensor_fov_deg"]) * _DEG,
            control_rate=float(data["control_rate"]),
            observe_rate=float(data["observe_rate"]),
            true_noise=_noise_from_dict(data["true_noise"]),
            assumed_noise=_noise_from_dict(data["assumed_noise"]),
            duration=float(data["duration"]),
            seed=int(data.get("seed", 0)),
            start=tuple(float(v) for v in data.get("start", (0.0, 0.0, 0.0))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    scenario.validate()
    return scenario


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


class WaypointDriver:
    """Constant-speed waypoint pursuit with saturated steering.

    Waypoints cycle; reaching the last one returns pursuit to the first.
    """

    def __init__(self, scenario: Scenario):
        self._waypoints = scenario.waypoints
        self._speed = scenario.speed
        self._gamma_max = scenario.gamma_max
        self._index = 0
        self.reached = 0

    def drive(
        self, truth: Pose, rng: np.random.Generator, noise: NoiseSpec
    ) -> tuple[ControlInput, ControlInput]:
        """Command for one tick: (clean, noise-perturbed).

        The clean command steers toward the active waypoint with the steer
        angle clamped to the vehicle limit; the noisy command adds one
        Gaussian draw per channel and is what the true vehicle executes.
        """
        wx, wy = self._waypoints[self._index]
        if math.hypot(wx - truth.x, wy - truth.y) <= WAYPOINT_RADIUS:
            self._index = (self._index + 1) % len(self._waypoints)
            self.reached += 1
            wx, wy = self._waypoints[self._index]
        steer = models.wrap_angle(math.atan2(wy - truth.y, wx - truth.x) - truth.phi)
        steer = min(max(steer, -self._gamma_max), self._gamma_max)
        clean = ControlInput(self._speed, steer)
        noisy = ControlInput(
            clean.v + rng.normal(0.0, noise.sigma_v),
            clean.gamma + rng.normal(0.0, noise.sigma_gamma),
        )
        return clean, noisy


def sense(
    truth: Pose, landmark_map: LandmarkMap, scenario: Scenario, rng: np.random.Generator
) -> list[Measurement]:
    """Noisy scan of every landmark inside sensor range and field of view.

    Visibility is decided on the noise-free geometry, so the set of observed
    landmarks depends only on the true pose. Measured ranges are floored at
    zero, matching a physical rangefinder.
    """
    half_fov = 0.5 * scenario.sensor_fov
    noise = scenario.true_noise
    scan: list[Measurement] = []
    for lm in landmark_map:
        clean = models.observe(truth, lm)
        if clean.r > scenario.sensor_range or abs(clean.theta) > half_fov:
            continue
        dr = rng.normal(0.0, noise.sigma_r)
        dtheta = rng.normal(0.0, noise.sigma_theta)
        z = models.observe(truth, lm, noise=(dr, dtheta))
        if z.r < 0.0:
            z = Measurement(z.landmark_id, 0.0, z.theta)
        scan.append(z)
    return scan


@dataclass
class RunSummary:
    """Scalar digest of one run."""

    variant: str
    seed: int
    time_avg_pos_rmse: float
    time_avg_nees: float
    accepted: int
    gated: int
    timed_out: bool


@dataclass
class RunLog:
    """Dense per-tick trace of one simulation run.

    Adaptation columns hold NaN on ticks where the adapter was inactive
    (non-observation ticks, warm-up, or the plain filter variant).
    """

    variant: str
    seed: int
    t: np.ndarray  # (n,)
    truth: np.ndarray  # (n, 3)
    est_mean: np.ndarray  # (n, 3)
    p_diag: np.ndarray  # (n, 3)
    nees: np.ndarray  # (n,)
    n_meas: np.ndarray  # (n,) accepted measurements per tick
    n_gated: np.ndarray  # (n,) rejected measurements per tick
    r_diag: np.ndarray  # (n, 2) measurement covariance in force
    q_diag: np.ndarray  # (n, 2) process covariance in force
    dom_diag: np.ndarray  # (n, 2)
    delta_dom_diag: np.ndarray  # (n, 2)
    applied_delta_r: np.ndarray  # (n, 2)
    q_factor: np.ndarray  # (n,)
    timed_out: bool = False

    def position_error(self) -> np.ndarray:
        return np.hypot(
            self.truth[:, 0] - self.est_mean[:, 0],
            self.truth[:, 1] - self.est_mean[:, 1],
        )

    def heading_error(self) -> np.ndarray:
        raw = self.truth[:, 2] - self.est_mean[:, 2]
        return np.array([models.wrap_angle(v) for v in raw])

    def summary(self) -> RunSummary:
        err = self.position_error()
        return RunSummary(
            variant=self.variant,
            seed=self.seed,
            time_avg_pos_rmse=float(np.sqrt(np.mean(err**2))),
            time_avg_nees=float(np.mean(self.nees)),
            accepted=int(self.n_meas.sum()),
            gated=int(self.n_gated.sum()),
            timed_out=self.timed_out,
        )


def run_once(
    scenario: Scenario,
    variant: str,
    seed: int | None = None,
    adaptation: AdaptationConfig | None = None,
    gate_threshold: float = ekf.DEFAULT_GATE_THRESHOLD,
    p0_diag: tuple[float, float, float] = DEFAULT_P0_DIAG,
) -> RunLog:
    """Simulate one run of the chosen filter variant.

    The filter starts at the true pose with covariance diag(p0_diag). On
    every control tick the truth moves with a noisy command while the filter
    predicts with the clean one; on observation ticks the filter fuses the
    scan, after which the adapter (if the variant has one) rewrites the
    covariances used from the next tick on.

    Args:
        scenario: world description; validated before the run.
        variant: one of VARIANTS.
        seed: run seed; defaults to scenario.seed.
        adaptation: adapter parameters; defaults to AdaptationConfig().
        gate_threshold: Mahalanobis acceptance bound for measurements.
        p0_diag: initial covariance diagonal.

    Returns:
        A RunLog with one row per control tick.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    scenario.validate()
    if seed is None:
        seed = scenario.seed
    control_rng, sensor_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )

    dt = scenario.dt
    ratio = scenario.ticks_per_observation
    n = int(round(scenario.duration * scenario.control_rate))

    landmark_map = LandmarkMap(scenario.landmarks)
    truth = Pose(*scenario.start)
    state = GaussianState(truth.as_array(), np.diag(p0_diag))
    cov = CovPair.from_noise(scenario.assumed_noise)
    driver = WaypointDriver(scenario)
    mode = _VARIANT_MODE[variant]
    adapter = CovarianceAdapter(mode, cov, adaptation) if mode else None

    t = np.arange(1, n + 1) * dt
    truth_arr = np.empty((n, 3))
    est_arr = np.empty((n, 3))
    p_diag = np.empty((n, 3))
    nees_arr = np.empty(n)
    n_meas = np.zeros(n, dtype=int)
    n_gated = np.zeros(n, dtype=int)
    r_diag = np.empty((n, 2))
    q_diag = np.empty((n, 2))
    dom_diag = np.full((n, 2), np.nan)
    delta_dom_diag = np.full((n, 2), np.nan)
    applied_delta_r = np.full((n, 2), np.nan)
    q_factor = np.full(n, np.nan)

    for k in range(1, n + 1):
        clean, noisy = driver.drive(truth, control_rng, scenario.true_noise)
        truth = models.motion_step(
            truth, clean, dt, scenario.wheelbase,
            noise=(noisy.v - clean.v, noisy.gamma - clean.gamma),
        )
        obs_tick = k % ratio == 0
        scan = sense(truth, landmark_map, scenario, sensor_rng) if obs_tick else []
        pose_before = state.pose
        state, records = ekf.step(
            state, clean, scan, cov, landmark_map, dt, scenario.wheelbase,
            gate_threshold=gate_threshold, timestep=k,
        )
        trace = StepTrace()
        if obs_tick and adapter is not None:
            G_u = models.motion_jacobian_control(pose_before, clean, dt, scenario.wheelbase)
            cov, trace = adapter.after_update(records, G_u, cov)

        i = k - 1
        truth_arr[i] = (truth.x, truth.y, truth.phi)
        est_arr[i] = state.mean
        p_diag[i] = np.diag(state.P)
        nees_arr[i] = metrics.nees(truth, state)
        n_meas[i] = sum(1 for rec in records if rec.accepted)
        n_gated[i] = len(records) - n_meas[i]
        r_diag[i] = (cov.R[0, 0], cov.R[1, 1])
        q_diag[i] = (cov.Q[0, 0], cov.Q[1, 1])
        if trace.active:
            dom_diag[i] = trace.dom_diag
            delta_dom_diag[i] = trace.delta_dom_diag
            applied_delta_r[i] = trace.applied_delta_r
            q_factor[i] = trace.q_factor

    return RunLog(
        variant=variant,
        seed=seed,
        t=t,
        truth=truth_arr,
        est_mean=est_arr,
        p_diag=p_diag,
        nees=nees_arr,
        n_meas=n_meas,
        n_gated=n_gated,
        r_diag=r_diag,
        q_diag=q_diag,
        dom_diag=dom_diag,
        delta_dom_diag=delta_dom_diag,
        applied_delta_r=applied_delta_r,
        q_factor=q_factor,
        timed_out=driver.reached == 0,
    )


def _run_once_packed(args: tuple) -> RunLog:
    scenario, variant, seed, adaptation, gate_threshold, p0_diag = args
    return run_once(scenario, variant, seed, adaptation, gate_threshold, p0_diag)


def run_monte_carlo(
    scenario: Scenario,
    variant: str,
    n_runs: int,
    base_seed: int = 0,
    max_workers: int = 1,
    adaptation: AdaptationConfig | None = None,
    gate_threshold: float = ekf.DEFAULT_GATE_THRESHOLD,
    p0_diag: tuple[float, float, float] = DEFAULT_P0_DIAG,
) -> list[RunLog]:
    """Run n_runs independent simulations seeded base_seed + run index.

    Results are ordered by run index regardless of worker scheduling, so a
    parallel invocation is interchangeable with a serial one.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    packed = [
        (scenario, variant, base_seed + i, adaptation, gate_threshold, p0_diag)
        for i in range(n_runs)
    ]
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(_run_once_packed, packed))
    return [_run_once_packed(args) for args in packed]
