"""Closed-form trajectory simulator with an exact IMU measurement model.

Each trajectory family provides analytic position, velocity, acceleration
and ZYX Euler angles with their rates. Inertial measurements are formed by
inverting the strapdown model at the interval midpoint, so a filter that
treats each sample as the constant rate over its interval commits only a
second-order integration error, far below the injected sensor noise.

Gauss-Markov biases use the exact discrete transition and stationarity-
correct increment variance. All randomness flows from a single seed
through separate child generators per stream, which makes the generated
bundle bitwise reproducible and insensitive to how many samples another
stream consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import manifold
from .dynamics import ImuNoiseModel, ImuSample
from .errors import ConfigError
from .evaluation import TrajectorySample
from .io import SequenceBundle, VisualMeasurement
from .adaptive import QualityMetrics

EPISODE_KINDS = ("dropout", "noise_spike", "bias_jump")

TRAJECTORY_FAMILIES = (
    "static",
    "circle",
    "figure8",
    "aggressive_rotation",
    "waypoint_spline",
)

#: Metric values emitted for an uncorrupted frame. Constant on purpose:
#: with a steady benign signal the adaptive policy sits at its fixed point
#: and matches a fixed-covariance filter exactly.
BENIGN_METRICS = {
    "intensity": 120.0,
    "entropy": 7.5,
    "blur": 100.0,
    "pose_chi2": 0.5,
    "culled_kf": 0.0,
    "projection_error": 0.8,
    "num_inliers": 200.0,
}

#: Metric values stamped on frames inside a corruption episode. pose_chi2
#: saturates any reasonable normalization bound and the culled count
#: alternates against zero frame to frame, so both the static and the
#: dynamic confidence scores pin at their maxima for the whole episode.
CORRUPT_SIGNATURE = {
    "intensity": 40.0,
    "entropy": 3.0,
    "blur": 1200.0,
    "pose_chi2": 60.0,
    "culled_kf_high": 10.0,
    "projection_error": 5.0,
    "num_inliers": 30.0,
}


@dataclass
class CorruptionEpisode:
    """A timed fault on the visual stream plus its metric signature."""

    start: float
    end: float
    kind: str
    magnitude: float = 10.0
    signature: dict[str, float] | None = None

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass
class ScenarioSpec:
    """Complete description of one synthetic sequence."""

    trajectory: str = "circle"
    duration: float = 60.0
    imu_rate: float = 200.0
    vo_rate: float = 10.0
    noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    vo_sigma_p: float = 0.02
    vo_sigma_v: float = 0.05
    noise_scale: float = 1.0
    init_bias_std_a: float = 0.02
    init_bias_std_g: float = 0.002
    corruption: list[CorruptionEpisode] = field(default_factory=list)
    seed: int = 0
    params: dict[str, float] = field(default_factory=dict)

    def validate(self) -> "ScenarioSpec":
        if self.trajectory not in TRAJECTORY_FAMILIES:
            raise ConfigError(
                f"unknown trajectory {self.trajectory!r}; choose from {TRAJECTORY_FAMILIES}"
            )
        if self.duration <= 0.0:
            raise ConfigError("duration must be positive")
        if self.imu_rate <= 0.0 or self.vo_rate <= 0.0:
            raise ConfigError("imu_rate and vo_rate must be positive")
        if self.vo_rate > self.imu_rate:
            raise ConfigError("vo_rate cannot exceed imu_rate")
        if self.noise_scale < 0.0:
            raise ConfigError("noise_scale must be >= 0")
        if self.vo_sigma_p < 0.0 or self.vo_sigma_v < 0.0:
            raise ConfigError("visual noise sigmas must be >= 0")
        self.noise.validate()
        for ep in self.corruption:
            if ep.kind not in EPISODE_KINDS:
                raise ConfigError(f"unknown corruption kind {ep.kind!r}")
            if not (0.0 <= ep.start < ep.end <= self.duration):
                raise ConfigError(
                    f"episode [{ep.start}, {ep.end}) must lie inside [0, {self.duration}]"
                )
        return self


def _euler_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    qz = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
    qy = np.array([math.cos(pitch / 2), 0.0, math.sin(pitch / 2), 0.0])
    qx = np.array([math.cos(roll / 2), math.sin(roll / 2), 0.0, 0.0])
    return manifold.quat_mul(manifold.quat_mul(qz, qy), qx)


def _body_rates(roll: float, pitch: float, rates: np.ndarray) -> np.ndarray:
    """Map ZYX Euler angle rates (droll, dpitch, dyaw) to body rates."""
    droll, dpitch, dyaw = rates
    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    return np.array(
        [
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        ]
    )


class _Trajectory:
    """Analytic state provider. Subclasses fill in the five functions."""

    def pos(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def vel(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def acc(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def euler(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def euler_rates(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def quat(self, t: float) -> np.ndarray:
        r, p, y = self.euler(t)
        return _euler_to_quat(r, p, y)

    def body_rates(self, t: float) -> np.ndarray:
        r, p, _ = self.euler(t)
        return _body_rates(r, p, self.euler_rates(t))


class _Static(_Trajectory):
    def __init__(self, params: dict):
        self.p0 = np.array(
            [params.get("x0", 0.0), params.get("y0", 0.0), params.get("z0", 0.0)]
        )

    def pos(self, t):
        return self.p0.copy()

    def vel(self, t):
        return np.zeros(3)

    def acc(self, t):
        return np.zeros(3)

    def euler(self, t):
        return np.zeros(3)

    def euler_rates(self, t):
        return np.zeros(3)


class _Circle(_Trajectory):
    """Level circle with tangent heading and a gentle vertical wobble.

    The wobble keeps the track non-planar so a similarity alignment stays
    well posed; set amp_z to 0 for a perfectly flat circle.
    """

    def __init__(self, params: dict):
        self.r = params.get("radius", 2.0)
        self.w = params.get("rate", 0.5)
        self.az = params.get("amp_z", 0.15)
        self.wz = params.get("rate_z", 2.0 * math.pi / 13.0)

    def pos(self, t):
        return np.array(
            [
                self.r * math.cos(self.w * t),
                self.r * math.sin(self.w * t),
                self.az * math.sin(self.wz * t),
            ]
        )

    def vel(self, t):
        return np.array(
            [
                -self.r * self.w * math.sin(self.w * t),
                self.r * self.w * math.cos(self.w * t),
                self.az * self.wz * math.cos(self.wz * t),
            ]
        )

    def acc(self, t):
        return np.array(
            [
                -self.r * self.w**2 * math.cos(self.w * t),
                -self.r * self.w**2 * math.sin(self.w * t),
                -self.az * self.wz**2 * math.sin(self.wz * t),
            ]
        )

    def euler(self, t):
        return np.array([0.0, 0.0, self.w * t + math.pi / 2.0])

    def euler_rates(self, t):
        return np.array([0.0, 0.0, self.w])


class _Figure8(_Trajectory):
    def __init__(self, params: dict):
        self.ax = params.get("amp_x", 2.0)
        self.ay = params.get("amp_y", 1.0)
        self.az = params.get("amp_z", 0.3)
        self.w = params.get("rate", 2.0 * math.pi / 20.0)
        self.wz = params.get("rate_z", 2.0 * math.pi / 11.0)

    def pos(self, t):
        return np.array(
            [
                self.ax * math.sin(self.w * t),
                self.ay * math.sin(2.0 * self.w * t),
                self.az * math.sin(self.wz * t + 0.3),
            ]
        )

    def vel(self, t):
        return np.array(
            [
                self.ax * self.w * math.cos(self.w * t),
                2.0 * self.ay * self.w * math.cos(2.0 * self.w * t),
                self.az * self.wz * math.cos(self.wz * t + 0.3),
            ]
        )

    def acc(self, t):
        return np.array(
            [
                -self.ax * self.w**2 * math.sin(self.w * t),
                -4.0 * self.ay * self.w**2 * math.sin(2.0 * self.w * t),
                -self.az * self.wz**2 * math.sin(self.wz * t + 0.3),
            ]
        )

    def euler(self, t):
        return np.array(
            [
                0.12 * math.sin(2.0 * math.pi * t / 7.0),
                0.10 * math.sin(2.0 * math.pi * t / 9.0 + 0.5),
                0.50 * math.sin(2.0 * math.pi * t / 15.0),
            ]
        )

    def euler_rates(self, t):
        return np.array(
            [
                0.12 * (2.0 * math.pi / 7.0) * math.cos(2.0 * math.pi * t / 7.0),
                0.10 * (2.0 * math.pi / 9.0) * math.cos(2.0 * math.pi * t / 9.0 + 0.5),
                0.50 * (2.0 * math.pi / 15.0) * math.cos(2.0 * math.pi * t / 15.0),
            ]
        )


class _AggressiveRotation(_Trajectory):
    """Large multi-axis attitude sweeps over a small translation loop.

    Peak body rate lands near 3 rad/s with the default amplitudes.
    """

    def __init__(self, params: dict):
        self.r = params.get("radius", 0.5)
        self.w = params.get("rate", 0.5)
        self.az = params.get("amp_z", 0.1)
        self.wz = params.get("rate_z", 2.0 * math.pi / 9.0)
        self.amp = np.array(
            [
                params.get("amp_roll", 0.9),
                params.get("amp_pitch", 0.8),
                params.get("amp_yaw", 1.1),
            ]
        )
        self.freq = 2.0 * math.pi * np.array(
            [
                params.get("freq_roll", 0.35),
                params.get("freq_pitch", 0.30),
                params.get("freq_yaw", 0.25),
            ]
        )
        self.phase = np.array([0.0, 0.7, 1.9])

    def pos(self, t):
        return np.array(
            [
                self.r * math.cos(self.w * t),
                self.r * math.sin(self.w * t),
                self.az * math.sin(self.wz * t),
            ]
        )

    def vel(self, t):
        return np.array(
            [
                -self.r * self.w * math.sin(self.w * t),
                self.r * self.w * math.cos(self.w * t),
                self.az * self.wz * math.cos(self.wz * t),
            ]
        )

    def acc(self, t):
        return np.array(
            [
                -self.r * self.w**2 * math.cos(self.w * t),
                -self.r * self.w**2 * math.sin(self.w * t),
                -self.az * self.wz**2 * math.sin(self.wz * t),
            ]
        )

    def euler(self, t):
        return self.amp * np.sin(self.freq * t + self.phase)

    def euler_rates(self, t):
        return self.amp * self.freq * np.cos(self.freq * t + self.phase)


class _WaypointSpline(_Trajectory):
    """Clamped cubic spline through seeded random waypoints."""

    def __init__(self, params: dict, duration: float, rng: np.random.Generator):
        n = int(params.get("waypoints", 6))
        if n < 3:
            raise ConfigError("waypoint_spline needs at least 3 waypoints")
        times = np.linspace(0.0, duration, n)
        pts = np.empty((n, 3))
        pts[:, 0] = rng.uniform(-3.0, 3.0, n)
        pts[:, 1] = rng.uniform(-3.0, 3.0, n)
        pts[:, 2] = rng.uniform(0.0, 1.5, n)
        self.spline = CubicSpline(times, pts, bc_type="clamped")
        self.dspline = self.spline.derivative(1)
        self.ddspline = self.spline.derivative(2)
        self.yaw_amp = params.get("amp_yaw", 0.4)
        self.yaw_rate = 2.0 * math.pi / params.get("period_yaw", 18.0)

    def pos(self, t):
        return np.asarray(self.spline(t), dtype=float)

    def vel(self, t):
        return np.asarray(self.dspline(t), dtype=float)

    def acc(self, t):
        return np.asarray(self.ddspline(t), dtype=float)

    def euler(self, t):
        return np.array(
            [
                0.08 * math.sin(2.0 * math.pi * t / 8.0),
                0.06 * math.sin(2.0 * math.pi * t / 10.0 + 0.4),
                self.yaw_amp * math.sin(self.yaw_rate * t),
            ]
        )

    def euler_rates(self, t):
        return np.array(
            [
                0.08 * (2.0 * math.pi / 8.0) * math.cos(2.0 * math.pi * t / 8.0),
                0.06 * (2.0 * math.pi / 10.0) * math.cos(2.0 * math.pi * t / 10.0 + 0.4),
                self.yaw_amp * self.yaw_rate * math.cos(self.yaw_rate * t),
            ]
        )


def _make_trajectory(spec: ScenarioSpec, rng: np.random.Generator) -> _Trajectory:
    if spec.trajectory == "static":
        return _Static(spec.params)
    if spec.trajectory == "circle":
        return _Circle(spec.params)
    if spec.trajectory == "figure8":
        return _Figure8(spec.params)
    if spec.trajectory == "aggressive_rotation":
        return _AggressiveRotation(spec.params)
    if spec.trajectory == "waypoint_spline":
        return _WaypointSpline(spec.params, spec.duration, rng)
    raise ConfigError(f"unknown trajectory {spec.trajectory!r}")


def _gm_bias_track(
    n_steps: int,
    dt: float,
    tau: float,
    sigma_w: float,
    init_std: float,
    scale: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact discrete Gauss-Markov sample path, shape (n_steps + 1, 3)."""
    decay = math.exp(-dt / tau)
    inc_std = sigma_w * math.sqrt(tau / 2.0 * (1.0 - math.exp(-2.0 * dt / tau)))
    track = np.empty((n_steps + 1, 3))
    track[0] = scale * init_std * rng.standard_normal(3)
    white = scale * inc_std * rng.standard_normal((n_steps, 3))
    for k in range(n_steps):
        track[k + 1] = decay * track[k] + white[k]
    return track


def simulate(spec: ScenarioSpec) -> SequenceBundle:
    """Generate a full sensor bundle for the scenario.

    Ground truth is sampled at the IMU rate, including the bias sample
    paths, so downstream consistency checks can form the complete error
    state at any step. Corruption episodes perturb only the visual stream
    and stamp their metric signature on the affected frames; a dropout
    simply removes them.
    """
    spec.validate()
    ss = np.random.SeedSequence(spec.seed)
    child_traj, child_imu, child_bias, child_vo, child_ep = (
        np.random.default_rng(s) for s in ss.spawn(5)
    )

    traj = _make_trajectory(spec, child_traj)
    dt = 1.0 / spec.imu_rate
    n_steps = int(round(spec.duration * spec.imu_rate))
    scale = spec.noise_scale
    noise = spec.noise

    gyro_white = scale * (noise.sigma_g / math.sqrt(dt)) * child_imu.standard_normal((n_steps, 3))
    accel_white = scale * (noise.sigma_a / math.sqrt(dt)) * child_imu.standard_normal((n_steps, 3))
    b_g = _gm_bias_track(
        n_steps, dt, noise.tau_g, noise.sigma_wg, spec.init_bias_std_g, scale, child_bias
    )
    b_a = _gm_bias_track(
        n_steps, dt, noise.tau_a, noise.sigma_wa, spec.init_bias_std_a, scale, child_bias
    )
    g_world = noise.g_world

    ground_truth: list[TrajectorySample] = []
    imu: list[ImuSample] = []
    for k in range(n_steps + 1):
        t = k * dt
        t_ns = round(t * 1e9)
        ground_truth.append(
            TrajectorySample(
                t=t_ns,
                p=traj.pos(t),
                q=traj.quat(t),
                v=traj.vel(t),
                b_a=b_a[k].copy(),
                b_g=b_g[k].copy(),
            )
        )
        if k == 0:
            continue
        t_mid = t - dt / 2.0
        omega_true = traj.body_rates(t_mid)
        q_mid = traj.quat(t_mid)
        f_body = manifold.quat_rotate(
            manifold.quat_conj(q_mid), traj.acc(t_mid) - g_world
        )
        imu.append(
            ImuSample(
                t=t_ns,
                omega=omega_true + b_g[k] + gyro_white[k - 1],
                accel=f_body + b_a[k] + accel_white[k - 1],
            )
        )

    n_vo = int(math.floor(spec.duration * spec.vo_rate + 1e-9))
    vo_white = child_vo.standard_normal((max(n_vo, 1), 6))
    episode_dirs = []
    for _ in spec.corruption:
        d = child_ep.standard_normal(3)
        episode_dirs.append(d / np.linalg.norm(d))

    vo: list[VisualMeasurement] = []
    frame_idx = 0
    for j in range(1, n_vo + 1):
        t = j / spec.vo_rate
        if t > spec.duration + 1e-9:
            break
        t_ns = round(t * 1e9)
        active = None
        active_dir = None
        for ep, direction in zip(spec.corruption, episode_dirs):
            if ep.active(t):
                active = ep
                active_dir = direction
                break
        if active is not None and active.kind == "dropout":
            frame_idx += 1
            continue
        sigma_p = scale * spec.vo_sigma_p
        sigma_v = scale * spec.vo_sigma_v
        p_meas = traj.pos(t) + sigma_p * vo_white[j - 1, 0:3]
        v_meas = traj.vel(t) + sigma_v * vo_white[j - 1, 3:6]
        metrics_src = dict(BENIGN_METRICS)
        if active is not None:
            if active.kind == "noise_spike":
                boost = (active.magnitude - 1.0) * vo_white[j - 1]
                p_meas = p_meas + scale * spec.vo_sigma_p * boost[0:3]
                v_meas = v_meas + scale * spec.vo_sigma_v * boost[3:6]
            elif active.kind == "bias_jump":
                p_meas = p_meas + active.magnitude * active_dir
            sig = dict(CORRUPT_SIGNATURE)
            if active.signature:
                sig.update(active.signature)
            metrics_src.update(
                {
                    "intensity": sig["intensity"],
                    "entropy": sig["entropy"],
                    "blur": sig["blur"],
                    "pose_chi2": sig["pose_chi2"],
                    "culled_kf": sig["culled_kf_high"] if frame_idx % 2 == 0 else 0.0,
                    "projection_error": sig["projection_error"],
                    "num_inliers": sig["num_inliers"],
                }
            )
        vo.append(
            VisualMeasurement(
                t=t_ns,
                p=p_meas,
                v=v_meas,
                metrics=QualityMetrics(
                    intensity=metrics_src["intensity"],
                    entropy=metrics_src["entropy"],
                    blur=metrics_src["blur"],
                    pose_chi2=metrics_src["pose_chi2"],
                    culled_keyframes=metrics_src["culled_kf"],
                    projection_error=metrics_src["projection_error"],
                ),
                num_inliers=metrics_src["num_inliers"],
            )
        )
        frame_idx += 1

    name = f"{spec.trajectory}-seed{spec.seed}"
    return SequenceBundle(name=name, imu=imu, ground_truth=ground_truth, vo=vo)
