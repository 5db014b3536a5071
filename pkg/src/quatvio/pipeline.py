"""End-to-end estimation runs over a sensor bundle.

run_pipeline drives one filter across an IMU stream, applying stationary
pseudo-measurements and visual updates as their timestamps come due, and
returns the estimated trajectory together with per-update logs, timing,
and counters. compare_modes repeats a run across all filter modes and
reduces the results to relative accuracy and timing tables; sweep searches
the adaptive parameter space.

Stationarity gating is deliberately stricter than the raw variance
detector: a constant-rate turn has the same short-window variance as
standing still, so zero-velocity and gravity updates additionally require
a near-zero mean turn rate and a near-zero velocity estimate.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptive import (
    AdaptiveParams,
    adaptive_covariance,
    adaptive_sigmas,
    calibrate_pose_chi2_bound,
    confidence_scores,
    normalize_metrics,
)
from .dynamics import ImuNoiseModel, NominalState
from .errors import (
    ConfigError,
    DegenerateAlignmentError,
    DivergenceError,
    EmptySequenceError,
    InvalidInputError,
)
from .evaluation import ErrorReport, TrajectorySample, evaluate_trajectories
from .filtering import (
    FilterMode,
    FilterState,
    MeasurementNoise,
    SutParams,
    detect_stationary,
    gravity_update,
    propagate,
    visual_update,
    zupt_update,
)
from .io import SequenceBundle, write_csv_rows

MODE_ORDER = (
    FilterMode.ESKF,
    FilterMode.FULL_SUKF,
    FilterMode.HYBRID_QF,
    FilterMode.ADAPTIVE_HYBRID_QF,
)

#: Adaptive parameters the sweep is allowed to vary.
SWEEPABLE = ("w_thr", "d_thr", "s", "alpha", "beta", "gamma", "zeta")

VO_LOG_FIELDS = [
    "t",
    "theta_p",
    "theta_v",
    "sigma_p",
    "sigma_v",
    "innov_p_norm",
    "innov_v_norm",
    "accepted",
    "intensity",
    "entropy",
    "blur",
    "pose_chi2",
    "culled_kf",
    "projection_error",
    "num_inliers",
]


def _default_p_diag() -> np.ndarray:
    return np.repeat(
        np.array([0.01**2, 0.05**2, 0.05**2, 0.02**2, 0.002**2]), 3
    )


@dataclass
class RunConfig:
    """Everything a pipeline run needs besides the data itself."""

    mode: FilterMode = FilterMode.ESKF
    noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    meas: MeasurementNoise = field(default_factory=MeasurementNoise)
    adaptive: AdaptiveParams = field(default_factory=AdaptiveParams)
    sut: SutParams = field(default_factory=SutParams)
    seed: int = 0
    zupt_window: int = 40
    zupt_acc_std: float = 0.05
    zupt_gyro_std: float = 0.01
    zupt_gyro_mean: float = 0.02
    zupt_max_speed: float = 0.1
    gravity_eps: float = 0.05
    enable_zupt: bool = True
    enable_gravity: bool = True
    use_reset_jacobian: bool = False
    init_state: NominalState | None = None
    init_p_diag: np.ndarray = field(default_factory=_default_p_diag)
    calibrate_pose_chi2: bool = True
    calibration_window_s: float = 5.0

    def validate(self) -> "RunConfig":
        if not isinstance(self.mode, FilterMode):
            raise ConfigError(f"mode must be a FilterMode, got {self.mode!r}")
        self.noise.validate()
        self.meas.validate()
        self.adaptive.validate()
        if self.zupt_window < 20:
            raise ConfigError("zupt_window must be at least 20 samples")
        for name in ("zupt_acc_std", "zupt_gyro_std", "zupt_gyro_mean", "zupt_max_speed"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.gravity_eps <= 0.0:
            raise ConfigError("gravity_eps must be positive")
        try:
            self.init_p_diag = np.asarray(self.init_p_diag, dtype=float).reshape(15)
        except ValueError as exc:
            raise ConfigError(f"init_p_diag must have 15 entries: {exc}") from exc
        if np.any(self.init_p_diag < 0.0):
            raise ConfigError("init_p_diag entries must be >= 0")
        if self.calibration_window_s < 0.0:
            raise ConfigError("calibration_window_s must be >= 0")
        return self


@dataclass
class PipelineResult:
    """Outputs of one run: trajectory, logs, counters and wall times."""

    mode: FilterMode
    trajectory: list[TrajectorySample]
    vo_log: list[dict]
    n_propagations: int = 0
    n_visual: int = 0
    n_zupt: int = 0
    n_gravity: int = 0
    n_rejected: int = 0
    diverged: bool = False
    propagation_s: float = 0.0
    update_s: float = 0.0
    total_s: float = 0.0
    duration_s: float = 0.0
    step_times: list[float] = field(default_factory=list)
    snapshots: list[tuple[int, NominalState, np.ndarray]] | None = None

    def rtf(self) -> float:
        if self.total_s <= 0.0:
            return 0.0
        return self.duration_s / self.total_s


def _stationary(window, fs: FilterState, cfg: RunConfig) -> bool:
    if not detect_stationary(list(window), cfg.zupt_acc_std, cfg.zupt_gyro_std):
        return False
    mean_omega = np.mean([s.omega for s in window], axis=0) - fs.nominal.b_g
    if float(np.linalg.norm(mean_omega)) > cfg.zupt_gyro_mean:
        return False
    return float(np.linalg.norm(fs.nominal.v)) <= cfg.zupt_max_speed


def _state_sample(fs: FilterState) -> TrajectorySample:
    return TrajectorySample(
        t=fs.t, p=fs.nominal.p.copy(), q=fs.nominal.q.copy(), v=fs.nominal.v.copy()
    )


def run_pipeline(
    bundle: SequenceBundle,
    cfg: RunConfig,
    collect_covariances: bool = False,
) -> PipelineResult:
    """Run one filter over the bundle.

    The state initializes from the first reference sample when ground
    truth is present (biases start at zero) unless the config carries an
    explicit initial state. IMU samples at or before the initial time are
    skipped; visual updates apply once the propagated time passes their
    stamp. A divergence aborts the run and returns the partial trajectory
    with the flag set rather than raising.
    """
    cfg.validate()
    if not bundle.imu:
        raise EmptySequenceError(f"bundle {bundle.name!r} has no IMU samples")

    if bundle.ground_truth:
        ref0 = bundle.ground_truth[0]
        t_init = ref0.t
        x0 = cfg.init_state or NominalState(
            q=ref0.q.copy(),
            v=(ref0.v.copy() if ref0.v is not None else np.zeros(3)),
            p=ref0.p.copy(),
            b_a=np.zeros(3),
            b_g=np.zeros(3),
        )
    else:
        t_init = bundle.imu[0].t
        x0 = cfg.init_state or NominalState.identity()

    fs = FilterState(
        nominal=x0.copy(),
        P=np.diag(cfg.init_p_diag.copy()),
        t=t_init,
        mode=cfg.mode,
        sut=cfg.sut,
    )

    adaptive_mode = cfg.mode is FilterMode.ADAPTIVE_HYBRID_QF
    params = cfg.adaptive
    if adaptive_mode and cfg.calibrate_pose_chi2 and bundle.vo:
        horizon = t_init + round(cfg.calibration_window_s * 1e9)
        values = [m.metrics.pose_chi2 for m in bundle.vo if m.t <= horizon]
        params = calibrate_pose_chi2_bound(values, params)

    result = PipelineResult(
        mode=cfg.mode,
        trajectory=[_state_sample(fs)],
        vo_log=[],
        snapshots=[] if collect_covariances else None,
    )
    if collect_covariances:
        result.snapshots.append((fs.t, fs.nominal.copy(), fs.P.copy()))

    window: deque = deque(maxlen=cfg.zupt_window)
    vo = bundle.vo
    vo_idx = 0
    while vo_idx < len(vo) and vo[vo_idx].t <= t_init:
        vo_idx += 1
    prev_metrics = None

    wall_start = time.perf_counter()
    for u in bundle.imu:
        if u.t <= fs.t:
            continue
        tic = time.perf_counter()
        try:
            fs = propagate(fs, u, cfg.noise)
        except DivergenceError:
            result.diverged = True
            break
        step_s = time.perf_counter() - tic
        result.step_times.append(step_s)
        result.propagation_s += step_s
        result.n_propagations += 1
        window.append(u)

        tic = time.perf_counter()
        try:
            if (
                cfg.enable_zupt
                and len(window) == cfg.zupt_window
                and _stationary(window, fs, cfg)
            ):
                new_fs = zupt_update(fs, cfg.meas.r_zupt, cfg.use_reset_jacobian)
                if new_fs is fs:
                    result.n_rejected += 1
                else:
                    result.n_zupt += 1
                    fs = new_fs
                if cfg.enable_gravity:
                    new_fs = gravity_update(
                        fs,
                        u.accel,
                        cfg.noise,
                        eps_g=cfg.gravity_eps,
                        r_acc=cfg.meas.r_acc,
                        use_reset_jacobian=cfg.use_reset_jacobian,
                    )
                    if new_fs is not fs:
                        result.n_gravity += 1
                        fs = new_fs

            while vo_idx < len(vo) and vo[vo_idx].t <= u.t:
                m = vo[vo_idx]
                vo_idx += 1
                if adaptive_mode:
                    nm = normalize_metrics(m.metrics, prev_metrics, params.norm_bounds)
                    theta_p, theta_v = confidence_scores(nm, params)
                    sigma_p, sigma_v = adaptive_sigmas(theta_p, theta_v, params)
                    r_vis = adaptive_covariance(theta_p, theta_v, params)
                    prev_metrics = m.metrics
                else:
                    theta_p = theta_v = ""
                    r_vis = cfg.meas.r_vis
                    sigma_p = math.sqrt(float(r_vis[0, 0]))
                    sigma_v = math.sqrt(float(r_vis[3, 3]))
                new_fs, innov = visual_update(
                    fs, m.p, m.v, r_vis, use_reset_jacobian=cfg.use_reset_jacobian
                )
                accepted = new_fs is not fs
                if accepted:
                    result.n_visual += 1
                    fs = new_fs
                else:
                    result.n_rejected += 1
                result.vo_log.append(
                    {
                        "t": m.t,
                        "theta_p": theta_p,
                        "theta_v": theta_v,
                        "sigma_p": sigma_p,
                        "sigma_v": sigma_v,
                        "innov_p_norm": float(np.linalg.norm(innov[0:3])),
                        "innov_v_norm": float(np.linalg.norm(innov[3:6])),
                        "accepted": accepted,
                        "intensity": m.metrics.intensity,
                        "entropy": m.metrics.entropy,
                        "blur": m.metrics.blur,
                        "pose_chi2": m.metrics.pose_chi2,
                        "culled_kf": m.metrics.culled_keyframes,
                        "projection_error": m.metrics.projection_error,
                        "num_inliers": m.num_inliers,
                    }
                )
        except DivergenceError:
            result.diverged = True
            break
        finally:
            result.update_s += time.perf_counter() - tic

        result.trajectory.append(_state_sample(fs))
        if collect_covariances:
            result.snapshots.append((fs.t, fs.nominal.copy(), fs.P.copy()))

    result.total_s = time.perf_counter() - wall_start
    result.duration_s = max((fs.t - t_init) * 1e-9, 0.0)
    return result


def evaluate_run(
    result: PipelineResult,
    ground_truth: list[TrajectorySample],
    max_dt: float = 0.005,
) -> ErrorReport:
    """Evaluate a run against reference states, aligned when possible.

    Degenerate geometry (static or planar tracks) silently falls back to
    an unaligned comparison; the report's aligned flag records which
    branch ran.
    """
    try:
        return evaluate_trajectories(result.trajectory, ground_truth, max_dt=max_dt)
    except DegenerateAlignmentError:
        return evaluate_trajectories(
            result.trajectory, ground_truth, max_dt=max_dt, align=False
        )


@dataclass
class ComparisonReport:
    """Per-mode accuracy and timing, plus pairwise relative improvements."""

    reports: dict[str, ErrorReport]
    timing: list[dict]
    relative: list[dict]
    timing_relative: list[dict]
    timing_ordering_ok: bool
    diverged: dict[str, bool]


def _run_mode_worker(args) -> PipelineResult:
    bundle, cfg, mode = args
    return run_pipeline(bundle, dataclasses.replace(cfg, mode=mode))


def _improvement_pct(ref: float, val: float) -> float:
    if ref <= 0.0:
        return float("nan")
    return (ref - val) / ref * 100.0


def compare_modes(
    bundle: SequenceBundle,
    cfg: RunConfig,
    jobs: int = 1,
    modes: tuple = MODE_ORDER,
) -> ComparisonReport:
    """Run every mode on the same bundle and tabulate relative results.

    Accuracy improvements are percentages of the reference mode's error
    (positive means better). Timing rows live in separate tables because
    wall-clock numbers are not reproducible bit for bit; the report also
    records whether mean propagation cost ordered as ESKF < HYBRID <
    FULL_SUKF.
    """
    args = [(bundle, cfg, mode) for mode in modes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_mode_worker, args))
    else:
        results = [_run_mode_worker(a) for a in args]
    by_mode = {mode.value: res for mode, res in zip(modes, results)}

    reports = {}
    diverged = {}
    for name, res in by_mode.items():
        reports[name] = evaluate_run(res, bundle.ground_truth)
        diverged[name] = res.diverged

    timing = []
    for name, res in by_mode.items():
        arr = np.asarray(res.step_times, dtype=float)
        timing.append(
            {
                "mode": name,
                "processing_s": res.total_s,
                "rtf": res.rtf(),
                "propagation_s": res.propagation_s,
                "mean_step_s": float(arr.mean()) if arr.size else 0.0,
                "p99_step_s": float(np.percentile(arr, 99)) if arr.size else 0.0,
            }
        )

    def _mean_step(name: str) -> float:
        for row in timing:
            if row["mode"] == name:
                return row["mean_step_s"]
        return float("nan")

    eskf = FilterMode.ESKF.value
    full = FilterMode.FULL_SUKF.value
    hybrid = FilterMode.HYBRID_QF.value
    adaptive = FilterMode.ADAPTIVE_HYBRID_QF.value

    relative = []
    for label, attr in (
        ("rotation_rmse_deg", "quat_rmse_deg"),
        ("position_ate_m", "ate_rmse"),
    ):
        row = {"metric": label}
        if eskf in reports and hybrid in reports:
            row["hybrid_vs_eskf_pct"] = _improvement_pct(
                getattr(reports[eskf], attr), getattr(reports[hybrid], attr)
            )
        if full in reports and hybrid in reports:
            row["hybrid_vs_full_sukf_pct"] = _improvement_pct(
                getattr(reports[full], attr), getattr(reports[hybrid], attr)
            )
        if hybrid in reports and adaptive in reports:
            row["adaptive_vs_hybrid_pct"] = _improvement_pct(
                getattr(reports[hybrid], attr), getattr(reports[adaptive], attr)
            )
        relative.append(row)

    timing_relative = [
        {
            "metric": "mean_step_time_s",
            "hybrid_vs_eskf_pct": _improvement_pct(_mean_step(eskf), _mean_step(hybrid)),
            "hybrid_vs_full_sukf_pct": _improvement_pct(
                _mean_step(full), _mean_step(hybrid)
            ),
            "adaptive_vs_hybrid_pct": _improvement_pct(
                _mean_step(hybrid), _mean_step(adaptive)
            ),
        }
    ]
    ordering_ok = _mean_step(eskf) < _mean_step(hybrid) < _mean_step(full)

    return ComparisonReport(
        reports=reports,
        timing=timing,
        relative=relative,
        timing_relative=timing_relative,
        timing_ordering_ok=bool(ordering_ok),
        diverged=diverged,
    )


ACCURACY_FIELDS = [
    "mode",
    "n_pairs",
    "ate_rmse",
    "rmse_x",
    "rmse_y",
    "rmse_z",
    "quat_rmse_deg",
    "roll_rmse_deg",
    "pitch_rmse_deg",
    "yaw_rmse_deg",
    "roll_rmse_raw_deg",
    "pitch_rmse_raw_deg",
    "yaw_rmse_raw_deg",
    "euler_unreliable",
    "aligned",
    "diverged",
]

RELATIVE_FIELDS = [
    "metric",
    "hybrid_vs_eskf_pct",
    "hybrid_vs_full_sukf_pct",
    "adaptive_vs_hybrid_pct",
]

TIMING_FIELDS = [
    "mode",
    "processing_s",
    "rtf",
    "propagation_s",
    "mean_step_s",
    "p99_step_s",
]


def write_comparison(out_dir, report: ComparisonReport) -> dict[str, str]:
    """Emit accuracy.csv / relative.csv (deterministic) and timing.csv."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    acc_rows = []
    for name, rep in report.reports.items():
        row = {"mode": name, "diverged": report.diverged[name]}
        row.update(dataclasses.asdict(rep))
        acc_rows.append(row)
    paths = {
        "accuracy": os.path.join(out_dir, "accuracy.csv"),
        "relative": os.path.join(out_dir, "relative.csv"),
        "timing": os.path.join(out_dir, "timing.csv"),
    }
    write_csv_rows(paths["accuracy"], ACCURACY_FIELDS, acc_rows)
    write_csv_rows(paths["relative"], RELATIVE_FIELDS, report.relative)
    timing_rows = report.timing + [
        {"mode": f"ordering_ok={str(report.timing_ordering_ok).lower()}"}
    ]
    write_csv_rows(paths["timing"], TIMING_FIELDS, timing_rows)
    extra = report.timing_relative
    write_csv_rows(
        os.path.join(out_dir, "timing_relative.csv"), RELATIVE_FIELDS, extra
    )
    paths["timing_relative"] = os.path.join(out_dir, "timing_relative.csv")
    return paths


def _sweep_worker(args) -> dict:
    bundle, cfg, combo = args
    label = ",".join(f"{k}={v}" for k, v in sorted(combo.items()))
    res = run_pipeline(bundle, cfg)
    rep = evaluate_run(res, bundle.ground_truth)
    return {
        "params": label,
        "ate_rmse": rep.ate_rmse,
        "quat_rmse_deg": rep.quat_rmse_deg,
        "diverged": res.diverged,
    }


def sweep(
    bundle: SequenceBundle,
    cfg: RunConfig,
    grid: dict[str, list[float]],
    strategy: str = "ovat",
    jobs: int = 1,
) -> list[dict]:
    """Search adaptive parameters, minimizing aligned position ATE.

    "ovat" varies one parameter at a time off the base config, so the run
    count is the sum of the grid sizes; "grid" takes the full product.
    Runs always use the adaptive mode. Rows come back ranked best first,
    with ties broken by the parameter label so the output is stable.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid must be non-empty with non-empty value lists")
    for key in grid:
        if key not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {key!r}; choose from {SWEEPABLE}")
    if strategy not in ("ovat", "grid"):
        raise ConfigError(f"unknown sweep strategy {strategy!r}")

    combos: list[dict] = []
    if strategy == "ovat":
        for key in grid:
            for val in grid[key]:
                combos.append({key: float(val)})
    else:
        keys = list(grid.keys())
        for values in itertools.product(*(grid[k] for k in keys)):
            combos.append({k: float(v) for k, v in zip(keys, values)})

    tasks = []
    for combo in combos:
        params = dataclasses.replace(cfg.adaptive, **combo).validate()
        run_cfg = dataclasses.replace(
            cfg, adaptive=params, mode=FilterMode.ADAPTIVE_HYBRID_QF
        )
        tasks.append((bundle, run_cfg, combo))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, tasks))
    else:
        rows = [_sweep_worker(t) for t in tasks]

    rows.sort(key=lambda r: (r["diverged"], r["ate_rmse"], r["params"]))
    for rank, row in enumerate(rows, start=1):
        row["rank"] = rank
    return rows


SWEEP_FIELDS = ["rank", "params", "ate_rmse", "quat_rmse_deg", "diverged"]


def bench_propagation(
    n_steps: int,
    noise: ImuNoiseModel | None = None,
    sut: SutParams | None = None,
    seed: int = 0,
    modes: tuple = (FilterMode.ESKF, FilterMode.HYBRID_QF, FilterMode.FULL_SUKF),
    rate_hz: float = 200.0,
) -> list[dict]:
    """Time pure propagation per mode over a synthetic rotating stream."""
    from .dynamics import ImuSample

    if n_steps < 1:
        raise InvalidInputError("bench needs at least one step")
    noise = noise or ImuNoiseModel()
    sut = sut or SutParams()
    rng = np.random.default_rng(seed)
    dt_ns = round(1e9 / rate_hz)
    omegas = np.array([0.25, -0.15, 0.35]) + 0.02 * rng.standard_normal((n_steps, 3))
    accels = np.array([0.3, 0.1, 9.6]) + 0.05 * rng.standard_normal((n_steps, 3))
    rows = []
    for mode in modes:
        fs = FilterState(
            nominal=NominalState.identity(),
            P=np.eye(15) * 1e-4,
            t=0,
            mode=mode,
            sut=sut,
        )
        times = np.empty(n_steps)
        for k in range(n_steps):
            u = ImuSample(t=(k + 1) * dt_ns, omega=omegas[k], accel=accels[k])
            tic = time.perf_counter()
            fs = propagate(fs, u, noise)
            times[k] = time.perf_counter() - tic
        rows.append(
            {
                "mode": mode.value,
                "n_steps": n_steps,
                "total_s": float(times.sum()),
                "mean_step_s": float(times.mean()),
                "p99_step_s": float(np.percentile(times, 99)),
            }
        )
    return rows


BENCH_FIELDS = ["mode", "n_steps", "total_s", "mean_step_s", "p99_step_s"]
