"""Trajectory error metrics: association, alignment, ATE, attitude RMSE.

Estimated and reference trajectories are matched by nearest timestamp,
optionally aligned with a closed-form SE(3) (or Sim(3)) fit over the
matched positions, and reduced to the usual RMSE numbers. Attitude error
is reported both as a quaternion geodesic angle and per Euler axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import manifold
from .errors import (
    DataError,
    DegenerateAlignmentError,
    EmptyAssociationError,
    InsufficientDataError,
    InvalidInputError,
)

#: Pitch magnitude (degrees) beyond which ZYX Euler extraction is flagged.
GIMBAL_PITCH_DEG = 89.0

#: Relative singular-value cutoff for the alignment rank test.
RANK_TOL = 1e-9


@dataclass
class TrajectorySample:
    """One timestamped state sample.

    Velocity and biases are optional; reference trajectories from datasets
    carry them, estimator outputs carry at least velocity, plain position
    tracks carry neither.
    """

    t: int
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray | None = None
    b_a: np.ndarray | None = None
    b_g: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.t = int(self.t)
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float).reshape(3)
        if self.b_a is not None:
            self.b_a = np.asarray(self.b_a, dtype=float).reshape(3)
        if self.b_g is not None:
            self.b_g = np.asarray(self.b_g, dtype=float).reshape(3)


@dataclass
class ErrorReport:
    """RMSE summary over one estimated-vs-reference trajectory pair."""

    n_pairs: int
    ate_rmse: float
    rmse_x: float
    rmse_y: float
    rmse_z: float
    quat_rmse_deg: float
    roll_rmse_deg: float
    pitch_rmse_deg: float
    yaw_rmse_deg: float
    roll_rmse_raw_deg: float
    pitch_rmse_raw_deg: float
    yaw_rmse_raw_deg: float
    euler_unreliable: bool
    aligned: bool


def associate(
    est: list[TrajectorySample],
    gt: list[TrajectorySample],
    max_dt: float = 0.005,
) -> list[tuple[TrajectorySample, TrajectorySample]]:
    """Nearest-neighbor timestamp matching within max_dt seconds.

    Both inputs must be timestamp-sorted. Every estimate is matched to its
    closest reference sample; matches farther than max_dt are dropped. An
    empty result raises.
    """
    if not est or not gt:
        raise EmptyAssociationError("cannot associate empty trajectories")
    est_t = np.array([s.t for s in est], dtype=np.int64)
    gt_t = np.array([s.t for s in gt], dtype=np.int64)
    if np.any(np.diff(est_t) < 0) or np.any(np.diff(gt_t) < 0):
        raise DataError("associate requires timestamp-sorted trajectories")
    max_dt_ns = int(round(max_dt * 1e9))
    idx = np.searchsorted(gt_t, est_t)
    pairs = []
    for i, t in enumerate(est_t):
        j = idx[i]
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(gt_t):
                d = abs(int(gt_t[cand]) - int(t))
                if best is None or d < best[1]:
                    best = (cand, d)
        if best is not None and best[1] <= max_dt_ns:
            pairs.append((est[i], gt[best[0]]))
    if not pairs:
        raise EmptyAssociationError(
            f"no pairs within {max_dt} s between trajectories of length "
            f"{len(est)} and {len(gt)}"
        )
    return pairs


def align_se3(
    pairs: list[tuple[TrajectorySample, TrajectorySample]],
    with_scale: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form rigid (optionally similarity) fit of est onto reference.

    Minimizes sum ||s R p_est + t - p_ref||^2 over rotation R, translation
    t and, when with_scale is set, a scalar s (otherwise s = 1). Centered
    estimate positions of rank below 3 (static, collinear or planar data)
    raise DegenerateAlignmentError.
    """
    if len(pairs) < 3:
        raise DegenerateAlignmentError(f"alignment needs >= 3 pairs, got {len(pairs)}")
    p_est = np.array([a.p for a, _ in pairs])
    p_ref = np.array([b.p for _, b in pairs])
    mu_est = p_est.mean(axis=0)
    mu_ref = p_ref.mean(axis=0)
    e = p_est - mu_est
    g = p_ref - mu_ref
    sv = np.linalg.svd(e, compute_uv=False)
    if sv[0] <= 0.0 or sv[2] <= RANK_TOL * sv[0]:
        raise DegenerateAlignmentError(
            "centered estimate positions are rank-deficient; cannot fit a unique rotation"
        )
    h = e.T @ g
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    r = vt.T @ corr @ u.T
    if with_scale:
        var_e = (e**2).sum() / len(pairs)
        scale = float((s * np.diag(corr)).sum() / (len(pairs) * var_e))
    else:
        scale = 1.0
    t = mu_ref - scale * (r @ mu_est)
    return r, t, scale


def ate(
    pairs: list[tuple[TrajectorySample, TrajectorySample]],
    alignment: tuple[np.ndarray, np.ndarray, float] | None = None,
) -> tuple[float, float, float, float]:
    """Absolute trajectory error: (rmse, rmse_x, rmse_y, rmse_z) in meters.

    With an alignment triple the estimate is transformed before
    differencing; otherwise raw positions are compared.
    """
    if not pairs:
        raise EmptyAssociationError("ate of an empty association")
    p_est = np.array([a.p for a, _ in pairs])
    p_ref = np.array([b.p for _, b in pairs])
    if alignment is not None:
        r, t, s = alignment
        p_est = s * (p_est @ r.T) + t
    res = p_est - p_ref
    per_axis = np.sqrt((res**2).mean(axis=0))
    total = math.sqrt(float((res**2).sum(axis=1).mean()))
    return total, float(per_axis[0]), float(per_axis[1]), float(per_axis[2])


def quat_rmse(
    pairs: list[tuple[TrajectorySample, TrajectorySample]],
    r_align: np.ndarray | None = None,
) -> float:
    """RMS geodesic attitude error in degrees.

    Per pair the error angle is 2 acos(|w|) of the relative quaternion
    q_ref^-1 (x) q_est, with the alignment rotation applied to the estimate
    first when given.
    """
    if not pairs:
        raise EmptyAssociationError("quat_rmse of an empty association")
    q_corr = manifold.rotmat_to_quat(r_align) if r_align is not None else None
    sq_sum = 0.0
    for est_s, ref_s in pairs:
        q_e = est_s.q if q_corr is None else manifold.quat_mul(q_corr, est_s.q)
        rel = manifold.quat_mul(manifold.quat_conj(ref_s.q), q_e)
        w = min(abs(float(rel[0])), 1.0)
        ang = math.degrees(2.0 * math.acos(w))
        sq_sum += ang * ang
    return math.sqrt(sq_sum / len(pairs))


def quat_to_euler_zyx(q: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic ZYX (yaw-pitch-roll) angles in degrees from a unit quaternion."""
    w, x, y, z = (float(c) for c in q)
    yaw = math.degrees(math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))
    sp = 2.0 * (w * y - z * x)
    pitch = math.degrees(math.asin(min(max(sp, -1.0), 1.0)))
    roll = math.degrees(math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y)))
    return roll, pitch, yaw


def _wrap_deg(d: float) -> float:
    """Wrap a degree difference into (-180, 180]."""
    out = (d + 180.0) % 360.0 - 180.0
    if out == -180.0:
        out = 180.0
    return out


def euler_rmse(
    pairs: list[tuple[TrajectorySample, TrajectorySample]],
    r_align: np.ndarray | None = None,
) -> tuple[float, float, float, bool]:
    """Per-axis Euler RMSE (roll, pitch, yaw) in degrees plus a gimbal flag.

    Angle differences are wrapped into (-180, 180] before squaring. The
    flag is set when any sample of either trajectory has |pitch| above 89
    degrees, where the ZYX decomposition loses reliability.
    """
    if not pairs:
        raise EmptyAssociationError("euler_rmse of an empty association")
    q_corr = manifold.rotmat_to_quat(r_align) if r_align is not None else None
    sums = [0.0, 0.0, 0.0]
    unreliable = False
    for est_s, ref_s in pairs:
        q_e = est_s.q if q_corr is None else manifold.quat_mul(q_corr, est_s.q)
        ang_e = quat_to_euler_zyx(q_e)
        ang_r = quat_to_euler_zyx(ref_s.q)
        if abs(ang_e[1]) > GIMBAL_PITCH_DEG or abs(ang_r[1]) > GIMBAL_PITCH_DEG:
            unreliable = True
        for k in range(3):
            d = _wrap_deg(ang_e[k] - ang_r[k])
            sums[k] += d * d
    n = len(pairs)
    return (
        math.sqrt(sums[0] / n),
        math.sqrt(sums[1] / n),
        math.sqrt(sums[2] / n),
        unreliable,
    )


def evaluate_trajectories(
    est: list[TrajectorySample],
    gt: list[TrajectorySample],
    max_dt: float = 0.005,
    align: bool = True,
    with_scale: bool = False,
) -> ErrorReport:
    """Associate, optionally align, and reduce to an ErrorReport.

    Euler RMSE is reported twice: once with the alignment rotation applied
    and once raw, since yaw alignment can hide or create heading error
    depending on what the reader is after.
    """
    pairs = associate(est, gt, max_dt)
    alignment = None
    if align:
        alignment = align_se3(pairs, with_scale=with_scale)
    total, rx, ry, rz = ate(pairs, alignment)
    r_align = alignment[0] if alignment is not None else None
    q_rmse = quat_rmse(pairs, r_align)
    roll_a, pitch_a, yaw_a, flag_a = euler_rmse(pairs, r_align)
    roll_r, pitch_r, yaw_r, flag_r = euler_rmse(pairs, None)
    return ErrorReport(
        n_pairs=len(pairs),
        ate_rmse=total,
        rmse_x=rx,
        rmse_y=ry,
        rmse_z=rz,
        quat_rmse_deg=q_rmse,
        roll_rmse_deg=roll_a,
        pitch_rmse_deg=pitch_a,
        yaw_rmse_deg=yaw_a,
        roll_rmse_raw_deg=roll_r,
        pitch_rmse_raw_deg=pitch_r,
        yaw_rmse_raw_deg=yaw_r,
        euler_unreliable=flag_a or flag_r,
        aligned=align,
    )


def timing_report(
    processing_s: dict[str, float],
    sequence_duration_s: float,
    per_step_s: dict[str, list[float]] | None = None,
) -> list[dict[str, float | str]]:
    """Per-mode wall-clock summary with real-time factors.

    RTF is sequence duration over processing time, so above 1 means faster
    than real time. Per-step latency statistics (mean, p99) are included
    when step samples are given.
    """
    if sequence_duration_s <= 0.0:
        raise InvalidInputError("sequence duration must be positive")
    rows: list[dict[str, float | str]] = []
    for name in processing_s:
        proc = processing_s[name]
        if proc <= 0.0:
            raise InvalidInputError(f"processing time for {name} must be positive")
        row: dict[str, float | str] = {
            "mode": name,
            "processing_s": proc,
            "rtf": sequence_duration_s / proc,
        }
        if per_step_s is not None and name in per_step_s and per_step_s[name]:
            arr = np.asarray(per_step_s[name], dtype=float)
            row["mean_step_s"] = float(arr.mean())
            row["p99_step_s"] = float(np.percentile(arr, 99))
        rows.append(row)
    return rows


def metric_correlation(
    metrics: dict[str, list[float]],
    window_ate: list[float],
    min_windows: int = 10,
) -> tuple[list[str], np.ndarray]:
    """Pearson correlation matrix between metric streams and windowed ATE.

    Returns the label list (metrics in insertion order, then "ate") and
    the symmetric correlation matrix. Any pair involving a zero-variance
    stream is undefined and reported as NaN rather than an arbitrary
    number.
    """
    n = len(window_ate)
    if n < min_windows:
        raise InsufficientDataError(
            f"need at least {min_windows} windows for correlation, got {n}"
        )
    for name, vals in metrics.items():
        if len(vals) != n:
            raise InvalidInputError(
                f"metric stream {name} has {len(vals)} entries, expected {n}"
            )
    labels = list(metrics.keys()) + ["ate"]
    columns = [np.asarray(metrics[k], dtype=float) for k in metrics] + [
        np.asarray(window_ate, dtype=float)
    ]
    m = len(labels)
    out = np.full((m, m), np.nan)
    centered = [c - c.mean() for c in columns]
    norms = [float(np.sqrt((c**2).sum())) for c in centered]
    for i in range(m):
        for j in range(i, m):
            if norms[i] > 0.0 and norms[j] > 0.0:
                val = float(centered[i] @ centered[j] / (norms[i] * norms[j]))
                out[i, j] = out[j, i] = min(max(val, -1.0), 1.0)
        if norms[i] > 0.0:
            out[i, i] = 1.0
    return labels, out


def nees(dx: np.ndarray, p_mat: np.ndarray) -> float:
    """Normalized estimation error squared: dx^T P^-1 dx."""
    dx = np.asarray(dx, dtype=float)
    sol = np.linalg.solve(p_mat, dx)
    return float(dx @ sol)


def chi2_interval(dof: int, coverage: float = 0.95) -> tuple[float, float]:
    """Central chi-square interval bounds for a consistency envelope."""
    if not 0.0 < coverage < 1.0:
        raise InvalidInputError("coverage must be in (0, 1)")
    tail = (1.0 - coverage) / 2.0
    return float(chi2.ppf(tail, dof)), float(chi2.ppf(1.0 - tail, dof))
