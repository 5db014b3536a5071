"""CSV ingestion and emission for sensor streams and results.

Loaders target the ASL-style comma-separated layout (nanosecond integer
timestamps, one record per line, '#' comments) and validate rather than
repair: malformed rows, duplicate or backward timestamps, and denormalized
quaternions are reported as errors with the offending line number.

Writers format floats with repr, which is the shortest string that parses
back to the identical double, so a write/load round trip is lossless and
byte-stable across runs.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .adaptive import QualityMetrics
from .dynamics import ImuSample
from .errors import DataError, EmptySequenceError, ParseError
from .evaluation import TrajectorySample

logger = logging.getLogger(__name__)

#: Tolerated deviation of a stored quaternion norm from 1.
QUAT_NORM_TOL = 1e-3

VO_FULL_COLS = 14
VO_BARE_COLS = 7

#: Default metric values assumed when a replay file carries no metric
#: columns: full entropy and zeros elsewhere, i.e. a benign frame.
VO_DEFAULT_METRICS = {
    "intensity": 0.0,
    "entropy": 8.0,
    "blur": 0.0,
    "pose_chi2": 0.0,
    "culled_keyframes": 0.0,
    "projection_error": 0.0,
}


@dataclass
class VisualMeasurement:
    """One visual odometry output: pose/velocity plus quality metrics."""

    t: int
    p: np.ndarray
    v: np.ndarray
    metrics: QualityMetrics = field(default_factory=QualityMetrics)
    num_inliers: float = 0.0

    def __post_init__(self) -> None:
        self.t = int(self.t)
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)


@dataclass
class SequenceBundle:
    """Everything one run consumes: IMU, reference states, visual stream."""

    name: str
    imu: list[ImuSample]
    ground_truth: list[TrajectorySample]
    vo: list[VisualMeasurement]
    frames: list | None = None

    def duration_s(self) -> float:
        if len(self.imu) < 2:
            return 0.0
        return (self.imu[-1].t - self.imu[0].t) * 1e-9


def _fmt(x: float) -> str:
    return repr(float(x))


def _data_lines(path):
    """Yield (line_number, fields) for content rows of a CSV file."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, [f.strip() for f in line.split(",")]


def _check_monotone(path, times: list[int]) -> None:
    for i in range(1, len(times)):
        if times[i] == times[i - 1]:
            raise DataError(f"{path}: duplicate timestamp {times[i]}")
        if times[i] < times[i - 1]:
            raise DataError(
                f"{path}: non-monotone timestamps ({times[i-1]} then {times[i]})"
            )


def load_euroc_imu(path) -> list[ImuSample]:
    """Load an IMU CSV: timestamp_ns, gyro xyz (rad/s), accel xyz (m/s^2)."""
    samples: list[ImuSample] = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 7:
            raise ParseError(f"{path}:{lineno}: expected 7 columns, got {len(fields)}")
        try:
            t = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        samples.append(ImuSample(t=t, omega=np.array(vals[0:3]), accel=np.array(vals[3:6])))
    if not samples:
        raise EmptySequenceError(f"{path}: no IMU records")
    _check_monotone(path, [s.t for s in samples])
    return samples


def load_ground_truth(path) -> list[TrajectorySample]:
    """Load a state CSV: timestamp, p xyz, q wxyz, v xyz [, b_w xyz, b_a xyz].

    Eleven columns are required; files carrying the two bias triples (gyro
    first, then accelerometer) get them attached to the samples, and any
    further columns are ignored. Quaternions are renormalized; a norm
    off by more than 1e-3 is treated as corrupt data.
    """
    samples: list[TrajectorySample] = []
    for lineno, fields in _data_lines(path):
        if len(fields) < 11:
            raise ParseError(f"{path}:{lineno}: expected >= 11 columns, got {len(fields)}")
        try:
            t = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        q = np.array(vals[3:7])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise DataError(f"{path}:{lineno}: quaternion norm {norm:.6f} too far from 1")
        b_g = b_a = None
        if len(fields) >= 17:
            b_g = np.array(vals[10:13])
            b_a = np.array(vals[13:16])
        samples.append(
            TrajectorySample(
                t=t,
                p=np.array(vals[0:3]),
                q=q / norm,
                v=np.array(vals[7:10]),
                b_a=b_a,
                b_g=b_g,
            )
        )
    if not samples:
        raise EmptySequenceError(f"{path}: no state records")
    _check_monotone(path, [s.t for s in samples])
    return samples


def load_vo_replay(path) -> list[VisualMeasurement]:
    """Load a visual odometry replay CSV.

    Full rows carry 14 columns: timestamp, p xyz, v xyz, intensity,
    entropy, blur, pose_chi2, culled_kf, projection_error, num_inliers.
    Bare 7-column rows (pose and velocity only) are accepted with benign
    default metrics and a single warning for the file.
    """
    out: list[VisualMeasurement] = []
    defaulted = 0
    for lineno, fields in _data_lines(path):
        if len(fields) not in (VO_BARE_COLS, VO_FULL_COLS):
            raise ParseError(
                f"{path}:{lineno}: expected {VO_BARE_COLS} or {VO_FULL_COLS} "
                f"columns, got {len(fields)}"
            )
        try:
            t = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        p = np.array(vals[0:3])
        v = np.array(vals[3:6])
        if len(fields) == VO_FULL_COLS:
            metrics = QualityMetrics(
                intensity=vals[6],
                entropy=vals[7],
                blur=vals[8],
                pose_chi2=vals[9],
                culled_keyframes=vals[10],
                projection_error=vals[11],
            )
            inliers = vals[12]
        else:
            metrics = QualityMetrics(**VO_DEFAULT_METRICS)
            inliers = 0.0
            defaulted += 1
        out.append(VisualMeasurement(t=t, p=p, v=v, metrics=metrics, num_inliers=inliers))
    if not out:
        raise EmptySequenceError(f"{path}: no visual records")
    if defaulted:
        logger.warning(
            "%s: %d rows lacked metric columns; benign defaults assumed", path, defaulted
        )
    _check_monotone(path, [m.t for m in out])
    return out


def write_euroc_imu(path, samples: list[ImuSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n")
        for s in samples:
            row = [str(s.t)] + [_fmt(x) for x in s.omega] + [_fmt(x) for x in s.accel]
            fh.write(",".join(row) + "\n")


def write_trajectory(path, samples: list[TrajectorySample]) -> None:
    """Write timestamp, p xyz, q wxyz, v xyz rows (v defaults to zero)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("#timestamp [ns],p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z\n")
        for s in samples:
            v = s.v if s.v is not None else np.zeros(3)
            row = (
                [str(s.t)]
                + [_fmt(x) for x in s.p]
                + [_fmt(x) for x in s.q]
                + [_fmt(x) for x in v]
            )
            fh.write(",".join(row) + "\n")


def write_ground_truth(path, samples: list[TrajectorySample]) -> None:
    """Like write_trajectory but appends bias triples when present."""
    with_bias = all(s.b_a is not None and s.b_g is not None for s in samples)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = "#timestamp [ns],p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z"
        if with_bias:
            header += ",b_w_x,b_w_y,b_w_z,b_a_x,b_a_y,b_a_z"
        fh.write(header + "\n")
        for s in samples:
            v = s.v if s.v is not None else np.zeros(3)
            row = (
                [str(s.t)]
                + [_fmt(x) for x in s.p]
                + [_fmt(x) for x in s.q]
                + [_fmt(x) for x in v]
            )
            if with_bias:
                row += [_fmt(x) for x in s.b_g] + [_fmt(x) for x in s.b_a]
            fh.write(",".join(row) + "\n")


def write_vo_replay(path, measurements: list[VisualMeasurement]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "#timestamp [ns],p_x,p_y,p_z,v_x,v_y,v_z,intensity,entropy,blur,"
            "pose_chi2,culled_kf,projection_error,num_inliers\n"
        )
        for m in measurements:
            q = m.metrics
            row = (
                [str(m.t)]
                + [_fmt(x) for x in m.p]
                + [_fmt(x) for x in m.v]
                + [
                    _fmt(q.intensity),
                    _fmt(q.entropy),
                    _fmt(q.blur),
                    _fmt(q.pose_chi2),
                    _fmt(q.culled_keyframes),
                    _fmt(q.projection_error),
                    _fmt(m.num_inliers),
                ]
            )
            fh.write(",".join(row) + "\n")


def save_bundle(directory, bundle: SequenceBundle) -> dict[str, str]:
    """Write a bundle's streams into a directory; returns the file map.

    Empty optional streams (ground truth, visual) are not written, so the
    directory loads back with the same shape.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {"imu": os.path.join(directory, "imu.csv")}
    write_euroc_imu(paths["imu"], bundle.imu)
    if bundle.ground_truth:
        paths["ground_truth"] = os.path.join(directory, "ground_truth.csv")
        write_ground_truth(paths["ground_truth"], bundle.ground_truth)
    if bundle.vo:
        paths["vo"] = os.path.join(directory, "vo.csv")
        write_vo_replay(paths["vo"], bundle.vo)
    return paths


def load_bundle(directory, name: str | None = None) -> SequenceBundle:
    """Load imu.csv / ground_truth.csv / vo.csv from a directory.

    Ground truth and visual streams are optional files; the IMU stream is
    not.
    """
    imu_path = os.path.join(directory, "imu.csv")
    gt_path = os.path.join(directory, "ground_truth.csv")
    vo_path = os.path.join(directory, "vo.csv")
    if not os.path.exists(imu_path):
        raise DataError(f"{directory}: missing imu.csv")
    gt = load_ground_truth(gt_path) if os.path.exists(gt_path) else []
    vo = load_vo_replay(vo_path) if os.path.exists(vo_path) else []
    return SequenceBundle(
        name=name or os.path.basename(os.path.abspath(directory)),
        imu=load_euroc_imu(imu_path),
        ground_truth=gt,
        vo=vo,
    )


def write_csv_rows(path, fieldnames: list[str], rows: list[dict]) -> None:
    """Write dict rows; floats via repr, everything else via str."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            out = []
            for name in fieldnames:
                val = row.get(name, "")
                if isinstance(val, bool):
                    out.append(str(val).lower())
                elif isinstance(val, float):
                    out.append(_fmt(val))
                else:
                    out.append(str(val))
            writer.writerow(out)


def write_correlation_csv(path, labels: list[str], matrix: np.ndarray) -> None:
    """Correlation matrix as CSV; undefined entries become 'undef'."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + labels)
        for i, label in enumerate(labels):
            row = [label]
            for j in range(len(labels)):
                val = matrix[i, j]
                row.append("undef" if not np.isfinite(val) else _fmt(float(val)))
            writer.writerow(row)
