"""Visual-quality metrics and the adaptive measurement-covariance policy.

A visual front-end is scored per frame along two axes:

- a static score theta_p from the frame itself (entropy, blur, optimizer
  chi-square, culled keyframes), driving the position noise sigma_p;
- a dynamic score theta_v from frame-to-frame changes of the normalized
  metrics, driving the velocity noise sigma_v.

Both raw scores pass through the CASEF activation, a clipped and scaled
exponential whose shape parameter s trades early sensitivity against a
late plateau. The resulting confidence maps piecewise onto a standard
deviation between configured bounds; the visual measurement covariance is
rebuilt as diag(sigma_p^2 I, sigma_v^2 I) every frame.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParseError

logger = logging.getLogger(__name__)

#: Metrics that participate in normalization, with default (min, max) bounds.
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "intensity": (0.0, 255.0),
    "entropy": (0.0, 8.0),
    "blur": (0.0, 1500.0),
    "pose_chi2": (0.0, 10.0),
    "culled_kf": (0.0, 10.0),
}


@dataclass
class QualityMetrics:
    """Raw per-frame quality statistics from the visual front-end."""

    intensity: float = 0.0
    entropy: float = 0.0
    blur: float = 0.0
    pose_chi2: float = 0.0
    culled_keyframes: float = 0.0
    projection_error: float = 0.0


@dataclass
class NormalizedMetrics:
    """Min-max normalized metrics plus frame-to-frame deltas, all in [0,1].

    projection_error is deliberately absent: it is logged for correlation
    reports but does not participate in the confidence scores.
    """

    intensity_n: float
    entropy_n: float
    blur_n: float
    pose_chi2_n: float
    culled_kf_n: float
    delta_intensity_n: float = 0.0
    delta_blur_n: float = 0.0
    delta_pose_chi2_n: float = 0.0
    delta_culled_kf_n: float = 0.0


@dataclass
class AdaptiveParams:
    """Thresholds, CASEF shape, dynamic weights and covariance bounds."""

    w_thr: float = 0.2
    d_thr: float = 0.95
    s: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    zeta: float = 1.0
    min_cov_p: float = 0.02
    max_cov_p: float = 1.0
    min_cov_v: float = 0.05
    max_cov_v: float = 2.0
    norm_bounds: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_BOUNDS)
    )

    def validate(self) -> "AdaptiveParams":
        if not 0.0 <= self.w_thr <= self.d_thr <= 1.0:
            raise InvalidInputError(
                f"thresholds must satisfy 0 <= w_thr <= d_thr <= 1, got "
                f"({self.w_thr}, {self.d_thr})"
            )
        if not math.isfinite(self.s):
            raise InvalidInputError("CASEF shape s must be finite")
        for name in ("alpha", "beta", "gamma", "zeta"):
            if getattr(self, name) < 0.0:
                raise InvalidInputError(f"dynamic weight {name} must be >= 0")
        for lo, hi in (
            (self.min_cov_p, self.max_cov_p),
            (self.min_cov_v, self.max_cov_v),
        ):
            if not (0.0 < lo < hi):
                raise InvalidInputError(f"covariance bounds ({lo}, {hi}) must be 0 < min < max")
        for name in DEFAULT_BOUNDS:
            if name not in self.norm_bounds:
                raise InvalidInputError(f"missing normalization bounds for {name}")
            lo, hi = self.norm_bounds[name]
            if not lo < hi:
                raise InvalidInputError(f"normalization bounds for {name} need min < max")
        return self


@dataclass
class GrayscaleFrame:
    """8-bit grayscale image; pixels stored row-major as (height, width)."""

    width: int
    height: int
    pixels: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.size != self.width * self.height:
            raise InvalidInputError(
                f"pixel count {self.pixels.size} != {self.width}x{self.height}"
            )
        self.pixels = self.pixels.reshape(self.height, self.width)


def compute_static_metrics(frame: GrayscaleFrame) -> tuple[float, float, float]:
    """Mean intensity, Shannon entropy (bits) and Laplacian-variance blur.

    Entropy uses the 256-bin intensity histogram with 0*log(0) treated as
    zero. Blur is the variance of the 4-neighbor discrete Laplacian,
    evaluated on interior pixels only, which needs at least a 3x3 frame.
    """
    if frame.pixels.size == 0:
        raise InvalidInputError("cannot compute metrics of an empty frame")
    img = frame.pixels.astype(np.float64)
    intensity = float(img.mean())

    counts = np.bincount(frame.pixels.ravel(), minlength=256)
    probs = counts[counts > 0] / frame.pixels.size
    entropy = float(-(probs * np.log2(probs)).sum())

    if frame.width < 3 or frame.height < 3:
        raise InvalidInputError("blur metric needs at least a 3x3 frame")
    lap = (
        img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:] - 4.0 * img[1:-1, 1:-1]
    )
    blur = float(lap.var())
    return intensity, entropy, blur


def _norm(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def normalize_metrics(
    raw: QualityMetrics,
    prev: QualityMetrics | None,
    bounds: dict[str, tuple[float, float]] | None = None,
) -> NormalizedMetrics:
    """Min-max normalize the raw metrics and form absolute deltas.

    Deltas compare against the previous frame normalized with the same
    bounds; on the first frame they are all zero.
    """
    bounds = bounds if bounds is not None else DEFAULT_BOUNDS
    cur = NormalizedMetrics(
        intensity_n=_norm(raw.intensity, bounds["intensity"]),
        entropy_n=_norm(raw.entropy, bounds["entropy"]),
        blur_n=_norm(raw.blur, bounds["blur"]),
        pose_chi2_n=_norm(raw.pose_chi2, bounds["pose_chi2"]),
        culled_kf_n=_norm(raw.culled_keyframes, bounds["culled_kf"]),
    )
    if prev is not None:
        cur.delta_intensity_n = abs(cur.intensity_n - _norm(prev.intensity, bounds["intensity"]))
        cur.delta_blur_n = abs(cur.blur_n - _norm(prev.blur, bounds["blur"]))
        cur.delta_pose_chi2_n = abs(cur.pose_chi2_n - _norm(prev.pose_chi2, bounds["pose_chi2"]))
        cur.delta_culled_kf_n = abs(
            cur.culled_kf_n - _norm(prev.culled_keyframes, bounds["culled_kf"])
        )
    return cur


def casef(x: float, s: float) -> float:
    """Clipped and scaled exponential activation on [0, 1].

    casef(x; s) = (exp(s*x) - 1) / (exp(s) - 1) with x clipped to [0, 1];
    the s -> 0 limit is the identity. Evaluated in a form that cannot
    overflow for large |s|.
    """
    if not (math.isfinite(x) and math.isfinite(s)):
        raise InvalidInputError(f"casef arguments must be finite, got ({x}, {s})")
    x = min(max(x, 0.0), 1.0)
    if abs(s) < 1e-6:
        return x
    if s < 0.0:
        # casef(x, -s) = 1 - casef(1 - x, s) keeps the argument positive
        return 1.0 - casef(1.0 - x, -s)
    # (e^{sx}-1)/(e^s-1) = e^{s(x-1)} * (1-e^{-sx})/(1-e^{-s}): all
    # exponents non-positive, so this is overflow-safe for any s > 0.
    return math.exp(s * (x - 1.0)) * (-math.expm1(-s * x)) / (-math.expm1(-s))


def confidence_scores(nm: NormalizedMetrics, params: AdaptiveParams) -> tuple[float, float]:
    """Static and dynamic uncertainty scores, both through CASEF.

    The static score takes the worst offender among the unweighted frame
    metrics (low entropy counts inverted); the dynamic score takes the
    worst weighted metric delta.
    """
    u_p = max(1.0 - nm.entropy_n, nm.blur_n, nm.pose_chi2_n, nm.culled_kf_n)
    u_v = max(
        params.alpha * nm.delta_intensity_n,
        params.beta * nm.delta_blur_n,
        params.gamma * nm.delta_pose_chi2_n,
        params.zeta * nm.delta_culled_kf_n,
    )
    return casef(u_p, params.s), casef(u_v, params.s)


def _sigma_from_theta(theta: float, lo: float, hi: float, params: AdaptiveParams) -> float:
    if theta > params.d_thr:
        return hi
    if theta > params.w_thr:
        return lo + theta * (hi - lo)
    return lo


def adaptive_covariance(theta_p: float, theta_v: float, params: AdaptiveParams) -> np.ndarray:
    """Visual measurement covariance from the two confidence scores.

    Piecewise per score: above the deadline threshold the deviation
    saturates at its maximum; between the thresholds it interpolates
    linearly in theta; at or below the weighting threshold it stays at the
    minimum. Position and velocity blocks are set independently.
    """
    sigma_p = _sigma_from_theta(theta_p, params.min_cov_p, params.max_cov_p, params)
    sigma_v = _sigma_from_theta(theta_v, params.min_cov_v, params.max_cov_v, params)
    r_vis = np.zeros((6, 6))
    r_vis[0:3, 0:3] = sigma_p**2 * np.eye(3)
    r_vis[3:6, 3:6] = sigma_v**2 * np.eye(3)
    return r_vis


def adaptive_sigmas(theta_p: float, theta_v: float, params: AdaptiveParams) -> tuple[float, float]:
    """The (sigma_p, sigma_v) pair behind adaptive_covariance, for logging."""
    return (
        _sigma_from_theta(theta_p, params.min_cov_p, params.max_cov_p, params),
        _sigma_from_theta(theta_v, params.min_cov_v, params.max_cov_v, params),
    )


def calibrate_pose_chi2_bound(
    pose_chi2_values: list[float], params: AdaptiveParams, factor: float = 10.0
) -> AdaptiveParams:
    """Return params with the pose_chi2 upper bound set from data.

    The bound becomes factor x median of the calibration values; a
    non-positive median leaves the configured bound untouched.
    """
    if not pose_chi2_values:
        return params
    median = float(np.median(pose_chi2_values))
    if median <= 0.0:
        return params
    bounds = dict(params.norm_bounds)
    bounds["pose_chi2"] = (0.0, factor * median)
    out = AdaptiveParams(**{**params.__dict__, "norm_bounds": bounds})
    return out


# ---------------------------------------------------------------------------
# PGM (P5 binary, 8-bit) frame I/O


def read_pgm(path) -> GrayscaleFrame:
    """Read a binary 8-bit PGM file into a GrayscaleFrame."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        match = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\S+)", data[pos:])
        if match is None:
            break
        tokens.append(match.group(1))
        pos += match.end()
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary (P5) PGM file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    if maxval > 255:
        raise ParseError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ParseError(f"{path}: truncated pixel data")
    return GrayscaleFrame(width=width, height=height, pixels=pixels.copy())


def write_pgm(path, frame: GrayscaleFrame) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode())
        fh.write(frame.pixels.tobytes())
