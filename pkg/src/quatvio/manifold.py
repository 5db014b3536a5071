"""Quaternion and SO(3) primitives.

Conventions, used consistently by every module in this package:

- Quaternions are numpy arrays ``[w, x, y, z]`` (scalar first) composed with
  the Hamilton product.
- ``quat_to_rotmat(q)`` rotates body-frame vectors into the world frame.
- Rotation vectors are axis * angle in radians.
- ``so3_log`` returns the principal rotation vector (angle in [0, pi]),
  picking the sign ambiguity by canonicalizing to w >= 0.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError

# Below this angle exp/log switch to 2nd-order Taylor expansions.
SMALL_ANGLE = 1e-8


def _require_finite(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values: {a!r}")
    return a


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Rescale to unit norm. Zero-norm input is not recoverable."""
    q = _require_finite("quaternion", q)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n < 1e-300:
        raise InvalidInputError("cannot normalize a zero-norm quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a (x) b."""
    a = _require_finite("quaternion a", a)
    b = _require_finite("quaternion b", b)
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = _require_finite("quaternion", q)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = _require_finite("vector", v)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_exp(rvec: np.ndarray) -> np.ndarray:
    """Map a rotation vector to a unit quaternion.

    Uses the closed form for angles above SMALL_ANGLE and a 2nd-order
    Taylor expansion below it, so the map is smooth through zero.
    """
    rvec = _require_finite("rotation vector", rvec)
    angle = math.sqrt(rvec[0] ** 2 + rvec[1] ** 2 + rvec[2] ** 2)
    half = 0.5 * angle
    if angle < SMALL_ANGLE:
        w = 1.0 - half * half / 2.0
        s = 0.5 - half * half / 12.0
    else:
        w = math.cos(half)
        s = math.sin(half) / angle
    q = np.array([w, s * rvec[0], s * rvec[1], s * rvec[2]])
    return quat_normalize(q)


def so3_log(q: np.ndarray) -> np.ndarray:
    """Principal rotation vector of a unit quaternion.

    The returned angle lies in [0, pi]; q and -q map to the same vector.
    """
    q = _require_finite("quaternion", q)
    if q[0] < 0.0:
        q = -q
    vec_norm = math.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    w = min(q[0], 1.0)
    if vec_norm < SMALL_ANGLE:
        # theta/sin(theta/2) ~ 2/w * (1 - |v|^2 / (3 w^2)) for small |v|
        factor = 2.0 / w * (1.0 - vec_norm * vec_norm / (3.0 * w * w))
    else:
        angle = 2.0 * math.atan2(vec_norm, w)
        factor = angle / vec_norm
    return factor * np.array([q[1], q[2], q[3]])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrix of a unit quaternion."""
    q = _require_finite("quaternion", q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(mat: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix.

    Shepperd-style branch on the largest diagonal combination keeps the
    conversion well-conditioned for all rotations.
    """
    mat = _require_finite("rotation matrix", mat)
    if mat.shape != (3, 3):
        raise InvalidInputError(f"rotation matrix must be 3x3, got {mat.shape}")
    m = mat
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a single vector by a unit quaternion (body to world).

    Cheaper than building the full matrix when only one vector is needed.
    """
    q = _require_finite("quaternion", q)
    v = _require_finite("vector", v)
    w, x, y, z = q
    # t = 2 * (qv x v); v' = v + w*t + qv x t
    qv = np.array([x, y, z])
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)
