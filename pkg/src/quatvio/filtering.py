"""Error-state filtering with sigma-point orientation refinement.

Four propagation modes share one nominal-state integrator and one EKF-form
update path:

- ``ESKF``: linearized covariance propagation only.
- ``HYBRID_QF``: ESKF propagation, then the orientation covariance block is
  recomputed by a 3-dimensional scaled-unscented pass and blended back.
- ``ADAPTIVE_HYBRID_QF``: HYBRID_QF propagation; the visual measurement
  covariance is supplied per frame by the adaptive module.
- ``FULL_SUKF``: the covariance is propagated by a full 15-dimensional
  sigma-point pass through the nonlinear kinematics (baseline for cost and
  accuracy comparisons).

Measurement updates are EKF-form in every mode.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    ERROR_DIM,
    ImuNoiseModel,
    ImuSample,
    NominalState,
    error_jacobians,
    process_noise,
    propagate_nominal,
    van_loan_discretize,
)
from .errors import (
    DivergenceError,
    InsufficientDataError,
    InvalidInputError,
    InvalidStepError,
    NumericalError,
)
from .manifold import quat_conj, quat_mul, quat_normalize, quat_to_rotmat, skew, so3_exp, so3_log

logger = logging.getLogger(__name__)

# Innovation covariance condition number beyond which an update is rejected.
MAX_S_CONDITION = 1e12

# Window thresholds for the stationarity detector (defaults).
STATIONARY_ACC_STD = 0.05  # m/s^2
STATIONARY_GYRO_STD = 0.01  # rad/s
MIN_STATIONARY_WINDOW = 20  # samples

GRAVITY_TRIGGER_EPS = 0.05  # m/s^2


class FilterMode(enum.Enum):
    ESKF = "eskf"
    FULL_SUKF = "full_sukf"
    HYBRID_QF = "hybrid_qf"
    ADAPTIVE_HYBRID_QF = "adaptive_hybrid_qf"


#: Modes whose propagation runs the orientation refinement pass.
HYBRID_MODES = (FilterMode.HYBRID_QF, FilterMode.ADAPTIVE_HYBRID_QF)


@dataclass
class SutParams:
    """Scaled unscented transform parameters."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def weights(self, n: int) -> tuple[float, np.ndarray, np.ndarray]:
        """Return (lambda, mean weights, covariance weights) for dimension n."""
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInputError(f"SUT alpha must be in (0, 1], got {self.alpha}")
        lam = self.alpha**2 * (n + self.kappa) - n
        if n + lam <= 0.0:
            raise InvalidInputError(f"SUT scaling n+lambda must be positive, got {n + lam}")
        w_m = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        w_c = w_m.copy()
        w_m[0] = lam / (n + lam)
        w_c[0] = w_m[0] + (1.0 - self.alpha**2 + self.beta)
        return lam, w_m, w_c


@dataclass
class MeasurementNoise:
    """Fixed measurement noise blocks.

    r_vis is the visual block diag(sigma_p^2 I, sigma_v^2 I); in the
    adaptive mode it is replaced per frame. r_acc left as None means the
    gravity update derives its noise from the IMU model (sigma_a^2 I).
    """

    r_zupt: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.02**2)
    r_vis: np.ndarray = field(
        default_factory=lambda: np.diag([0.02**2] * 3 + [0.05**2] * 3)
    )
    r_acc: np.ndarray | None = None

    def validate(self) -> "MeasurementNoise":
        for name in ("r_zupt", "r_vis"):
            mat = getattr(self, name)
            if not np.all(np.isfinite(mat)) or np.any(np.diag(mat) <= 0.0):
                raise InvalidInputError(f"{name} must be finite with positive diagonal")
        if self.r_acc is not None and np.any(np.diag(self.r_acc) <= 0.0):
            raise InvalidInputError("r_acc must have a positive diagonal")
        return self


@dataclass
class FilterState:
    nominal: NominalState
    P: np.ndarray
    t: int
    mode: FilterMode = FilterMode.ESKF
    sut: SutParams = field(default_factory=SutParams)

    def copy(self) -> "FilterState":
        return FilterState(self.nominal.copy(), self.P.copy(), self.t, self.mode, self.sut)


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def cholesky_with_jitter(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; one jittered retry before giving up."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(mat)
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"Cholesky failed even with jitter {jitter:.3e} on a "
                f"{mat.shape[0]}x{mat.shape[0]} block"
            ) from exc


def project_psd(mat: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Clamp too-negative eigenvalues to a tiny positive floor.

    Returns the input unchanged (same object) when already PSD within
    rel_tol * trace, so untouched blocks stay bitwise identical. When a
    projection is needed, eigenvalues are floored slightly above zero so
    the result stays invertible.
    """
    trace = float(np.trace(mat))
    floor = rel_tol * max(trace, 0.0)
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals[0] >= -floor:
        return mat
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, floor, None)
    return symmetrize(v @ np.diag(w) @ v.T)


def _sigma_points(cov: np.ndarray, lam: float) -> np.ndarray:
    """Rows are the 2n+1 sigma offsets (first row zero)."""
    n = cov.shape[0]
    spread = cholesky_with_jitter((n + lam) * cov)
    points = np.zeros((2 * n + 1, n))
    for i in range(n):
        points[1 + i] = spread[:, i]
        points[1 + n + i] = -spread[:, i]
    return points


def sukf_refine_orientation(
    fs_prev: FilterState,
    p_theta: np.ndarray,
    q_pred: np.ndarray,
    u: ImuSample,
    dt: float,
) -> np.ndarray:
    """Transport the orientation error covariance with a 3-dim SUT pass.

    Sigma points are drawn from the given pre-propagation orientation
    block, injected onto the previous nominal quaternion, pushed through
    the orientation kinematics with every other state frozen, and
    retracted against the predicted quaternion. The weighted mean is
    computed explicitly rather than assumed zero.

    This is the deterministic transport map only: at zero rotation rate it
    returns the input block unchanged. The caller adds the discrete
    process noise for the interval.
    """
    lam, w_m, w_c = fs_prev.sut.weights(3)
    chis = _sigma_points(p_theta, lam)

    step_q = so3_exp((u.omega - fs_prev.nominal.b_g) * dt)
    q_pred_inv = quat_conj(q_pred)
    q_prev = fs_prev.nominal.q

    deltas = np.empty_like(chis)
    for j, chi in enumerate(chis):
        q_inj = quat_mul(q_prev, so3_exp(chi))
        q_prop = quat_mul(q_inj, step_q)
        deltas[j] = so3_log(quat_mul(q_pred_inv, q_prop))

    mean = w_m @ deltas
    centered = deltas - mean
    return (centered.T * w_c) @ centered


def hybrid_blend(p_eskf: np.ndarray, p_theta_sukf: np.ndarray) -> np.ndarray:
    """Blend the refined orientation block back into the full covariance.

    Only the top-left 3x3 block changes: it becomes the average of the
    SUT-refined block and the transpose of the ESKF block. Everything
    else keeps its original values. The result is then symmetrized on the
    replaced block and PSD-projected only if a negative eigenvalue slips
    below tolerance.
    """
    out = p_eskf.copy()
    blended = 0.5 * (p_theta_sukf + p_eskf[0:3, 0:3].T)
    out[0:3, 0:3] = symmetrize(blended)
    return project_psd(out)


def _full_sukf_covariance(
    fs: FilterState,
    x_pred: NominalState,
    u: ImuSample,
    dt: float,
    noise: ImuNoiseModel,
    qd: np.ndarray,
) -> np.ndarray:
    """15-dim sigma-point covariance propagation (additive process noise)."""
    lam, w_m, w_c = fs.sut.weights(ERROR_DIM)
    chis = _sigma_points(fs.P, lam)

    q_pred_inv = quat_conj(x_pred.q)
    x = fs.nominal
    deltas = np.empty((chis.shape[0], ERROR_DIM))
    for j, chi in enumerate(chis):
        xj = NominalState(
            quat_mul(x.q, so3_exp(chi[0:3])),
            x.v + chi[3:6],
            x.p + chi[6:9],
            x.b_a + chi[9:12],
            x.b_g + chi[12:15],
        )
        xj_prop = propagate_nominal(xj, u, dt, noise)
        deltas[j, 0:3] = so3_log(quat_mul(q_pred_inv, xj_prop.q))
        deltas[j, 3:6] = xj_prop.v - x_pred.v
        deltas[j, 6:9] = xj_prop.p - x_pred.p
        deltas[j, 9:12] = xj_prop.b_a - x_pred.b_a
        deltas[j, 12:15] = xj_prop.b_g - x_pred.b_g

    mean = w_m @ deltas
    centered = deltas - mean
    cov = (centered.T * w_c) @ centered + qd
    return symmetrize(cov)


def propagate(fs: FilterState, u: ImuSample, noise: ImuNoiseModel) -> FilterState:
    """Advance the filter to the sample timestamp.

    The nominal state always integrates the same way; the modes differ
    only in how the error covariance is propagated.
    """
    if u.t <= fs.t:
        raise InvalidStepError(f"sample time {u.t} not after state time {fs.t}")
    dt = (u.t - fs.t) * 1e-9

    x_pred = propagate_nominal(fs.nominal, u, dt, noise)
    a_mat, g_mat = error_jacobians(fs.nominal, u, noise)
    phi, qd = van_loan_discretize(a_mat, g_mat, process_noise(noise), dt)

    if fs.mode is FilterMode.FULL_SUKF:
        p_pred = _full_sukf_covariance(fs, x_pred, u, dt, noise, qd)
    else:
        p_pred = symmetrize(phi @ fs.P @ phi.T + qd)
        if fs.mode in HYBRID_MODES:
            # The sigma pass recomputes the orientation self-transport
            # nonlinearly; bias coupling and process noise are not part of
            # that map and carry over from the linearized prediction.
            phi_tt = phi[0:3, 0:3]
            self_lin = phi_tt @ fs.P[0:3, 0:3] @ phi_tt.T
            p_theta = (
                sukf_refine_orientation(fs, fs.P[0:3, 0:3], x_pred.q, u, dt)
                + p_pred[0:3, 0:3]
                - self_lin
            )
            p_pred = hybrid_blend(p_pred, p_theta)

    return FilterState(x_pred, p_pred, u.t, fs.mode, fs.sut)


def inject_and_reset(
    fs: FilterState, dx: np.ndarray, use_reset_jacobian: bool = False
) -> FilterState:
    """Fold an estimated error vector into the nominal state.

    The orientation error is applied as a right (body-frame) quaternion
    increment; the Euclidean blocks add. By default the covariance is left
    unchanged (identity reset Jacobian); the optional reset Jacobian
    accounts for the tangent-frame change of the orientation block.
    """
    dx = np.asarray(dx, dtype=float)
    if dx.shape != (ERROR_DIM,) or not np.all(np.isfinite(dx)):
        raise InvalidInputError("error vector must be a finite 15-vector")
    dtheta = dx[0:3]
    angle = float(np.linalg.norm(dtheta))
    if angle > math.pi:
        raise DivergenceError(
            f"orientation correction {angle:.3f} rad exceeds pi; filter has diverged"
        )
    x = fs.nominal
    x_new = NominalState(
        quat_normalize(quat_mul(x.q, so3_exp(dtheta))),
        x.v + dx[3:6],
        x.p + dx[6:9],
        x.b_a + dx[9:12],
        x.b_g + dx[12:15],
    )
    p_new = fs.P
    if use_reset_jacobian:
        g_reset = np.eye(ERROR_DIM)
        g_reset[0:3, 0:3] = np.eye(3) - skew(0.5 * dtheta)
        p_new = symmetrize(g_reset @ fs.P @ g_reset.T)
    return FilterState(x_new, p_new, fs.t, fs.mode, fs.sut)


def ekf_update(
    fs: FilterState,
    z: np.ndarray,
    h: np.ndarray,
    h_jac: np.ndarray,
    r_mat: np.ndarray,
    use_reset_jacobian: bool = False,
) -> tuple[FilterState, np.ndarray]:
    """One EKF-form measurement update with Joseph covariance form.

    Returns the updated state and the innovation. If the innovation
    covariance is ill-conditioned the update is skipped: the *same* state
    object is returned (callers can detect rejection by identity) and a
    rejection event is logged.
    """
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    if not (np.all(np.isfinite(h_jac)) and np.all(np.isfinite(z)) and np.all(np.isfinite(h))):
        raise InvalidInputError("measurement model contains non-finite values")

    y = z - h
    s_mat = h_jac @ fs.P @ h_jac.T + r_mat
    cond = np.linalg.cond(s_mat)
    if not np.isfinite(cond) or cond > MAX_S_CONDITION:
        logger.warning(
            "measurement rejected: innovation covariance condition %.3e exceeds %.1e",
            cond,
            MAX_S_CONDITION,
        )
        return fs, y

    gain = fs.P @ h_jac.T @ np.linalg.inv(s_mat)
    dx = gain @ y

    i_kh = np.eye(ERROR_DIM) - gain @ h_jac
    p_new = symmetrize(i_kh @ fs.P @ i_kh.T + gain @ r_mat @ gain.T)

    updated = FilterState(fs.nominal, p_new, fs.t, fs.mode, fs.sut)
    return inject_and_reset(updated, dx, use_reset_jacobian), y


def zupt_update(
    fs: FilterState, r_zupt: np.ndarray, use_reset_jacobian: bool = False
) -> FilterState:
    """Zero-velocity update: the body-frame velocity is measured as zero.

    After the EKF step the nominal velocity is pinned to exactly zero,
    matching the stationarity assumption that triggered the update.
    """
    rot_wb = quat_to_rotmat(fs.nominal.q)
    v_body = rot_wb.T @ fs.nominal.v

    h_jac = np.zeros((3, ERROR_DIM))
    h_jac[:, 0:3] = skew(v_body)
    h_jac[:, 3:6] = rot_wb.T

    updated, _ = ekf_update(fs, np.zeros(3), v_body, h_jac, r_zupt, use_reset_jacobian)
    if updated is fs:
        return fs
    updated.nominal.v = np.zeros(3)
    return updated


def detect_stationary(
    window: list[ImuSample],
    acc_std_thr: float = STATIONARY_ACC_STD,
    gyro_std_thr: float = STATIONARY_GYRO_STD,
) -> bool:
    """True when every axis of both sensors is quiet over the window."""
    if len(window) < MIN_STATIONARY_WINDOW:
        raise InsufficientDataError(
            f"stationarity needs >= {MIN_STATIONARY_WINDOW} samples, got {len(window)}"
        )
    accel = np.array([s.accel for s in window])
    omega = np.array([s.omega for s in window])
    return bool(
        np.all(accel.std(axis=0) < acc_std_thr) and np.all(omega.std(axis=0) < gyro_std_thr)
    )


def gravity_update(
    fs: FilterState,
    a_m: np.ndarray,
    noise: ImuNoiseModel,
    eps_g: float = GRAVITY_TRIGGER_EPS,
    r_acc: np.ndarray | None = None,
    use_reset_jacobian: bool = False,
) -> FilterState:
    """Attitude update from the gravity direction during quasi-static motion.

    Applies only when the bias-corrected specific force magnitude is within
    eps_g of gravity; otherwise the input state is returned unchanged. The
    predicted measurement is the world gravity reaction (-g_world) rotated
    into the body frame, so the residual vanishes at rest.
    """
    a_m = np.asarray(a_m, dtype=float)
    z = a_m - fs.nominal.b_a
    g_norm = float(np.linalg.norm(noise.g_world))
    if abs(float(np.linalg.norm(z)) - g_norm) >= eps_g:
        return fs

    rot_wb = quat_to_rotmat(fs.nominal.q)
    h = rot_wb.T @ (-noise.g_world)

    h_jac = np.zeros((3, ERROR_DIM))
    h_jac[:, 0:3] = skew(h)
    h_jac[:, 9:12] = -np.eye(3)

    if r_acc is None:
        r_acc = noise.sigma_a**2 * np.eye(3)
    updated, _ = ekf_update(fs, z, h, h_jac, r_acc, use_reset_jacobian)
    return updated


def visual_update(
    fs: FilterState,
    p_vis: np.ndarray,
    v_vis: np.ndarray,
    r_vis: np.ndarray,
    use_reset_jacobian: bool = False,
) -> tuple[FilterState, np.ndarray]:
    """Position/velocity update from the visual front-end.

    Returns (state, innovation); the state is the input object when the
    update was rejected.
    """
    z = np.concatenate([np.asarray(p_vis, dtype=float), np.asarray(v_vis, dtype=float)])
    h = np.concatenate([fs.nominal.p, fs.nominal.v])
    h_jac = np.zeros((6, ERROR_DIM))
    h_jac[0:3, 6:9] = np.eye(3)
    h_jac[3:6, 3:6] = np.eye(3)
    return ekf_update(fs, z, h, h_jac, r_vis, use_reset_jacobian)


def state_error(est: NominalState, truth: NominalState) -> np.ndarray:
    """15-dim error vector such that truth = est (+) error."""
    dx = np.empty(ERROR_DIM)
    dx[0:3] = so3_log(quat_mul(quat_conj(est.q), truth.q))
    dx[3:6] = truth.v - est.v
    dx[6:9] = truth.p - est.p
    dx[9:12] = truth.b_a - est.b_a
    dx[12:15] = truth.b_g - est.b_g
    return dx
