"""Continuous IMU kinematics, error-state Jacobians and their discretization.

State convention (16 nominal values, 15 error dimensions):

- nominal: unit quaternion q (wxyz, body to world), velocity v, position p,
  accelerometer bias b_a, gyroscope bias b_g; all world-frame except biases.
- error vector ordering: [dtheta (0:3), dv (3:6), dp (6:9),
  db_a (9:12), db_g (12:15)], with dtheta a body-frame rotation vector
  applied on the right: q_true = q (x) exp(dtheta).

Biases follow first-order Gauss-Markov processes with time constants
tau_a, tau_g, driven by white noise sigma_wa, sigma_wg.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, InvalidInputError, InvalidStepError, NumericalError
from .manifold import quat_mul, quat_normalize, quat_rotate, quat_to_rotmat, skew, so3_exp

# Largest accepted propagation step, seconds. Anything longer means the
# stream has a gap the filter should not silently integrate across.
MAX_STEP = 0.1

ERROR_DIM = 15
NOISE_DIM = 12


@dataclass
class NominalState:
    """Nominal (large-signal) filter state."""

    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray

    def copy(self) -> "NominalState":
        return NominalState(
            self.q.copy(), self.v.copy(), self.p.copy(), self.b_a.copy(), self.b_g.copy()
        )

    @staticmethod
    def identity() -> "NominalState":
        return NominalState(
            np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3)
        )


@dataclass
class ImuSample:
    """One inertial sample: timestamp in integer nanoseconds, measured
    angular rate (rad/s) and measured specific force (m/s^2)."""

    t: int
    omega: np.ndarray
    accel: np.ndarray


@dataclass
class ImuNoiseModel:
    """Continuous-time IMU noise densities and bias model constants.

    sigma_g, sigma_a are white-noise densities (rad/s/sqrt(Hz),
    m/s^2/sqrt(Hz)); sigma_wg, sigma_wa drive the bias random walks.
    Defaults correspond to a consumer-grade MEMS unit at 200 Hz.
    """

    sigma_g: float = 1.6968e-4
    sigma_a: float = 2.0e-3
    sigma_wg: float = 1.9393e-5
    sigma_wa: float = 3.0e-3
    tau_g: float = 1000.0
    tau_a: float = 300.0
    g_world: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def validate(self) -> "ImuNoiseModel":
        for name in ("sigma_g", "sigma_a", "sigma_wg", "sigma_wa", "tau_g", "tau_a"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"imu noise parameter {name} must be positive, got {value}")
        g_norm = float(np.linalg.norm(self.g_world))
        if not 9.7 <= g_norm <= 9.9:
            raise ConfigError(f"gravity magnitude {g_norm:.4f} outside [9.7, 9.9]")
        return self


def _check_step(dt: float) -> None:
    if not math.isfinite(dt) or dt <= 0.0:
        raise InvalidStepError(f"propagation step must be positive, got {dt}")
    if dt > MAX_STEP:
        raise InvalidStepError(f"propagation step {dt} s exceeds {MAX_STEP} s gap limit")


def propagate_nominal(
    x: NominalState, u: ImuSample, dt: float, noise: ImuNoiseModel
) -> NominalState:
    """Integrate the nominal kinematics over one IMU interval.

    Orientation advances by the exact quaternion exponential of the
    bias-corrected rate; velocity and position use the trapezoid rule with
    the specific force rotated at the interval-midpoint orientation; bias
    means decay per their Gauss-Markov time constants.
    """
    _check_step(dt)
    if not (np.all(np.isfinite(u.omega)) and np.all(np.isfinite(u.accel))):
        raise InvalidInputError("IMU sample contains non-finite values")

    omega = u.omega - x.b_g
    rot = omega * dt
    q_new = quat_normalize(quat_mul(x.q, so3_exp(rot)))

    q_mid = quat_mul(x.q, so3_exp(0.5 * rot))
    a_world = quat_rotate(q_mid, u.accel - x.b_a) + noise.g_world

    v_new = x.v + a_world * dt
    p_new = x.p + x.v * dt + 0.5 * a_world * dt * dt

    decay_a = math.exp(-dt / noise.tau_a)
    decay_g = math.exp(-dt / noise.tau_g)
    return NominalState(q_new, v_new, p_new, x.b_a * decay_a, x.b_g * decay_g)


def error_jacobians(
    x: NominalState, u: ImuSample, noise: ImuNoiseModel
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time error dynamics matrices (A, G).

    A is the 15x15 error-state Jacobian evaluated at the linearization
    point x with the bias-corrected measurements; G is the 15x12 map
    from the stacked noise vector [n_g, n_a, w_a, w_g] into the error
    dynamics.
    """
    rot = quat_to_rotmat(x.q)
    omega = u.omega - x.b_g
    accel = u.accel - x.b_a

    a_mat = np.zeros((ERROR_DIM, ERROR_DIM))
    a_mat[0:3, 0:3] = -skew(omega)
    a_mat[0:3, 12:15] = -np.eye(3)
    a_mat[3:6, 0:3] = -rot @ skew(accel)
    a_mat[3:6, 9:12] = -rot
    a_mat[6:9, 3:6] = np.eye(3)
    a_mat[9:12, 9:12] = -np.eye(3) / noise.tau_a
    a_mat[12:15, 12:15] = -np.eye(3) / noise.tau_g

    g_mat = np.zeros((ERROR_DIM, NOISE_DIM))
    g_mat[0:3, 0:3] = -np.eye(3)
    g_mat[3:6, 3:6] = -rot
    g_mat[9:12, 6:9] = np.eye(3)
    g_mat[12:15, 9:12] = np.eye(3)
    return a_mat, g_mat


def process_noise(noise: ImuNoiseModel) -> np.ndarray:
    """Continuous-time noise covariance for [n_g, n_a, w_a, w_g]."""
    qc = np.zeros((NOISE_DIM, NOISE_DIM))
    qc[0:3, 0:3] = noise.sigma_g**2 * np.eye(3)
    qc[3:6, 3:6] = noise.sigma_a**2 * np.eye(3)
    qc[6:9, 6:9] = noise.sigma_wa**2 * np.eye(3)
    qc[9:12, 9:12] = noise.sigma_wg**2 * np.eye(3)
    return qc


def van_loan_discretize(
    a_mat: np.ndarray, g_mat: np.ndarray, qc: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Discretize (A, G Qc G^T) over dt with the Van Loan construction.

    Builds M = [[-A, G Qc G^T], [0, A^T]] * dt, takes its matrix
    exponential E, and reads off Phi = E22^T and Qd = Phi @ E12. The
    product equals the exact integral of Phi(s) G Qc G^T Phi(s)^T; Qd is
    symmetrized afterwards to remove roundoff skew.
    """
    _check_step(dt)
    n = a_mat.shape[0]
    m = np.zeros((2 * n, 2 * n))
    m[:n, :n] = -a_mat * dt
    m[:n, n:] = g_mat @ qc @ g_mat.T * dt
    m[n:, n:] = a_mat.T * dt
    big_e = expm(m)
    if not np.all(np.isfinite(big_e)):
        raise NumericalError("matrix exponential produced non-finite entries")
    phi = big_e[n:, n:].T
    qd = phi @ big_e[:n, n:]
    qd = 0.5 * (qd + qd.T)
    return phi, qd
