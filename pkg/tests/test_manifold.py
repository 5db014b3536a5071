"""Rotation primitives checked against scipy.spatial.transform as an
independent oracle and against their own algebraic contracts."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quatvio.manifold import (
    quat_conj,
    quat_identity,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_rotmat,
    rotmat_to_quat,
    skew,
    so3_exp,
    so3_log,
)

RNG = np.random.default_rng(20240817)


def random_quats(n):
    q = RNG.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def to_scipy(q):
    # internal order is wxyz, scipy wants xyzw
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


class TestAgainstScipy:
    def test_rotmat_matches_scipy(self):
        for q in random_quats(500):
            r = quat_to_rotmat(q)
            r_ref = to_scipy(q).as_matrix()
            assert np.allclose(r, r_ref, atol=1e-12)

    def test_mul_matches_scipy(self):
        a = random_quats(200)
        b = random_quats(200)
        for qa, qb in zip(a, b):
            q = quat_mul(qa, qb)
            r_ref = (to_scipy(qa) * to_scipy(qb)).as_matrix()
            assert np.allclose(quat_to_rotmat(q), r_ref, atol=1e-12)

    def test_exp_matches_scipy_rotvec(self):
        for _ in range(200):
            phi = RNG.standard_normal(3) * RNG.uniform(0, 3.0)
            q = so3_exp(phi)
            r_ref = Rotation.from_rotvec(phi).as_matrix()
            assert np.allclose(quat_to_rotmat(q), r_ref, atol=1e-12)

    def test_rotate_matches_matrix_action(self):
        for q in random_quats(100):
            v = RNG.standard_normal(3)
            assert np.allclose(quat_rotate(q, v), quat_to_rotmat(q) @ v,
                               atol=1e-12)


def test_exp_log_round_trip_bulk():
    # acceptance-grade tolerance, bigger sample lives in test_acceptance
    for _ in range(2000):
        angle = RNG.uniform(0, np.pi - 1e-3)
        axis = RNG.standard_normal(3)
        axis /= np.linalg.norm(axis)
        phi = angle * axis
        back = so3_log(so3_exp(phi))
        assert np.linalg.norm(back - phi) <= 1e-10


def test_log_canonical_hemisphere():
    q = random_quats(200)
    for qi in q:
        phi = so3_log(qi)
        assert np.linalg.norm(phi) <= np.pi + 1e-12
        # log of q and -q agree (same rotation)
        assert np.allclose(so3_log(-qi), phi, atol=1e-9)


def test_small_angle_branch():
    phi = np.array([1e-10, -2e-10, 5e-11])
    q = so3_exp(phi)
    assert np.isclose(np.linalg.norm(q), 1.0, atol=1e-15)
    assert np.allclose(so3_log(q), phi, atol=1e-15)
    assert np.allclose(so3_exp(np.zeros(3)), quat_identity())


def test_near_pi_round_trip():
    axis = np.array([1.0, 1.0, -1.0]) / np.sqrt(3.0)
    phi = (np.pi - 1e-7) * axis
    back = so3_log(so3_exp(phi))
    assert np.linalg.norm(back - phi) < 1e-9


def test_rotmat_orthonormality():
    for q in random_quats(500):
        r = quat_to_rotmat(q)
        assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-9
        assert np.isclose(np.linalg.det(r), 1.0, atol=1e-9)


def test_rotmat_to_quat_round_trip():
    # exercise all Shepperd branches via rotations near each axis
    seeds = [
        np.array([0.99, 0.1, 0.0, 0.0]),
        np.array([0.1, 0.99, 0.0, 0.0]),
        np.array([0.1, 0.0, 0.99, 0.0]),
        np.array([0.1, 0.0, 0.0, 0.99]),
    ]
    for base in seeds + list(random_quats(200)):
        q = quat_normalize(base)
        q2 = rotmat_to_quat(quat_to_rotmat(q))
        # sign ambiguity: compare rotations, not components
        assert np.allclose(quat_to_rotmat(q2), quat_to_rotmat(q), atol=1e-10)


def test_conj_inverts():
    for q in random_quats(100):
        qq = quat_mul(q, quat_conj(q))
        assert np.allclose(qq, quat_identity(), atol=1e-12)


def test_skew_antisymmetry_and_cross():
    a = RNG.standard_normal(3)
    b = RNG.standard_normal(3)
    s = skew(a)
    assert np.allclose(s.T, -s)
    assert np.allclose(s @ b, np.cross(a, b))


def test_normalize_rejects_zero():
    from quatvio.errors import InvalidInputError

    with pytest.raises(InvalidInputError):
        quat_normalize(np.zeros(4))


def test_mul_composition_order():
    # body->world convention: rotating first by a then by b composes as a*b
    qa = so3_exp(np.array([0.3, 0.0, 0.0]))
    qb = so3_exp(np.array([0.0, 0.4, 0.0]))
    r = quat_to_rotmat(quat_mul(qa, qb))
    assert np.allclose(r, quat_to_rotmat(qa) @ quat_to_rotmat(qb), atol=1e-12)
