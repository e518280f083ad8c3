import numpy as np
import pytest
from scipy.linalg import expm

from aerobat.body import (BodyState, MassedModel, pitch_angle, reorthonormalize, rot_x, rot_y,
                          skew)


@pytest.fixture(scope="module")
def model(params):
    return MassedModel(params.massed)


def random_state(rng):
    q = np.r_[rng.uniform(-0.5, 0.5, 4), rng.normal(size=3)]
    v = rng.normal(size=10) * np.r_[np.full(4, 20.0), np.ones(3), np.full(3, 5.0)]
    R = expm(skew(rng.normal(size=3)))
    return BodyState(q, v, R)


def flow(state, h):
    """State advanced by ``h`` at constant generalized velocity."""
    q = state.q.copy()
    q[:4] += h * state.v[:4]
    q[4:7] += h * state.v[4:7]
    return BodyState(q, state.v, state.R @ expm(h * skew(state.v[7:10])))


def test_mass_matrix_spd_and_kinetic_energy(model, rng):
    for _ in range(10):
        s = random_state(rng)
        M = model.mass_matrix(s)
        np.testing.assert_allclose(M, M.T, atol=1e-18)
        assert np.linalg.eigvalsh(M).min() > 0
        T, _ = model.energies(s)
        assert T == pytest.approx(0.5 * s.v @ M @ s.v, rel=1e-12)


def test_velocity_jacobians_match_position_derivative(model, rng):
    h = 1e-6
    for _ in range(5):
        s = random_state(rng)
        kin = model.kinematics(s)
        xp = model.kinematics(flow(s, h)).x
        xm = model.kinematics(flow(s, -h)).x
        np.testing.assert_allclose(kin.xd, (xp - xm) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(np.einsum("nik,k->ni", kin.Jv, s.v), kin.xd, atol=1e-12)


def test_bias_accelerations_match_finite_differences(model, rng):
    h = 1e-6
    for _ in range(5):
        s = random_state(rng)
        kin = model.kinematics(s)
        kp, km = model.kinematics(flow(s, h)), model.kinematics(flow(s, -h))
        np.testing.assert_allclose(kin.a_bias, (kp.xd - km.xd) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(kin.al_bias, (kp.w - km.w) / (2 * h), atol=1e-5)


def test_gravity_bias_at_rest(model, rng, params):
    s = random_state(rng)
    s.v[:] = 0.0
    h = model.bias(s)
    m = model.total_mass
    np.testing.assert_allclose(h[4:7], [0, 0, m * params.massed.gravity], rtol=1e-12)
    np.testing.assert_allclose(model.bias(s, gravity=False), 0.0, atol=1e-18)


def test_massed_energy_conserved(quiet_params, rng):
    model = MassedModel(quiet_params.massed)
    s = random_state(rng)
    s.q[:4] = 0.1

    def f(st):
        vdot, Rdot = model.accel(st, np.zeros(10))
        return (st.v[:7], vdot), Rdot

    def energy(st):
        T, U = model.energies(st)
        return T + U

    E0 = energy(s)
    dt = 1e-4
    for _ in range(500):
        ks = []
        stage = s
        for c in (0.5, 0.5, 1.0, None):
            (qd, vd), Rd = f(stage)
            ks.append((qd, vd, Rd))
            if c is None:
                break
            stage = BodyState(s.q + c * dt * qd, s.v + c * dt * vd, s.R + c * dt * Rd)
        w = (1, 2, 2, 1)
        dq = sum(wi * k[0] for wi, k in zip(w, ks)) * dt / 6
        dv = sum(wi * k[1] for wi, k in zip(w, ks)) * dt / 6
        dR = sum(wi * k[2] for wi, k in zip(w, ks)) * dt / 6
        s = BodyState(s.q + dq, s.v + dv, reorthonormalize(s.R + dR))
    assert abs(energy(s) - E0) / abs(E0) < 1e-8


def test_symmetric_pose_keeps_com_in_plane(model):
    q = np.r_[0.2, -0.3, 0.2, -0.3, 0.0, 0.0, 0.0]
    kin = model.kinematics(BodyState(q, np.zeros(10), np.eye(3)))
    assert abs(model.com(kin)[1]) < 1e-15
    np.testing.assert_allclose(kin.x[1] * [1, -1, 1], kin.x[2], atol=1e-15)


def test_angular_momentum_sign_options(model, rng):
    s = random_state(rng)
    kin = model.kinematics(s)
    a = model.angular_momentum(s, kin, "negated")
    b = model.angular_momentum(s, kin, "conventional")
    orbital = np.sum(model.masses[:, None] * np.cross(kin.x - model.com(kin), kin.xd), axis=0)
    np.testing.assert_allclose(b - a, 2 * orbital, atol=1e-15)


def test_point_jacobian(model, rng):
    s = random_state(rng)
    wf = model.wing_frames(s.q)[0]
    point = wf.elbow + 0.3 * (wf.tip - wf.elbow)
    J = model.point_jacobian(s, 0, point, True)
    rel = model.wing_point_velocity(s, 0, point, True)
    expect = s.v[4:7] + s.R @ (np.cross(s.v[7:10], point) + rel)
    np.testing.assert_allclose(J @ s.v, expect, atol=1e-12)


def test_rotation_helpers(rng):
    for a in (-1.2, 0.0, 0.576, 1.4):
        assert pitch_angle(rot_y(a)) == pytest.approx(a, abs=1e-15)
        assert pitch_angle(rot_x(a)) == pytest.approx(0.0, abs=1e-15)
    R = expm(skew(rng.normal(size=3)))
    noisy = R + rng.normal(size=(3, 3)) * 1e-6
    Q = reorthonormalize(noisy)
    assert np.linalg.norm(Q.T @ Q - np.eye(3)) < 1e-14
    assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.norm(Q - R) < 1e-5
