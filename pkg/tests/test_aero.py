import math

import numpy as np
import pytest
from scipy.linalg import expm

from aerobat.aero import AeroModel, angle_of_attack, lift_drag_coeffs
from aerobat.body import BodyState, MassedModel, skew
from aerobat.config import load_config
from aerobat.coupling import map_point_force


def make(overrides=None):
    p = load_config(None, overrides or {})
    model = MassedModel(p.massed)
    return p, model, AeroModel(p.aero, model)


def random_state(rng, symmetric=False):
    th = rng.uniform(-0.5, 0.5, 2)
    q = np.r_[th, th, rng.normal(size=3)] if symmetric else np.r_[rng.uniform(-0.5, 0.5, 4),
                                                                 rng.normal(size=3)]
    if symmetric:
        r = rng.normal(size=2) * 10
        v = np.r_[r, r, rng.normal(), 0.0, rng.normal(), 0.0, rng.normal(), 0.0]
        R = expm(skew([0.0, rng.normal(), 0.0]))
    else:
        v = np.r_[rng.normal(size=4) * 10, rng.normal(size=3), rng.normal(size=3)]
        R = expm(skew(rng.normal(size=3)))
    return BodyState(q, v, R)


def test_coefficient_values():
    cl0 = 0.225 + 1.58 * math.sin(math.radians(-7.2))
    cd0 = 1.92 - 1.55 * math.cos(math.radians(-9.82))
    cl, cd = lift_drag_coeffs(0.0)
    assert cl == pytest.approx(cl0, abs=1e-15) and cd == pytest.approx(cd0, abs=1e-15)
    assert cl == pytest.approx(0.0270, abs=1e-3) and cd == pytest.approx(0.3927, abs=1e-3)
    beta = np.linspace(-90, 90, 180001)
    cl, cd = lift_drag_coeffs(beta)
    assert cl.max() == pytest.approx(1.805, abs=1e-6)
    assert cd.min() == pytest.approx(0.37, abs=1e-6)


def test_angle_of_attack_examples():
    eL, eD = np.array([0, 0, 1.0]), np.array([1.0, 0, 0])
    I = np.eye(3)
    assert angle_of_attack(np.array([2.0, 0, 0]), I, eL, eD) == (0.0, 4.0)
    beta, v2 = angle_of_attack(np.array([1.0, 0, -1.0]), I, eL, eD)
    assert beta == pytest.approx(45.0) and v2 == pytest.approx(2.0)
    beta, _ = angle_of_attack(np.array([1.0, 5.0, 1.0]), I, eL, eD)   # off-plane part ignored
    assert beta == pytest.approx(-45.0)
    assert angle_of_attack(np.array([0.0, 3.0, 0.0]), I, eL, eD) == (0.0, 0.0)
    # the axes are body-frame: rotating the body rotates the measured flow
    R = expm(skew([0.0, math.radians(30.0), 0.0]))
    beta, _ = angle_of_attack(R @ np.array([1.0, 0, 0]), R, eL, eD)
    assert beta == pytest.approx(0.0, abs=1e-12)


def test_zero_relative_flow_gives_zero_force():
    p, model, aero = make()
    s = BodyState(np.r_[0.1, 0.2, 0.1, 0.2, 0, 0, 0], np.r_[0, 0, 0, 0, -2.0, 0, 0, 0, 0, 0],
                  np.eye(3))
    r = aero.force(s)
    assert np.all(r.u == 0) and np.all(r.beta == 0) and np.all(r.v_r == 0)


def test_density_linearity(rng):
    s = random_state(rng)
    u1 = make({"aero.air_density": "1.0"})[2].force(s).u
    u3 = make({"aero.air_density": "3.0"})[2].force(s).u
    np.testing.assert_allclose(u3, 3.0 * u1, rtol=1e-12, atol=1e-300)


def test_segment_force_is_lift_plus_drag(rng):
    p, model, aero = make()
    s = random_state(rng)
    r = aero.force(s)
    _, _, v_in = aero.application_points(s)
    vw = v_in - p.aero.wind
    n = aero.n_wing
    wings = model.wing_frames(s.q, s.v)
    for k in range(2 * n):
        side = k // n
        _, _, eL, eD = aero.wing_geometry(wings[side], side)
        eLi, eDi = s.R @ eL[k % n], s.R @ eD[k % n]
        vp = (vw[k] @ eLi) * eLi + (vw[k] @ eDi) * eDi       # in-plane relative velocity
        speed = np.linalg.norm(vp)
        qdyn = 0.5 * p.aero.air_density * speed ** 2 * aero.dS[k]
        cl, cd = lift_drag_coeffs(r.beta[k])
        f = r.forces[k]
        assert r.v_r[k] == pytest.approx(speed, rel=1e-12)
        # drag opposes the strip velocity, lift is perpendicular to it
        assert f @ vp / speed == pytest.approx(-qdyn * cd, rel=1e-10, abs=1e-15)
        lift = f - (f @ vp / speed ** 2) * vp
        assert np.linalg.norm(lift) == pytest.approx(qdyn * abs(cl), rel=1e-9, abs=1e-15)


def test_generalized_force_is_sum_of_point_forces(rng):
    p, model, aero = make()
    s = random_state(rng)
    r = aero.force(s)
    J = aero.point_jacobians(s)
    total = sum(map_point_force(J[k], r.forces[k]) for k in range(len(J)))
    np.testing.assert_allclose(r.u, total, atol=1e-12 * np.abs(r.u).max())
    F = r.forces.sum(axis=0)
    assert r.lift == pytest.approx(F[2]) and r.thrust == pytest.approx(F[0])
    np.testing.assert_array_equal(aero.force(s, diagnostics=False), r.u)


def test_point_jacobians_match_finite_differences(rng):
    p, model, aero = make()
    s = random_state(rng)
    J = aero.point_jacobians(s)
    _, _, v_in = aero.application_points(s)
    np.testing.assert_allclose(np.einsum("kij,j->ki", J, s.v), v_in, atol=1e-12)
    h = 1e-6
    q2 = s.q.copy()
    q2[:7] += h * s.v[:7]
    sp = BodyState(q2, s.v, s.R @ expm(h * skew(s.v[7:10])))
    q3 = s.q.copy()
    q3[:7] -= h * s.v[:7]
    sm = BodyState(q3, s.v, s.R @ expm(-h * skew(s.v[7:10])))
    fd = (aero.application_points(sp)[1] - aero.application_points(sm)[1]) / (2 * h)
    np.testing.assert_allclose(fd, v_in, atol=1e-6)


def test_mirror_equivariance(rng):
    p, model, aero = make()
    for _ in range(3):
        r = aero.force(random_state(rng, symmetric=True))
        u = r.u
        scale = np.abs(u).max()
        assert u[0] == pytest.approx(u[2], rel=1e-10)
        assert u[1] == pytest.approx(u[3], rel=1e-10)
        for i in (5, 7, 9):
            assert abs(u[i]) < 1e-12 * scale
        n = aero.n_wing
        np.testing.assert_allclose(r.beta[:n], r.beta[n:], atol=1e-9)


def test_strip_quadrature_converges_at_second_order(rng):
    s = random_state(rng)
    totals = []
    for n in (8, 16, 32, 64):
        u = make({"aero.n_span": str(n), "aero.n_chord": str(n)})[2].force(s).u
        totals.append(u[4:7])
    d1 = np.linalg.norm(totals[1] - totals[2])
    d2 = np.linalg.norm(totals[2] - totals[3])
    assert math.log2(d1 / d2) >= 1.8


def test_segment_csv(tmp_path, rng):
    p, model, aero = make({"aero.n_span": "3", "aero.n_chord": "2"})
    r = aero.force(random_state(rng))
    path = tmp_path / "seg.csv"
    r.to_csv(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 2 * (3 + 3 + 2)
    assert lines[0].startswith("segment,owner,kind,xhat")
