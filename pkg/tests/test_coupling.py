import numpy as np
import pytest
from scipy.linalg import expm

from aerobat.body import BodyState, MassedModel, skew
from aerobat.coupling import (CoincidentPointsError, guide_force, guide_wrench, map_point_force,
                              torsional_energy, torsional_forces, wing_point_wrench)


@pytest.fixture(scope="module")
def model(params):
    return MassedModel(params.massed)


def test_hooke_sign_and_magnitude():
    # stretched: massed point pulled toward the linkage point
    f, s = guide_force([0.0, 0.02], [0, 0], [0.0, 0.0], [0, 0], 100.0, 0.0, 0.01)
    np.testing.assert_allclose(f, [0.0, 1.0])
    assert s == pytest.approx(0.01)
    # compressed: pushed away
    f, s = guide_force([0.005, 0.0], [0, 0], [0.0, 0.0], [0, 0], 100.0, 0.0, 0.01)
    np.testing.assert_allclose(f, [-0.5, 0.0])
    assert s == pytest.approx(-0.005)


def test_force_is_collinear_with_separation(rng):
    for _ in range(20):
        a, b = rng.normal(size=2), rng.normal(size=2)
        f, _ = guide_force(a, rng.normal(size=2), b, rng.normal(size=2), 50.0, 2.0, 0.3)
        d = a - b
        assert abs(d[0] * f[1] - d[1] * f[0]) < 1e-12 * max(1.0, np.linalg.norm(f))


def test_damping_uses_separation_rate():
    # 3-4-5 geometry: separation rate = (v_link - v_body) . e
    f, _ = guide_force([3.0, 4.0], [1.0, 2.0], [0.0, 0.0], [0.0, 0.0], 0.0, 10.0, 5.0)
    e = np.array([0.6, 0.8])
    np.testing.assert_allclose(f, 10.0 * (0.6 + 1.6) * e)


def test_coincident_points_raise():
    with pytest.raises(CoincidentPointsError):
        guide_force([1.0, 1.0], [0, 0], [1.0, 1.0], [0, 0], 1.0, 0.0, 0.0)


def test_torsional_force_is_energy_gradient(params, rng):
    m = params.massed
    th = rng.normal(size=4) * 0.3
    h = 1e-6
    grad = np.array([(torsional_energy(th + h * e, m) - torsional_energy(th - h * e, m)) / (2 * h)
                     for e in np.eye(4)])
    np.testing.assert_allclose(torsional_forces(th, np.zeros(4), m), -grad, atol=1e-10)
    np.testing.assert_allclose(torsional_forces(np.zeros(4) + [m.shoulder_rest_angle,
                               m.elbow_rest_angle] * 2, [1, 2, 3, 4], m),
                               -np.array([m.shoulder_damping, m.elbow_damping] * 2) * [1, 2, 3, 4])


def random_state(rng):
    q = np.r_[rng.uniform(-0.5, 0.5, 4), rng.normal(size=3)]
    return BodyState(q, rng.normal(size=10), expm(skew(rng.normal(size=3))))


def test_point_wrench_equals_jacobian_transpose_and_virtual_power(model, rng):
    for _ in range(5):
        s = random_state(rng)
        wings = model.wing_frames(s.q, s.v)
        for side in (0, 1):
            wf = wings[side]
            for on_radius, point in ((False, wf.shoulder + 0.4 * wf.humerus),
                                     (True, wf.elbow + 0.7 * wf.radius)):
                f_body = rng.normal(size=3)
                J = model.point_jacobian(s, side, point, on_radius)
                u = map_point_force(J, s.R @ f_body)
                np.testing.assert_allclose(wing_point_wrench(wf, side, point, f_body, s.R,
                                                             on_radius), u, atol=1e-14)
                # generalized power equals force times point velocity
                assert u @ s.v == pytest.approx((s.R @ f_body) @ (J @ s.v), rel=1e-12)


def test_guide_wrench_mirror_symmetry(model, params):
    q = np.r_[0.1, 0.2, 0.1, 0.2, 0.0, 0.0, 0.0]
    v = np.r_[3.0, -1.0, 3.0, -1.0, np.zeros(6)]
    wings = model.wing_frames(q, v)
    ee = (np.array([0.03, 0.1]), np.array([0.2, 0.05]), np.array([0.1, -0.2]),
          np.array([0.3, 0.1]))
    g = guide_wrench(ee, wings, np.eye(3), params.massed, 0.01, 0.015)
    u = g.generalized
    assert u[0] == pytest.approx(u[2], rel=1e-12)
    assert u[1] == pytest.approx(u[3], rel=1e-12)
    assert abs(u[5]) < 1e-12 * np.abs(u).max()          # no lateral force
    assert abs(u[7]) < 1e-12 * np.abs(u).max()          # no roll moment
    assert abs(u[9]) < 1e-12 * np.abs(u).max()          # no yaw moment
    np.testing.assert_allclose(g.f6[1], g.f6[0] * [-1, 1], atol=1e-12)


def test_guides_off_give_zero(model, params):
    from aerobat.config import load_config
    p = load_config(None, {"massed.guide_stiffness": "0", "massed.guide_damping": "0"})
    wings = model.wing_frames(np.zeros(7), np.zeros(10))
    ee = (np.zeros(2), np.ones(2), np.zeros(2), np.zeros(2))
    assert np.all(guide_wrench(ee, wings, np.eye(3), p.massed, 0.01, 0.01).generalized == 0)
