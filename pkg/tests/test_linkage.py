import numpy as np
import pytest

from aerobat.config import fdc_bounds, load_config
from aerobat.linkage import (DRIVEN, FDC, N_Q, TH1, TH9, AssemblyError, Linkage,
                             SingularLinkageError, crank_sweep, one_at_a_time_grid,
                             sensitivity_sweep)


def circle_intersections(c0, r0, c1, r1):
    """Both intersection points of two circles (textbook construction)."""
    d = np.linalg.norm(c1 - c0)
    a = (r0 ** 2 - r1 ** 2 + d ** 2) / (2 * d)
    h = np.sqrt(r0 ** 2 - a ** 2)
    e = (c1 - c0) / d
    m = c0 + a * e
    n = np.array([-e[1], e[0]])
    return m + h * n, m - h * n


@pytest.fixture(scope="module")
def lk(params):
    return Linkage(params.linkage)


@pytest.fixture(scope="module")
def states(params, lk):
    """Assembled, velocity-consistent states at random crank angles and FDC lengths."""
    rng = np.random.default_rng(7)
    lo, hi = fdc_bounds(params)
    out = []
    for _ in range(12):
        fdc = rng.uniform(lo, hi)
        path = crank_sweep(lk, fdc, params.linkage.assembly_guess, 24)
        q = path[rng.integers(len(path))]
        qd = np.zeros(N_Q)
        qd[TH1] = rng.normal() * 60.0
        qd[FDC] = rng.normal(size=4) * 0.02
        out.append((q, lk.project_velocity(q, qd)))
    return out


def test_assembly_matches_circle_intersections(params, lk):
    g = params.linkage
    for th1 in np.linspace(0, 2 * np.pi, 9)[:-1]:
        q = crank_sweep(lk, g.l0, g.assembly_guess, 8)[int(round(th1 / (np.pi / 4)))]
        pose = lk.forward_kinematics(q).points
        loops = [
            (pose["p2"], g.l2, np.asarray(g.p4), g.l3a + q[8], pose["p3A"]),
            (pose["p10"], g.l10a + q[11], np.asarray(g.p12), g.l8a + q[10], pose["p11A"]),
            (pose["p13"], g.l13, pose["p14"], g.l14, pose["p15A"]),
        ]
        for c0, r0, c1, r1, joint in loops:
            cands = circle_intersections(c0, r0, c1, r1)
            assert min(np.linalg.norm(joint - c) for c in cands) < 1e-9
        # dual-path joints agree
        for a, b in (("p3A", "p3B"), ("p11A", "p11B"), ("p15A", "p15B")):
            np.testing.assert_allclose(pose[a], pose[b], atol=1e-10)


def test_phase_constraint(params, lk):
    q = lk.assemble(1.3, params.linkage.l0, params.linkage.assembly_guess)
    assert abs(q[TH1] - q[TH9] - params.linkage.delta_phi) < 1e-12


def test_jacobian_matches_finite_differences(lk, states):
    h = 1e-6
    for q, _ in states:
        J = lk.jacobian(q)
        for i in range(N_Q):
            e = np.zeros(N_Q)
            e[i] = h
            fd = (lk.residual(q + e) - lk.residual(q - e)) / (2 * h)
            np.testing.assert_allclose(J[:, i], fd, atol=1e-8)


def test_bias_is_time_derivative_of_jacobian(lk, states):
    h = 1e-6
    for q, qd in states:
        fd = (lk.jacobian(q + h * qd) @ qd - lk.jacobian(q - h * qd) @ qd) / (2 * h)
        np.testing.assert_allclose(lk.bias(q, qd), fd, atol=1e-6)


def test_accel_satisfies_constraints_and_commands(lk, states):
    rng = np.random.default_rng(3)
    for q, qd in states:
        u = rng.normal(size=5)
        qdd = lk.accel(q, qd, u)
        np.testing.assert_allclose(qdd[DRIVEN], u, atol=1e-12)
        np.testing.assert_allclose(lk.jacobian(q) @ qdd + lk.bias(q, qd), 0, atol=1e-9)


def test_accel_matches_second_derivative_of_constrained_path(params, lk):
    # drive th1 at constant rate: q(t) along the assembled path, qdd by differences
    g = params.linkage
    w, h = 5.0, 1e-4
    qs = [lk.assemble(w * t, g.l0, g.assembly_guess) for t in (0.1 - h, 0.1, 0.1 + h)]
    qd = (qs[2] - qs[0]) / (2 * h)
    qdd_fd = (qs[2] - 2 * qs[1] + qs[0]) / h ** 2
    qdd = lk.accel(qs[1], lk.project_velocity(qs[1], qd), np.zeros(5))
    np.testing.assert_allclose(qdd, qdd_fd, atol=1e-4 * max(1, np.abs(qdd).max()))


def test_projection_restores_manifold(lk, states, rng):
    for q, qd in states:
        q2 = q + np.r_[0.0, rng.normal(size=7) * 1e-4, np.zeros(4)]
        qd2 = qd + rng.normal(size=N_Q)
        qp, qdp = lk.project(q2, qd2)
        assert np.max(np.abs(lk.residual(qp))) <= 1e-12
        np.testing.assert_allclose(lk.jacobian(qp) @ qdp, 0, atol=1e-10)
        # crank, FDC lengths and their rates are never altered
        np.testing.assert_array_equal(qp[DRIVEN], q2[DRIVEN])
        np.testing.assert_array_equal(qdp[DRIVEN], qd2[DRIVEN])


def test_end_effector_jacobians_and_velocities(lk, states):
    h = 1e-7
    for q, qd in states:
        J5, J16 = lk.end_effector_jacobians(q)
        _, _, v5, v16 = lk.end_effectors(q, qd)
        for i in range(N_Q):
            e = np.zeros(N_Q)
            e[i] = h
            a5, a16 = lk.end_effectors(q + e)
            b5, b16 = lk.end_effectors(q - e)
            np.testing.assert_allclose(J5[:, i], (a5 - b5) / (2 * h), atol=1e-8)
            np.testing.assert_allclose(J16[:, i], (a16 - b16) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(v5, J5 @ qd, atol=1e-12)
        np.testing.assert_allclose(v16, J16 @ qd, atol=1e-12)


def test_crank_sweep_closes_and_is_deterministic(params, lk):
    g = params.linkage
    a = crank_sweep(lk, g.l0, g.assembly_guess, 90)
    b = crank_sweep(lk, g.l0, g.assembly_guess, 90)
    assert a.shape == (90, N_Q)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[:, TH1], np.linspace(0, 2 * np.pi, 90, endpoint=False))
    assert max(np.max(np.abs(lk.residual(q))) for q in a) < 1e-10


def test_one_at_a_time_grid(params):
    grid = one_at_a_time_grid(params.linkage.l0)
    assert grid.shape == (17, 4)
    np.testing.assert_array_equal(grid[0], params.linkage.l0)
    changed = (grid[1:] != grid[0]).sum(axis=1)
    assert np.all(changed == 1)


def test_sensitivity_sweep_records_failures(params):
    g = params.linkage
    bad = np.array([g.l0, g.l0 * np.array([1, 1, 1, 5.0])])
    sw = sensitivity_sweep(g, bad, 36)
    assert 1 in sw.errors and 0 not in sw.errors
    assert np.all(np.isfinite(sw.p5[0])) and np.all(np.isnan(sw.p5[1]))


def test_unassemblable_geometry_raises():
    p = load_config(None, {"linkage.l2": "0.05"}, check_assembly=False)
    lk = Linkage(p.linkage)
    with pytest.raises(AssemblyError):
        lk.assemble(0.0, p.linkage.l0, p.linkage.assembly_guess)


def test_singular_accel_raises(lk, states, monkeypatch):
    q, qd = states[0]
    monkeypatch.setattr(lk, "jacobian", lambda q: np.zeros((7, N_Q)))
    with pytest.raises(SingularLinkageError):
        lk.accel(q, qd, np.zeros(5))
