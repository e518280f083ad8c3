"""Compiled time-stepping kernel.

A numba transcription of the right-hand side in :mod:`aerobat.sim` (linkage,
massed dynamics, guides, joint springs, aerodynamics, controllers) together
with the RK4 step, projection and recording loop.  The numpy modules stay the
reference implementation; tests check that both agree to round-off.

All model data is passed as one :class:`KernelData` named tuple of arrays.
"""
from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

KernelData = namedtuple("KernelData", [
    # linkage loop terms
    "l_row", "l_angle", "l_fdc", "l_sign", "l_off", "l_len", "l_const",
    "l_misc",          # delta_phi, v5x, v5y, p12y, p12z, l12, l12_angle, l8c, arm8_angle
    # massed model
    "m_misc",          # alpha, g, k_s, k_e, b_s, b_e, rest_s, rest_e, k_g, b_g, rest6, rest17
    "m_lH", "m_lR", "m_p7", "m_mass", "m_inertia",
    # aero strip table of the left wing
    "a_misc",          # enabled, rho, wind_x, wind_y, wind_z
    "a_rad", "a_w", "a_eL", "a_eD", "a_dS",
    # controller
    "c_misc",          # omega_ref, kd1, closed_loop, pitch_ref
    "c_kp", "c_kd", "c_lzp", "c_kc", "c_lmin", "c_lmax",
    # sim
    "s_misc",          # projection tol, reorthonormalize flag, momentum sign
])

N_CHAN = 12   # momentum(3), pitch, lift, thrust, constraint, l_ref(4), status


def pack(sim) -> KernelData:
    """Collect the arrays the kernel needs from a :class:`~aerobat.sim.Simulator`."""
    lk = sim.linkage
    t = lk.terms
    g = lk.geom
    m = sim.params.massed
    mm = sim.model
    c = sim.ctrl
    a = sim.params.aero
    if sim.aero is not None:
        tab = sim.aero.table
        a_rad = tab.on_radius.astype(np.int64)
        a_w, a_eL, a_eD, a_dS = tab.w, tab.e_L, tab.e_D, tab.dS
    else:
        a_rad = np.zeros(1, np.int64)
        a_w = a_eL = a_eD = np.zeros((1, 3))
        a_dS = np.zeros(1)
    f = np.ascontiguousarray
    return KernelData(
        f(t.row.astype(np.int64)), f(t.angle.astype(np.int64)), f(t.fdc.astype(np.int64)),
        f(t.sign, dtype=float), f(t.offset, dtype=float), f(t.length, dtype=float),
        f(t.const, dtype=float),
        np.array([g.delta_phi, lk.v5[0], lk.v5[1], lk.p12[0], lk.p12[1], g.l12, g.l12_angle,
                  g.l8c, g.arm8_angle]),
        np.array([mm.alpha, mm.g, m.shoulder_stiffness, m.elbow_stiffness, m.shoulder_damping,
                  m.elbow_damping, m.shoulder_rest_angle, m.elbow_rest_angle,
                  m.guide_stiffness, m.guide_damping, sim.rest6, sim.rest17]),
        f(mm.l_H), f(mm.l_R), f(mm.p7), f(mm.masses), f(mm.inertias),
        np.array([1.0 if sim.aero is not None else 0.0, a.air_density, *a.wind]),
        f(a_rad), f(a_w, dtype=float), f(a_eL, dtype=float), f(a_eD, dtype=float),
        f(a_dS, dtype=float),
        np.array([c.omega_ref, c.crank_gain, 1.0 if c.closed_loop else 0.0, c.pitch_ref]),
        f(c.kp, dtype=float), f(c.kd, dtype=float), f(c.l_ref_zp, dtype=float),
        f(c.pitch_gain, dtype=float), f(c.l_min, dtype=float), f(c.l_max, dtype=float),
        np.array([sim.tol, 0.0 if sim.params.sim.reorthonormalize == "none" else 1.0,
                  -1.0 if sim.momentum_sign == "negated" else 1.0]),
    )


# -- small helpers ---------------------------------------------------------

@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _ex_cross(v):
    # e_x x v
    out = np.empty(3)
    out[0] = 0.0
    out[1] = -v[2]
    out[2] = v[1]
    return out


@njit(cache=True)
def _rot_x(a):
    c = np.cos(a)
    s = np.sin(a)
    R = np.zeros((3, 3))
    R[0, 0] = 1.0
    R[1, 1] = c
    R[1, 2] = -s
    R[2, 1] = s
    R[2, 2] = c
    return R


@njit(cache=True)
def _mv(A, x):
    # small dense A @ x without BLAS call overhead
    n, m = A.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * x[j]
        out[i] = acc
    return out


@njit(cache=True)
def _mtv(A, x):
    n, m = A.shape
    out = np.zeros(m)
    for i in range(n):
        xi = x[i]
        for j in range(m):
            out[j] += A[i, j] * xi
    return out


@njit(cache=True)
def _mm(A, B):
    n, k = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(k):
            a = A[i, p]
            for j in range(m):
                out[i, j] += a * B[p, j]
    return out


# -- linkage ---------------------------------------------------------------

@njit(cache=True)
def _lengths(q, K):
    L = K.l_len.copy()
    for t in range(K.l_row.shape[0]):
        if K.l_fdc[t] >= 0:
            L[t] += q[K.l_fdc[t]]
    return L


@njit(cache=True)
def lin_residual(q, K):
    c = np.zeros(7)
    L = _lengths(q, K)
    for r in range(3):
        c[2 * r] = K.l_const[r, 0]
        c[2 * r + 1] = K.l_const[r, 1]
    for t in range(K.l_row.shape[0]):
        a = q[K.l_angle[t]] + K.l_off[t]
        r = K.l_row[t]
        c[2 * r] += K.l_sign[t] * L[t] * np.cos(a)
        c[2 * r + 1] += K.l_sign[t] * L[t] * np.sin(a)
    c[6] = q[0] - q[3] - K.l_misc[0]
    return c


@njit(cache=True)
def lin_jacobian(q, K):
    J = np.zeros((7, 12))
    L = _lengths(q, K)
    for t in range(K.l_row.shape[0]):
        a = q[K.l_angle[t]] + K.l_off[t]
        r = K.l_row[t]
        s = K.l_sign[t]
        J[2 * r, K.l_angle[t]] += -s * L[t] * np.sin(a)
        J[2 * r + 1, K.l_angle[t]] += s * L[t] * np.cos(a)
        if K.l_fdc[t] >= 0:
            J[2 * r, K.l_fdc[t]] += s * np.cos(a)
            J[2 * r + 1, K.l_fdc[t]] += s * np.sin(a)
    J[6, 0] = 1.0
    J[6, 3] = -1.0
    return J


@njit(cache=True)
def lin_bias(q, qd, K):
    h = np.zeros(7)
    L = _lengths(q, K)
    for t in range(K.l_row.shape[0]):
        a = q[K.l_angle[t]] + K.l_off[t]
        w = qd[K.l_angle[t]]
        Ld = qd[K.l_fdc[t]] if K.l_fdc[t] >= 0 else 0.0
        r = K.l_row[t]
        s = K.l_sign[t]
        ca = np.cos(a)
        sa = np.sin(a)
        h[2 * r] += s * (-L[t] * w * w * ca - 2.0 * w * Ld * sa)
        h[2 * r + 1] += s * (-L[t] * w * w * sa + 2.0 * w * Ld * ca)
    return h


FREE = np.array([1, 2, 3, 4, 5, 6, 7])
DRIVEN = np.array([0, 8, 9, 10, 11])


@njit(cache=True)
def _free_cols(J):
    A = np.empty((7, 7))
    for i in range(7):
        for j in range(7):
            A[i, j] = J[i, 1 + j]
    return A


@njit(cache=True)
def lin_accel(q, qd, u1, K):
    """Driven accelerations are the commands; free ones follow from C'' = 0."""
    J = lin_jacobian(q, K)
    h = lin_bias(q, qd, K)
    qdd = np.zeros(12)
    qdd[0] = u1[0]
    for i in range(4):
        qdd[8 + i] = u1[1 + i]
    rhs = np.empty(7)
    for i in range(7):
        acc = -h[i]
        acc -= J[i, 0] * qdd[0]
        for j in range(8, 12):
            acc -= J[i, j] * qdd[j]
        rhs[i] = acc
    x = np.linalg.solve(_free_cols(J), rhs)
    for i in range(7):
        qdd[1 + i] = x[i]
    return qdd


@njit(cache=True)
def lin_project_kernel(q, qd, K, tol):
    """Newton position projection of the free angles, then velocity projection.

    Returns False when Newton does not converge.
    """
    ok = False
    for _ in range(21):
        c = lin_residual(q, K)
        if np.max(np.abs(c)) <= tol:
            ok = True
            break
        J = lin_jacobian(q, K)
        dq = np.linalg.solve(_free_cols(J), -c)
        step = np.max(np.abs(dq))
        if step > 0.5:
            dq *= 0.5 / step
        for i in range(7):
            q[1 + i] += dq[i]
    if not ok:
        return False
    J = lin_jacobian(q, K)
    rhs = np.empty(7)
    for i in range(7):
        acc = -J[i, 0] * qd[0]
        for j in range(8, 12):
            acc -= J[i, j] * qd[j]
        rhs[i] = acc
    x = np.linalg.solve(_free_cols(J), rhs)
    for i in range(7):
        qd[1 + i] = x[i]
    return True


@njit(cache=True)
def end_effectors(q, qd, K):
    """[p5 (2), p16 (2), v5 (2), v16 (2)] of the left linkage."""
    c14 = np.cos(q[7])
    s14 = np.sin(q[7])
    r5y = c14 * K.l_misc[1] - s14 * K.l_misc[2]
    r5z = s14 * K.l_misc[1] + c14 * K.l_misc[2]
    a8 = q[5] + K.l_misc[8]
    l8c = K.l_misc[7]
    a12 = q[5] + K.l_misc[6]
    l12 = K.l_misc[5]
    out = np.empty(8)
    out[0] = K.l_misc[3] + l8c * np.cos(a8) + r5y
    out[1] = K.l_misc[4] + l8c * np.sin(a8) + r5z
    out[2] = out[0] + l12 * np.cos(a12)
    out[3] = out[1] + l12 * np.sin(a12)
    out[4] = -qd[7] * r5z - qd[5] * l8c * np.sin(a8)
    out[5] = qd[7] * r5y + qd[5] * l8c * np.cos(a8)
    out[6] = out[4] - qd[5] * l12 * np.sin(a12)
    out[7] = out[5] + qd[5] * l12 * np.cos(a12)
    return out


# -- massed model ----------------------------------------------------------

@njit(cache=True)
def wing_frames(q2, v, K):
    """Per side: R_h, R_r (2,3,3); shoulder, humerus, radius (2,3); rates (2,2)."""
    alpha = K.m_misc[0]
    Rh = np.empty((2, 3, 3))
    Rr = np.empty((2, 3, 3))
    sh = np.empty((2, 3))
    hum = np.empty((2, 3))
    rad = np.empty((2, 3))
    rates = np.empty((2, 2))
    for side in range(2):
        s = 1.0 if side == 0 else -1.0
        ths = q2[2 * side]
        the = q2[2 * side + 1]
        Rh[side] = _rot_x(s * (ths - alpha))
        Rr[side] = _rot_x(s * (the + ths + alpha))
        lH = K.m_lH.copy()
        lR = K.m_lR.copy()
        p7 = K.m_p7.copy()
        lH[1] *= s
        lR[1] *= s
        p7[1] *= s
        sh[side] = p7
        hum[side] = _mv(Rh[side], lH)
        rad[side] = _mv(Rr[side], lR)
        rates[side, 0] = s * v[2 * side]
        rates[side, 1] = s * (v[2 * side] + v[2 * side + 1])
    return Rh, Rr, sh, hum, rad, rates


@njit(cache=True)
def _skew_mat(r):
    S = np.zeros((3, 3))
    S[0, 1] = -r[2]
    S[0, 2] = r[1]
    S[1, 0] = r[2]
    S[1, 2] = -r[0]
    S[2, 0] = -r[1]
    S[2, 1] = r[0]
    return S


@njit(cache=True)
def massed_kinematics(q2, v, R, K):
    """CoM offsets, Jacobians, angular velocities and bias accelerations."""
    Rh, Rr, sh, hum, rad, rates = wing_frames(q2, v, K)
    wB = v[7:10].copy()
    r = np.zeros((5, 3))
    drdth = np.zeros((5, 3, 4))
    rdot = np.zeros((5, 3))
    rdd = np.zeros((5, 3))
    Rl = np.zeros((5, 3, 3))
    for i in range(3):
        Rl[0, i, i] = 1.0
    Jw = np.zeros((5, 3, 10))
    for i in range(3):
        Jw[0, i, 7 + i] = 1.0
    w = np.zeros((5, 3))
    w[0] = wB
    al = np.zeros((5, 3))
    for side in range(2):
        s = 1.0 if side == 0 else -1.0
        ih = 1 + side
        ir = 3 + side
        cs = 2 * side
        ce = 2 * side + 1
        half_h = 0.5 * hum[side]
        half_r = 0.5 * rad[side]
        rh = rates[side, 0]
        rr = rates[side, 1]
        r[ih] = sh[side] + half_h
        r[ir] = sh[side] + hum[side] + half_r
        xh = _ex_cross(half_h)
        xr = _ex_cross(half_r)
        xH = _ex_cross(hum[side])
        for k in range(3):
            drdth[ih, k, cs] = s * xh[k]
            drdth[ir, k, cs] = s * (xH[k] + xr[k])
            drdth[ir, k, ce] = s * xr[k]
            rdot[ih, k] = rh * xh[k]
            rdot[ir, k] = rh * xH[k] + rr * xr[k]
        xxh = _ex_cross(xh)
        xxH = _ex_cross(xH)
        xxr = _ex_cross(xr)
        for k in range(3):
            rdd[ih, k] = rh * rh * xxh[k]
            rdd[ir, k] = rh * rh * xxH[k] + rr * rr * xxr[k]
        for idx in range(2):
            i = ih if idx == 0 else ir
            Rli = Rh[side] if idx == 0 else Rr[side]
            rate = rh if idx == 0 else rr
            Rl[i] = Rli
            for a in range(3):
                for b in range(3):
                    Jw[i, a, 7 + b] = Rli[b, a]
            Jw[i, 0, cs] = s
            if idx == 1:
                Jw[i, 0, ce] = s
            wl = _mtv(Rli, wB)
            for k in range(3):
                w[i, k] = wl[k]
            w[i, 0] += rate
            ex_rate = np.zeros(3)
            ex_rate[0] = rate
            al[i] = _cross(wl, ex_rate)
    Jv = np.zeros((5, 3, 10))
    for i in range(5):
        RD = _mm(R, drdth[i])
        RS = -_mm(R, _skew_mat(r[i]))
        for a in range(3):
            for c in range(4):
                Jv[i, a, c] = RD[a, c]
            Jv[i, a, 4 + a] = 1.0
            for c in range(3):
                Jv[i, a, 7 + c] = RS[a, c]
    a_bias = np.zeros((5, 3))
    xd = np.zeros((5, 3))
    x = np.zeros((5, 3))
    for i in range(5):
        wxr = _cross(wB, r[i])
        ab = _cross(wB, wxr) + 2.0 * _cross(wB, rdot[i]) + rdd[i]
        a_bias[i] = _mv(R, ab)
        xd[i] = v[4:7] + _mv(R, wxr + rdot[i])
        x[i] = q2[4:7] + _mv(R, r[i])
    return r, Jv, Jw, w, Rl, a_bias, al, x, xd


@njit(cache=True)
def massed_matrices(q2, v, R, K, gravity):
    r, Jv, Jw, w, Rl, a_bias, al, x, xd = massed_kinematics(q2, v, R, K)
    M = np.zeros((10, 10))
    h = np.zeros(10)
    for i in range(5):
        m = K.m_mass[i]
        I = K.m_inertia[i]
        Jvi = Jv[i]
        Jwi = Jw[i]
        IJ = _mm(I, Jwi)
        for a in range(3):
            for c in range(10):
                jv = m * Jvi[a, c]
                jw = Jwi[a, c]
                if jv == 0.0 and jw == 0.0:
                    continue
                for d in range(10):
                    M[c, d] += jv * Jvi[a, d] + jw * IJ[a, d]
        acc = a_bias[i].copy()
        acc[2] += gravity
        h += m * _mtv(Jvi, acc)
        Iw = _mv(I, w[i])
        tau = _mv(I, al[i]) + _cross(w[i], Iw)
        h += _mtv(Jwi, tau)
    M = 0.5 * (M + M.T)
    return M, h, w, Rl, x, xd


@njit(cache=True)
def momentum(q2, v, R, K, sign):
    M, h, w, Rl, x, xd = massed_matrices(q2, v, R, K, 0.0)
    mt = np.sum(K.m_mass)
    com = np.zeros(3)
    for i in range(5):
        com += K.m_mass[i] * x[i]
    com /= mt
    P = np.zeros(3)
    for i in range(5):
        spin = _mv(R, _mv(Rl[i], _mv(K.m_inertia[i], w[i])))
        orb = K.m_mass[i] * _cross(x[i] - com, xd[i])
        P += spin + sign * orb
    return P


# -- forces ----------------------------------------------------------------

@njit(cache=True)
def _point_wrench(u, side, s, point, f, shoulder, elbow, R, on_radius):
    u[2 * side] += s * _cross(point - shoulder, f)[0]
    if on_radius:
        u[2 * side + 1] += s * _cross(point - elbow, f)[0]
    u[4:7] += _mv(R, f)
    u[7:10] += _cross(point, f)


@njit(cache=True)
def _guide(u, py, pz, vy, vz, side, s, point, pv, shoulder, elbow, R, on_radius, k, b, rest):
    dy = py - point[1]
    dz = pz - point[2]
    dist = np.sqrt(dy * dy + dz * dz)
    if dist < 1e-12:
        return False
    ey = dy / dist
    ez = dz / dist
    rate = (vy - pv[1]) * ey + (vz - pv[2]) * ez
    mag = k * (dist - rest) + b * rate
    f = np.zeros(3)
    f[1] = mag * ey
    f[2] = mag * ez
    _point_wrench(u, side, s, point, f, shoulder, elbow, R, on_radius)
    return True


@njit(cache=True)
def _coeffs(beta):
    cl = 0.225 + 1.58 * np.sin(np.deg2rad(2.13 * beta - 7.2))
    cd = 1.92 - 1.55 * np.cos(np.deg2rad(2.04 * beta - 9.82))
    return cl, cd


@njit(cache=True)
def aero_force(u, q2, v, R, Rh, Rr, sh, hum, rad, rates, K):
    """Add the aerodynamic generalized force to ``u``; returns body-frame total force.

    Written with scalar arithmetic: link rotations are about body x only.
    """
    rho = K.a_misc[1]
    dvx = v[4] - K.a_misc[2]
    dvy = v[5] - K.a_misc[3]
    dvz = v[6] - K.a_misc[4]
    # body-frame translational part of v_a - v_inf
    wbx = R[0, 0] * dvx + R[1, 0] * dvy + R[2, 0] * dvz
    wby = R[0, 1] * dvx + R[1, 1] * dvy + R[2, 1] * dvz
    wbz = R[0, 2] * dvx + R[1, 2] * dvy + R[2, 2] * dvz
    ox, oy, oz = v[7], v[8], v[9]
    Fx = Fy = Fz = 0.0
    Mx = My = Mz = 0.0
    n = K.a_dS.shape[0]
    for side in range(2):
        s = 1.0 if side == 0 else -1.0
        sy, sz = sh[side, 1], sh[side, 2]
        sx = sh[side, 0]
        ey = sy + hum[side, 1]
        ez = sz + hum[side, 2]
        rh = rates[side, 0]
        rr = rates[side, 1]
        vey = -rh * hum[side, 2]
        vez = rh * hum[side, 1]
        ch, snh = Rh[side, 1, 1], Rh[side, 2, 1]
        cr, snr = Rr[side, 1, 1], Rr[side, 2, 1]
        ts = 0.0
        te = 0.0
        for k in range(n):
            radial = K.a_rad[k] == 1
            c = cr if radial else ch
            sn = snr if radial else snh
            wy = s * K.a_w[k, 1]
            wz = K.a_w[k, 2]
            dx = K.a_w[k, 0]
            dy = c * wy - sn * wz
            dz = sn * wy + c * wz
            Ly = s * K.a_eL[k, 1]
            Lz = K.a_eL[k, 2]
            Lx = K.a_eL[k, 0]
            Dy = s * K.a_eD[k, 1]
            Dz = K.a_eD[k, 2]
            Dx = K.a_eD[k, 0]
            eLy = c * Ly - sn * Lz
            eLz = sn * Ly + c * Lz
            eDy = c * Dy - sn * Dz
            eDz = sn * Dy + c * Dz
            if radial:
                px = sx + dx
                py = ey + dy
                pz = ez + dz
                pvy = vey - rr * dz
                pvz = vez + rr * dy
            else:
                px = sx + dx
                py = sy + dy
                pz = sz + dz
                pvy = -rh * dz
                pvz = rh * dy
            vx = wbx + oy * pz - oz * py
            vy = wby + oz * px - ox * pz + pvy
            vz = wbz + ox * py - oy * px + pvz
            a = vx * Lx + vy * eLy + vz * eLz
            b = vx * Dx + vy * eDy + vz * eDz
            vr = np.sqrt(a * a + b * b)
            if vr < 1e-12:
                continue
            beta = -np.degrees(np.arctan2(a, b))
            cl, cd = _coeffs(beta)
            qd = 0.5 * rho * vr * K.a_dS[k]
            cL = qd * (cl * b - cd * a)
            cD = qd * (-cl * a - cd * b)
            fx = cL * Lx + cD * Dx
            fy = cL * eLy + cD * eDy
            fz = cL * eLz + cD * eDz
            Fx += fx
            Fy += fy
            Fz += fz
            ts += (py - sy) * fz - (pz - sz) * fy
            if radial:
                te += (py - ey) * fz - (pz - ez) * fy
            Mx += py * fz - pz * fy
            My += pz * fx - px * fz
            Mz += px * fy - py * fx
        u[2 * side] += s * ts
        u[2 * side + 1] += s * te
    u[7] += Mx
    u[8] += My
    u[9] += Mz
    total = np.empty(3)
    total[0] = Fx
    total[1] = Fy
    total[2] = Fz
    u[4:7] += _mv(R, total)
    return total


# -- right-hand side -------------------------------------------------------

@njit(cache=True)
def pitch_of(R):
    x = -R[2, 0]
    if x > 1.0:
        x = 1.0
    elif x < -1.0:
        x = -1.0
    return np.arcsin(x)


@njit(cache=True)
def reference(R, K):
    if K.c_misc[2] == 0.0:
        return K.c_lzp.copy()
    e = K.c_misc[3] - pitch_of(R)
    out = K.c_lzp + K.c_kc * e
    for i in range(4):
        if out[i] < K.c_lmin[i]:
            out[i] = K.c_lmin[i]
        elif out[i] > K.c_lmax[i]:
            out[i] = K.c_lmax[i]
    return out


@njit(cache=True)
def rhs(y, K):
    """Time derivative of the 50-entry state.  Raises on singular solves."""
    q1 = y[0:12]
    qd1 = y[12:24]
    q2 = y[24:31]
    v = y[31:41]
    R = y[41:50].copy().reshape(3, 3)
    l_ref = reference(R, K)
    u1 = np.empty(5)
    u1[0] = K.c_misc[1] * (K.c_misc[0] - qd1[0])
    for i in range(4):
        u1[1 + i] = K.c_kp[i] * (l_ref[i] - q1[8 + i]) - K.c_kd[i] * qd1[8 + i]
    qdd1 = lin_accel(q1, qd1, u1, K)

    mm = K.m_misc
    M, h, w, Rl, x, xd = massed_matrices(q2, v, R, K, mm[1])
    u = np.zeros(10)
    u[0] = -(mm[2] * (q2[0] - mm[6]) + mm[4] * v[0])
    u[1] = -(mm[3] * (q2[1] - mm[7]) + mm[5] * v[1])
    u[2] = -(mm[2] * (q2[2] - mm[6]) + mm[4] * v[2])
    u[3] = -(mm[3] * (q2[3] - mm[7]) + mm[5] * v[3])
    Rh, Rr, sh, hum, rad, rates = wing_frames(q2, v, K)
    if mm[8] != 0.0 or mm[9] != 0.0:
        ee = end_effectors(q1, qd1, K)
        for side in range(2):
            s = 1.0 if side == 0 else -1.0
            elbow = sh[side] + hum[side]
            tip = elbow + rad[side]
            v_elbow = rates[side, 0] * _ex_cross(hum[side])
            v_tip = v_elbow + rates[side, 1] * _ex_cross(rad[side])
            ok6 = _guide(u, s * ee[0], ee[1], s * ee[4], ee[5], side, s, elbow, v_elbow,
                         sh[side], elbow, R, False, mm[8], mm[9], mm[10])
            ok17 = _guide(u, s * ee[2], ee[3], s * ee[6], ee[7], side, s, tip, v_tip,
                          sh[side], elbow, R, True, mm[8], mm[9], mm[11])
            if not (ok6 and ok17):
                raise ValueError("guide endpoints coincide")
    if K.a_misc[0] != 0.0:
        aero_force(u, q2, v, R, Rh, Rr, sh, hum, rad, rates, K)
    vdot = np.linalg.solve(M, u - h)

    yd = np.empty(50)
    yd[0:12] = qd1
    yd[12:24] = qdd1
    yd[24:28] = v[0:4]
    yd[28:31] = v[4:7]
    yd[31:41] = vdot
    Rd = _mm(R, _skew_mat(v[7:10]))
    yd[41:50] = Rd.ravel()
    return yd


@njit(cache=True)
def _polar(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        for i in range(3):
            U[i, 2] = -U[i, 2]
        Q = U @ Vt
    return Q


@njit(cache=True)
def step(y, dt, K):
    """RK4 step plus projection; returns (new state, ok)."""
    k1 = rhs(y, K)
    k2 = rhs(y + 0.5 * dt * k1, K)
    k3 = rhs(y + 0.5 * dt * k2, K)
    k4 = rhs(y + dt * k3, K)
    yn = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q = yn[0:12].copy()
    qd = yn[12:24].copy()
    ok = lin_project_kernel(q, qd, K, K.s_misc[0])
    yn[0:12] = q
    yn[12:24] = qd
    if K.s_misc[1] != 0.0:
        Q = _polar(yn[41:50].copy().reshape(3, 3))
        yn[41:50] = Q.ravel()
    return yn, ok


@njit(cache=True)
def channels(y, K, out):
    q2 = y[24:31]
    v = y[31:41]
    R = y[41:50].copy().reshape(3, 3)
    P = momentum(q2, v, R, K, K.s_misc[2])
    out[0:3] = P
    out[3] = pitch_of(R)
    out[4] = 0.0
    out[5] = 0.0
    if K.a_misc[0] != 0.0:
        Rh, Rr, sh, hum, rad, rates = wing_frames(q2, v, K)
        u = np.zeros(10)
        F = _mv(R, aero_force(u, q2, v, R, Rh, Rr, sh, hum, rad, rates, K))
        out[4] = F[2]
        out[5] = F[0]
    out[6] = np.max(np.abs(lin_residual(y[0:12], K)))
    out[7:11] = reference(R, K)
    out[11] = 0.0


@njit(cache=True)
def run(y0, n_steps, dt, dec, K):
    """Integrate ``n_steps`` RK4 steps, recording every ``dec`` steps.

    Returns (states, channels, n_recorded, status, failed_step).  ``status``
    is 0 on success, 1 on projection failure, 2 on a non-finite state and 3
    on a singular solve or coincident guide points.
    """
    n_rec = n_steps // dec + 1
    states = np.empty((n_rec, 50))
    chans = np.empty((n_rec, N_CHAN))
    y = y0.copy()
    states[0] = y
    channels(y, K, chans[0])
    j = 1
    for k in range(1, n_steps + 1):
        try:
            y, ok = step(y, dt, K)
        except Exception:  # noqa: BLE001 - singular solve or coincident guide points
            return states, chans, j, 3, k
        if not ok:
            return states, chans, j, 1, k
        if not np.all(np.isfinite(y)):
            return states, chans, j, 2, k
        if k % dec == 0:
            states[j] = y
            channels(y, K, chans[j])
            j += 1
    return states, chans, j, 0, n_steps
