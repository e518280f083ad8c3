"""Massed subsystem: body plus left/right humerus and radius.

Generalized coordinates ``q2 = [th_sL, th_eL, th_sR, th_eR, x_B]`` and
generalized velocity ``v = [dth_sL, dth_eL, dth_sR, dth_eR, dx_B, w_B]``
where ``w_B`` is the body angular velocity in the body frame and ``R_B``
maps body to inertial coordinates.

The mass matrix and bias vector are assembled from per-body velocity
Jacobians (projection / Kane form), which is equivalent to the Euler-Lagrange
equations with the SO(3) Euler-Poincare term for the body rotation.
Link inertias are expressed in each link's own frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_V = 10
BODY_NAMES = ("B", "H_L", "H_R", "R_L", "R_R")
EX = np.array([1.0, 0.0, 0.0])
MIRROR = np.diag([1.0, -1.0, 1.0])
SIDES = ((0, 1.0), (1, -1.0))   # (side index, sign): left, right


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pitch_angle(R):
    """Pitch of a Z-Y-X (yaw-pitch-roll) decomposition of ``R``."""
    return float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))


def reorthonormalize(R):
    """Nearest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass
class BodyState:
    q: np.ndarray       # (7,)
    v: np.ndarray       # (10,)
    R: np.ndarray       # (3, 3)

    def copy(self):
        return BodyState(self.q.copy(), self.v.copy(), self.R.copy())


@dataclass
class WingFrames:
    """Body-frame geometry of one wing at the current joint angles."""

    sign: float
    shoulder: np.ndarray    # p7 (body frame)
    R_h: np.ndarray         # humerus link rotation
    R_r: np.ndarray         # radius link rotation
    humerus: np.ndarray     # shoulder -> elbow vector
    radius: np.ndarray      # elbow -> tip vector
    rate_h: float           # humerus angular rate about body x
    rate_r: float

    @property
    def elbow(self):
        return self.shoulder + self.humerus

    @property
    def tip(self):
        return self.elbow + self.radius


@dataclass
class Kinematics:
    x: np.ndarray        # (5, 3) inertial CoM positions
    xd: np.ndarray       # (5, 3) inertial CoM velocities
    r: np.ndarray        # (5, 3) body-frame CoM offsets from x_B
    Jv: np.ndarray       # (5, 3, 10)
    Jw: np.ndarray       # (5, 3, 10) link-frame angular velocity Jacobians
    w: np.ndarray        # (5, 3) link-frame angular velocities
    R_link: np.ndarray   # (5, 3, 3) link-to-body rotations
    a_bias: np.ndarray   # (5, 3) inertial acceleration at zero generalized accel
    al_bias: np.ndarray  # (5, 3) link-frame angular acceleration at zero accel
    wings: tuple


class MassedModel:
    """Kinematics, mass matrix and bias forces of the five massed bodies."""

    def __init__(self, massed):
        m = massed
        self.params = m
        a = m.shoulder_offset_angle
        self.alpha = a
        self.l_H = np.array([0.0, m.humerus_length * np.cos(a),
                             m.riser_length + m.humerus_length * np.sin(a)])
        self.l_R = np.array([0.0, m.radius_length, 0.0])
        self.p7 = np.asarray(m.shoulder_anchor, dtype=float)
        self.masses = np.array([m.body_mass, m.humerus_mass, m.humerus_mass,
                                m.radius_mass, m.radius_mass])
        Ih = np.asarray(m.humerus_inertia)
        Ir = np.asarray(m.radius_inertia)
        self.inertias = np.array([np.asarray(m.body_inertia), Ih, MIRROR @ Ih @ MIRROR,
                                  Ir, MIRROR @ Ir @ MIRROR])
        self.total_mass = float(self.masses.sum())
        self.g = m.gravity

    # -- wing geometry ------------------------------------------------------
    def wing_frames(self, q, v=None):
        out = []
        for side, s in SIDES:
            th_s, th_e = q[2 * side], q[2 * side + 1]
            R_h = rot_x(s * (th_s - self.alpha))
            R_r = rot_x(s * (th_e + th_s + self.alpha))
            M = MIRROR if s < 0 else np.eye(3)
            rate_h = rate_r = 0.0
            if v is not None:
                rate_h = s * v[2 * side]
                rate_r = s * (v[2 * side] + v[2 * side + 1])
            out.append(WingFrames(s, M @ self.p7, R_h, R_r, R_h @ (M @ self.l_H),
                                  R_r @ (M @ self.l_R), rate_h, rate_r))
        return tuple(out)

    # -- per-body kinematics ------------------------------------------------
    def kinematics(self, state: BodyState) -> Kinematics:
        q, v, R = state.q, state.v, state.R
        xB = q[4:7]
        xdB = v[4:7]
        wB = v[7:10]
        wings = self.wing_frames(q, v)

        r = np.zeros((5, 3))
        dr_dth = np.zeros((5, 3, 4))     # body-frame d r / d th
        rdot = np.zeros((5, 3))
        rdd = np.zeros((5, 3))           # body-frame second derivative at zero th accel
        R_link = np.zeros((5, 3, 3))
        R_link[0] = np.eye(3)
        Jw = np.zeros((5, 3, N_V))
        Jw[0, :, 7:10] = np.eye(3)
        w = np.zeros((5, 3))
        w[0] = wB
        al = np.zeros((5, 3))
        for (side, s), wf in zip(SIDES, wings):
            ih, ir = 1 + side, 3 + side
            cs, ce = 2 * side, 2 * side + 1
            half_h = 0.5 * wf.humerus
            half_r = 0.5 * wf.radius
            r[ih] = wf.shoulder + half_h
            r[ir] = wf.shoulder + wf.humerus + half_r
            dr_dth[ih, :, cs] = s * np.cross(EX, half_h)
            dr_dth[ir, :, cs] = s * np.cross(EX, wf.humerus + half_r)
            dr_dth[ir, :, ce] = s * np.cross(EX, half_r)
            rdot[ih] = wf.rate_h * np.cross(EX, half_h)
            rdot[ir] = wf.rate_h * np.cross(EX, wf.humerus) + wf.rate_r * np.cross(EX, half_r)
            rdd[ih] = wf.rate_h ** 2 * np.cross(EX, np.cross(EX, half_h))
            rdd[ir] = (wf.rate_h ** 2 * np.cross(EX, np.cross(EX, wf.humerus))
                       + wf.rate_r ** 2 * np.cross(EX, np.cross(EX, half_r)))
            for i, Rl, cols, rate in ((ih, wf.R_h, (cs,), wf.rate_h),
                                      (ir, wf.R_r, (cs, ce), wf.rate_r)):
                R_link[i] = Rl
                Jw[i, :, 7:10] = Rl.T
                for c in cols:
                    Jw[i, 0, c] = s
                wl = Rl.T @ wB
                w[i] = wl + rate * EX
                al[i] = np.cross(wl, rate * EX)

        Jv = np.zeros((5, 3, N_V))
        Jv[:, :, 0:4] = np.einsum("ij,njk->nik", R, dr_dth)
        Jv[:, :, 4:7] = np.eye(3)
        for i in range(5):
            Jv[i, :, 7:10] = -R @ skew(r[i])
        wxr = np.cross(wB, r)
        x = xB + r @ R.T
        xd = xdB + (wxr + rdot) @ R.T
        a_body = np.cross(wB, wxr) + 2.0 * np.cross(wB, rdot) + rdd
        a_bias = a_body @ R.T
        return Kinematics(x, xd, r, Jv, Jw, w, R_link, a_bias, al, wings)

    # -- dynamics terms -----------------------------------------------------
    def mass_matrix(self, state, kin=None):
        kin = kin or self.kinematics(state)
        M = np.einsum("n,nik,nil->kl", self.masses, kin.Jv, kin.Jv)
        M += np.einsum("nik,nij,njl->kl", kin.Jw, self.inertias, kin.Jw)
        return 0.5 * (M + M.T)

    def bias(self, state, kin=None, gravity=True):
        """Coriolis, centrifugal, gyroscopic and gravity terms ``h2``."""
        kin = kin or self.kinematics(state)
        acc = kin.a_bias.copy()
        if gravity:
            acc[:, 2] += self.g
        h = np.einsum("nik,n,ni->k", kin.Jv, self.masses, acc)
        Iw = np.einsum("nij,nj->ni", self.inertias, kin.w)
        tau = np.einsum("nij,nj->ni", self.inertias, kin.al_bias) + np.cross(kin.w, Iw)
        h += np.einsum("nik,ni->k", kin.Jw, tau)
        return h

    def energies(self, state, kin=None):
        """Kinetic and gravitational potential energy (T, U)."""
        kin = kin or self.kinematics(state)
        T = 0.5 * np.sum(self.masses * np.sum(kin.xd ** 2, axis=1))
        T += 0.5 * np.einsum("ni,nij,nj->", kin.w, self.inertias, kin.w)
        U = self.g * np.sum(self.masses * kin.x[:, 2])
        return float(T), float(U)

    def accel(self, state, force, kin=None, gravity=True):
        """Solve ``M2 vdot + h2 = force``; returns (vdot, Rdot)."""
        kin = kin or self.kinematics(state)
        M = self.mass_matrix(state, kin)
        h = self.bias(state, kin, gravity)
        vdot = np.linalg.solve(M, np.asarray(force, dtype=float) - h)
        return vdot, state.R @ skew(state.v[7:10])

    # -- derived quantities -------------------------------------------------
    def com(self, kin):
        return self.masses @ kin.x / self.total_mass

    def linear_momentum(self, kin):
        return self.masses @ kin.xd

    def angular_momentum(self, state, kin=None, sign="negated"):
        """``sum_i R_B I_i w_i -/+ m_i (x_i - x_com) x xd_i`` (inertial frame).

        ``sign="negated"`` uses a minus on the orbital term, ``"conventional"``
        the usual plus.
        """
        kin = kin or self.kinematics(state)
        Iw = np.einsum("nij,nj->ni", self.inertias, kin.w)
        spin = np.einsum("nij,nj->ni", kin.R_link, Iw) @ state.R.T
        orbital = self.masses[:, None] * np.cross(kin.x - self.com(kin), kin.xd)
        k = -1.0 if sign == "negated" else 1.0
        return np.sum(spin + k * orbital, axis=0)

    def point_jacobian(self, state, side, point_body, on_radius):
        """Inertial velocity Jacobian (3 x 10) of a body-frame point on a wing link."""
        wf = self.wing_frames(state.q)[side]
        s = wf.sign
        R = state.R
        J = np.zeros((3, N_V))
        cs, ce = 2 * side, 2 * side + 1
        J[:, cs] = R @ (s * np.cross(EX, point_body - wf.shoulder))
        if on_radius:
            J[:, ce] = R @ (s * np.cross(EX, point_body - wf.elbow))
        J[:, 4:7] = np.eye(3)
        J[:, 7:10] = -R @ skew(point_body)
        return J

    def wing_point_velocity(self, state, side, point_body, on_radius):
        """Body-frame velocity of a wing point relative to the body frame."""
        wf = self.wing_frames(state.q, state.v)[side]
        v = wf.rate_h * np.cross(EX, point_body - wf.shoulder) if not on_radius else (
            wf.rate_h * np.cross(EX, wf.humerus)
            + wf.rate_r * np.cross(EX, point_body - wf.elbow))
        return v
