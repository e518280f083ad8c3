"""Quasi-steady strip-theory aerodynamics of the membrane wing.

Each wing is cut into spanwise strips over the humerus and radius (leading
edge along the chord) plus chordwise strips over the radius (the wingtip acts
as leading edge).  Every strip carries a fixed link-frame axis pair
``(e_L, e_D)`` and an application point at its aerodynamic center.  Forces
follow the fruit-fly lift/drag curves and are mapped to generalized forces of
the massed subsystem.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .body import EX, MIRROR, N_V, SIDES

# owner ids
H_L, H_R, R_L, R_R = 0, 1, 2, 3
OWNER_NAMES = ("H_L", "H_R", "R_L", "R_R")
SPANWISE, CHORDWISE = 0, 1


def lift_drag_coeffs(beta_deg):
    """Lift and drag coefficients for angle of attack ``beta_deg`` (degrees)."""
    b = np.asarray(beta_deg, dtype=float)
    cl = 0.225 + 1.58 * np.sin(np.deg2rad(2.13 * b - 7.2))
    cd = 1.92 - 1.55 * np.cos(np.deg2rad(2.04 * b - 9.82))
    return cl, cd


def angle_of_attack(v_w, R_B, e_L, e_D):
    """Angle of attack (degrees) and in-plane squared relative speed.

    Parameters
    ----------
    v_w : (3,) array
        Inertial relative velocity of the strip, ``v_a - v_inf``.
    R_B : (3, 3) array
        Body-to-inertial rotation.
    e_L, e_D : (3,) arrays
        Body-frame strip normal and chord axis.
    """
    a = float(v_w @ (R_B @ e_L))
    b = float(v_w @ (R_B @ e_D))
    if abs(a) < 1e-12 and abs(b) < 1e-12:
        return 0.0, 0.0
    return float(np.degrees(-np.arctan2(a, b))), a * a + b * b


@dataclass(frozen=True)
class SegmentTable:
    """Link-frame description of the strips of the left wing.

    The right wing uses the mirror image.  Offsets ``w`` are measured from
    the link origin (shoulder for the humerus, elbow for the radius).
    """

    on_radius: np.ndarray   # (n,) bool
    kind: np.ndarray        # (n,) SPANWISE / CHORDWISE
    xhat: np.ndarray        # (n,) parametric coordinate
    w: np.ndarray           # (n, 3)
    e_L: np.ndarray         # (n, 3)
    e_D: np.ndarray         # (n, 3)
    dS: np.ndarray          # (n,)


def build_segments(aero, humerus_dir):
    """Midpoint strips for one (left) wing.

    ``humerus_dir`` is the unit humerus direction in its link frame.
    """
    c = aero.chord
    n_r, n_c = aero.n_span, aero.n_chord
    e_r = np.array([0.0, 1.0, 0.0])
    mids_r = (np.arange(n_r) + 0.5) / n_r
    mids_c = (np.arange(n_c) + 0.5) / n_c
    rows = []
    for on_r, span, e_span, ac in ((False, aero.humerus_span, humerus_dir, aero.ac_offset_humerus),
                                   (True, aero.radius_span, e_r, aero.ac_offset_radius)):
        e_L = np.cross(EX, e_span)
        for x in mids_r:
            rows.append((on_r, SPANWISE, x, x * span * e_span + ac, e_L, EX, c * span / n_r))
    # chordwise strips on the radius: leading edge is the tip, center a quarter span inboard
    s_R = aero.radius_span
    e_L = np.cross(EX, e_r)
    for x in mids_c:
        rows.append((True, CHORDWISE, x, 0.75 * s_R * e_r - x * c * EX, e_L, e_r, c * s_R / n_c))
    cols = list(zip(*rows))
    return SegmentTable(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
                        np.array(cols[3]), np.array(cols[4]), np.array(cols[5]),
                        np.array(cols[6], dtype=float))


@dataclass
class AeroForceResult:
    """Generalized aerodynamic force and per-segment diagnostics.

    Per-segment arrays are ordered left wing then right wing, each following
    the segment table order.  ``df_L`` and ``df_D`` are inertial-frame force
    components along the strip normal and chord axis.
    """

    u: np.ndarray
    owner: np.ndarray
    kind: np.ndarray
    xhat: np.ndarray
    points: np.ndarray      # body-frame application points
    beta: np.ndarray
    v_r: np.ndarray
    df_L: np.ndarray
    df_D: np.ndarray
    lift: float
    thrust: float

    @property
    def forces(self):
        return self.df_L + self.df_D

    def to_csv(self, path):
        header = ["segment", "owner", "kind", "xhat", "px", "py", "pz", "beta_deg", "v_r",
                  "dfL_x", "dfL_y", "dfL_z", "dfD_x", "dfD_y", "dfD_z"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for k in range(len(self.beta)):
                wr.writerow([k, OWNER_NAMES[self.owner[k]],
                             "span" if self.kind[k] == SPANWISE else "chord"]
                            + [repr(float(x)) for x in (self.xhat[k], *self.points[k], self.beta[k],
                                                         self.v_r[k], *self.df_L[k], *self.df_D[k])])


class AeroModel:
    """Strip-theory force model bound to a massed-wing geometry."""

    def __init__(self, aero, body_model):
        self.params = aero
        self.model = body_model
        self.table = build_segments(aero, body_model.l_H / np.linalg.norm(body_model.l_H))
        t = self.table
        n = len(t.dS)
        self.n_wing = n
        self.wind = np.asarray(aero.wind, dtype=float)
        # per-wing mirrored tables
        self._w, self._eL, self._eD = [], [], []
        for _, s in SIDES:
            M = MIRROR if s < 0 else np.eye(3)
            self._w.append(t.w @ M.T)
            self._eL.append(t.e_L @ M.T)
            self._eD.append(t.e_D @ M.T)
        owner = []
        for side, _ in SIDES:
            owner.append(np.where(t.on_radius, R_L + side, H_L + side))
        self.owner = np.concatenate(owner)
        self.kind = np.concatenate([t.kind, t.kind])
        self.xhat = np.concatenate([t.xhat, t.xhat])
        self.dS = np.concatenate([t.dS, t.dS])

    def wing_geometry(self, wf, side):
        """Body-frame points, velocities relative to the body, and axes of one wing."""
        t = self.table
        rad = t.on_radius[:, None]
        w = self._w[side]
        wh = w @ wf.R_h.T
        wr = w @ wf.R_r.T
        pts = np.where(rad, wf.elbow + wr, wf.shoulder + wh)
        vel = np.where(rad, wf.rate_h * np.cross(EX, wf.humerus) + wf.rate_r * np.cross(EX, wr),
                       wf.rate_h * np.cross(EX, wh))
        eL = np.where(rad, self._eL[side] @ wf.R_r.T, self._eL[side] @ wf.R_h.T)
        eD = np.where(rad, self._eD[side] @ wf.R_r.T, self._eD[side] @ wf.R_h.T)
        return pts, vel, eL, eD

    def application_points(self, state, wings=None):
        """Body-frame points, inertial points and inertial velocities of all strips."""
        wings = wings or self.model.wing_frames(state.q, state.v)
        R = state.R
        pts, vel = [], []
        for (side, _), wf in zip(SIDES, wings):
            p, v, _, _ = self.wing_geometry(wf, side)
            pts.append(p)
            vel.append(v)
        pb = np.concatenate(pts)
        vb = np.concatenate(vel)
        wB = state.v[7:10]
        p_in = state.q[4:7] + pb @ R.T
        v_in = state.v[4:7] + (np.cross(wB, pb) + vb) @ R.T
        return pb, p_in, v_in

    def point_jacobians(self, state):
        """Inertial velocity Jacobians (n, 3, 10) of every strip point."""
        pb, _, _ = self.application_points(state)
        n = self.n_wing
        J = np.zeros((2 * n, 3, N_V))
        for k in range(2 * n):
            side = 0 if k < n else 1
            J[k] = self.model.point_jacobian(state, side, pb[k], bool(self.table.on_radius[k % n]))
        return J

    def force(self, state, wings=None, diagnostics=True, wind=None):
        """Generalized aerodynamic force on the massed subsystem."""
        p = self.params
        R = state.R
        wB = state.v[7:10]
        wind = self.wind if wind is None else wind
        wind_b = R.T @ (state.v[4:7] - wind)
        wings = wings or self.model.wing_frames(state.q, state.v)
        u = np.zeros(N_V)
        total_b = np.zeros(3)
        rows = []
        for (side, s), wf in zip(SIDES, wings):
            pts, vel, eL, eD = self.wing_geometry(wf, side)
            vw = wind_b + np.cross(wB, pts) + vel        # body-frame v_a - v_inf
            a = np.einsum("ij,ij->i", vw, eL)
            b = np.einsum("ij,ij->i", vw, eD)
            vr = np.hypot(a, b)
            live = vr >= 1e-12
            beta = np.where(live, -np.degrees(np.arctan2(a, b)), 0.0)
            cl, cd = lift_drag_coeffs(beta)
            q = np.where(live, 0.5 * p.air_density * vr * self.table.dS, 0.0)
            fL = (q * (cl * b - cd * a))[:, None] * eL
            fD = (q * (-cl * a - cd * b))[:, None] * eD
            f = fL + fD
            ftot = f.sum(axis=0)
            total_b += ftot
            rad = self.table.on_radius
            u[2 * side] = s * np.cross(pts - wf.shoulder, f).sum(axis=0)[0]
            u[2 * side + 1] = s * np.cross(pts[rad] - wf.elbow, f[rad]).sum(axis=0)[0]
            u[7:10] += np.cross(pts, f).sum(axis=0)
            if diagnostics:
                rows.append((pts, beta, np.where(live, vr, 0.0), fL @ R.T, fD @ R.T))
        F = R @ total_b
        u[4:7] = F
        if not diagnostics:
            return u
        cat = [np.concatenate(c) for c in zip(*rows)]
        return AeroForceResult(u, self.owner, self.kind, self.xhat, cat[0], cat[1], cat[2],
                               cat[3], cat[4], float(F[2]), float(F[0]))


def generalized_aero_force(state, params, model=None):
    """Convenience wrapper building an :class:`AeroModel` from ``params``."""
    from .body import MassedModel
    model = model or MassedModel(params.massed)
    return AeroModel(params.aero, model).force(state)
