"""Massless kinetic-sculpture linkage.

The wing linkage is a planar network in the body y-z plane made of three
closed four-bar style loops plus a crank phase constraint.  Generalized
coordinates are

    q1 = [th1, th2, th4, th9, th10, th12, th13, th14, l3b, l3c, l8b, l10b]

where ``th_j`` is the absolute angle (from the body y axis) of the link that
starts at joint ``j`` and the last four entries are the feedback-driven
component (FDC) lengths.

Topology used here (stationary joints 1, 4, 9, 12):

* loop 3 (joint 3): crank L1 about p1, coupler L2, rocker L3 about p4.
  ``p3A = p1 + R(th1)[l1] + R(th2)[l2]``, ``p3B = p4 + R(th4)[-(l3a + l3b)]``.
* loop 11 (joint 11): crank L9 about p9, coupler L10 of length l10a + l10b,
  rocker L8 about p12 of length l8a + l8b.
* loop 15 (joint 15): arm of L3 of length l3c (at angle offset ``arm3_angle``
  to L3), coupler L13, output rocker L14 about p14.  The pivot p14 rides on
  an arm of L8, ``p14 = p12 + l8c u(th12 + arm8_angle)``, so loop 11 also
  moves the humerus guide.

The humerus guide L5 is rigid with L14, so ``p5 = p14 + R(th14)[l5a, l5b]``.
The radius guide L12 is hinged at p5 and kept parallel to L8,
``p16 = p5 + R(th12 + l12_angle)[l12]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_Q = 12
N_C = 7
TH1, TH2, TH4, TH9, TH10, TH12, TH13, TH14 = range(8)
FDC = slice(8, 12)
FREE = np.array([TH2, TH4, TH9, TH10, TH12, TH13, TH14])
DRIVEN = np.array([TH1, 8, 9, 10, 11])

# rows of M_B: crank angle and the four FDC lengths
M_B = np.zeros((5, N_Q))
M_B[0, TH1] = 1.0
M_B[1:, 8:] = np.eye(4)


class AssemblyError(RuntimeError):
    """Newton assembly failed to reach the constraint manifold."""


class SingularLinkageError(AssemblyError):
    """Constraint Jacobian is singular (kinematic singularity)."""


@dataclass(frozen=True)
class LoopTerms:
    """Loop closures written as ``const + sum_t sign_t * L_t * u(q[a_t] + g_t)``."""

    row: np.ndarray        # loop index of each term (0, 1, 2)
    sign: np.ndarray
    angle: np.ndarray      # q1 index of the link angle
    offset: np.ndarray     # constant angle offset (rad)
    length: np.ndarray     # constant part of the link length (m)
    fdc: np.ndarray        # q1 index of an added FDC length, or -1
    const: np.ndarray      # (3, 2) anchor differences


@dataclass(frozen=True)
class LinkagePose:
    """Planar body-frame joint positions (and velocities when available)."""

    points: dict
    velocities: dict = field(default_factory=dict)

    @property
    def shoulder_angle(self) -> float:
        d = self.points["p5"] - self.points["p14"]
        return float(np.arctan2(d[1], d[0]))

    @property
    def elbow_angle(self) -> float:
        d = self.points["p16"] - self.points["p5"]
        return float(np.arctan2(d[1], d[0])) - self.shoulder_angle


def _u(a):
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def _uperp(a):
    return np.stack([-np.sin(a), np.cos(a)], axis=-1)


def loop_terms(geom) -> LoopTerms:
    """Build the loop-closure term table for a ``LinkageGeometry``."""
    g = geom
    row = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    sign = np.array([1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
    angle = np.array([TH1, TH2, TH4, TH9, TH10, TH12, TH4, TH13, TH14, TH12])
    offset = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, g.arm3_angle, 0.0, 0.0, g.arm8_angle])
    length = np.array([g.l1, g.l2, g.l3a, g.l9, g.l10a, g.l8a, 0.0, g.l13, g.l14, g.l8c])
    fdc = np.array([-1, -1, 8, -1, 11, 10, 9, -1, -1, -1])
    const = np.array([
        np.asarray(g.p1) - np.asarray(g.p4),
        np.asarray(g.p9) - np.asarray(g.p12),
        np.asarray(g.p4) - np.asarray(g.p12),
    ])
    return LoopTerms(row, sign, angle, offset, length, fdc, const)


class Linkage:
    """Kinematics and acceleration-level dynamics of one wing linkage.

    The left and right wings share crank and FDC commands, so a single
    instance is simulated and mirrored onto both sides.
    """

    def __init__(self, geom):
        self.geom = geom
        self.terms = loop_terms(geom)
        t = self.terms
        self._rx = 2 * t.row
        self._ry = 2 * t.row + 1
        self._has_fdc = t.fdc >= 0
        self._fdc_idx = np.where(self._has_fdc, t.fdc, 0)
        self.v5 = np.array([geom.l5a, geom.l5b])
        self.p12 = np.asarray(geom.p12, dtype=float)

    # -- term helpers -------------------------------------------------------
    def _lengths(self, q):
        t = self.terms
        return t.length + np.where(self._has_fdc, q[self._fdc_idx], 0.0)

    def _length_rates(self, qd):
        return np.where(self._has_fdc, qd[self._fdc_idx], 0.0)

    # -- constraints --------------------------------------------------------
    def residual(self, q) -> np.ndarray:
        """Loop closure errors (3 x 2D) followed by the crank phase error."""
        q = np.asarray(q, dtype=float)
        t = self.terms
        ang = q[t.angle] + t.offset
        contrib = (t.sign * self._lengths(q))[:, None] * _u(ang)
        c = t.const.copy()
        np.add.at(c, t.row, contrib)
        out = np.empty(N_C)
        out[:6] = c.ravel()
        out[6] = q[TH1] - q[TH9] - self.geom.delta_phi
        return out

    def jacobian(self, q) -> np.ndarray:
        """Analytic ``dC/dq1`` (7 x 12)."""
        q = np.asarray(q, dtype=float)
        t = self.terms
        ang = q[t.angle] + t.offset
        L = self._lengths(q)
        up = (t.sign * L)[:, None] * _uperp(ang)
        J = np.zeros((N_C, N_Q))
        np.add.at(J, (self._rx, t.angle), up[:, 0])
        np.add.at(J, (self._ry, t.angle), up[:, 1])
        u = t.sign[:, None] * _u(ang)
        m = self._has_fdc
        np.add.at(J, (self._rx[m], t.fdc[m]), u[m, 0])
        np.add.at(J, (self._ry[m], t.fdc[m]), u[m, 1])
        J[6, TH1] = 1.0
        J[6, TH9] = -1.0
        return J

    def bias(self, q, qd) -> np.ndarray:
        """Velocity-product term ``h_A = (d/dt dC/dq1) qd`` (7,)."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        t = self.terms
        ang = q[t.angle] + t.offset
        L = self._lengths(q)
        w = qd[t.angle]
        Ld = self._length_rates(qd)
        contrib = t.sign[:, None] * (
            (-L * w * w)[:, None] * _u(ang) + (2.0 * w * Ld)[:, None] * _uperp(ang)
        )
        h = np.zeros((3, 2))
        np.add.at(h, t.row, contrib)
        out = np.zeros(N_C)
        out[:6] = h.ravel()
        return out

    def jacobian_and_bias(self, q, qd):
        return self.jacobian(q), self.bias(q, qd)

    # -- dynamics -----------------------------------------------------------
    def accel(self, q, qd, u1) -> np.ndarray:
        """Solve ``M1 qdd + h1 = B1 u1`` for the linkage accelerations."""
        MA, hA = self.jacobian(q), self.bias(q, qd)
        M1 = np.vstack([MA, M_B])
        rhs = np.concatenate([-hA, np.asarray(u1, dtype=float)])
        try:
            qdd = np.linalg.solve(M1, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularLinkageError("linkage mass matrix M1 is singular") from exc
        if not np.all(np.isfinite(qdd)):
            raise SingularLinkageError("linkage accelerations are not finite")
        return qdd

    # -- assembly and projection --------------------------------------------
    def assemble(self, theta1, fdc, guess, tol=1e-10, max_iter=50) -> np.ndarray:
        """Newton solve of C(q1) = 0 for the free angles.

        ``theta1`` and the FDC lengths are held fixed.  ``guess`` is a full
        q1 vector (or just the 7 free angles) and selects the assembly branch.
        """
        q = np.empty(N_Q)
        guess = np.asarray(guess, dtype=float)
        if guess.size == N_Q:
            q[:] = guess
        else:
            q[FREE] = guess
        q[TH1] = theta1
        q[FDC] = fdc
        return self._newton(q, tol, max_iter)

    def _newton(self, q, tol, max_iter):
        q = q.copy()
        for _ in range(max_iter + 1):
            c = self.residual(q)
            if np.max(np.abs(c)) <= tol:
                return q
            Jf = self.jacobian(q)[:, FREE]
            try:
                dq = np.linalg.solve(Jf, -c)
            except np.linalg.LinAlgError as exc:
                raise SingularLinkageError("singular constraint Jacobian during assembly") from exc
            if np.linalg.cond(Jf) > 1e12:
                raise SingularLinkageError("constraint Jacobian is near singular")
            # damp large steps so the solve stays on the guessed branch
            step = np.max(np.abs(dq))
            if step > 0.5:
                dq *= 0.5 / step
            q[FREE] += dq
            if not np.all(np.isfinite(q)):
                break
        raise AssemblyError(
            f"linkage assembly did not converge (|C| = {np.max(np.abs(self.residual(q))):.3e})"
        )

    def project(self, q, qd, tol=1e-12, max_iter=20):
        """Return (q, qd) projected onto C = 0 and M_A qd = 0.

        Only the free angles are corrected; the crank angle and the FDC
        lengths (and their rates) are never altered.
        """
        q = self._newton(np.asarray(q, dtype=float), tol, max_iter)
        qd = self.project_velocity(q, qd)
        return q, qd

    def project_velocity(self, q, qd):
        qd = np.array(qd, dtype=float)
        J = self.jacobian(q)
        rhs = -J[:, DRIVEN] @ qd[DRIVEN]
        qd[FREE] = np.linalg.solve(J[:, FREE], rhs)
        return qd

    # -- forward kinematics -------------------------------------------------
    def pivot14(self, q):
        """Moving pivot p14 of the output rocker (carried by L8)."""
        g = self.geom
        return self.p12 + g.l8c * _u(q[TH12] + g.arm8_angle)

    def end_effectors(self, q, qd=None):
        """Positions (and velocities) of the humerus guide p5 and radius guide p16."""
        g = self.geom
        r5 = _rot(q[TH14]) @ self.v5
        a8 = q[TH12] + g.arm8_angle
        p5 = self.p12 + g.l8c * _u(a8) + r5
        a12 = q[TH12] + g.l12_angle
        e12 = _u(a12)
        p16 = p5 + g.l12 * e12
        if qd is None:
            return p5, p16
        v5 = qd[TH14] * np.array([-r5[1], r5[0]]) + qd[TH12] * g.l8c * _uperp(a8)
        v16 = v5 + qd[TH12] * g.l12 * _uperp(a12)
        return p5, p16, v5, v16

    def end_effector_jacobians(self, q):
        """d(p5)/dq1 and d(p16)/dq1 (2 x 12 each)."""
        g = self.geom
        r5 = _rot(q[TH14]) @ self.v5
        J5 = np.zeros((2, N_Q))
        J5[:, TH14] = [-r5[1], r5[0]]
        J5[:, TH12] = g.l8c * _uperp(q[TH12] + g.arm8_angle)
        J16 = J5.copy()
        J16[:, TH12] += g.l12 * _uperp(q[TH12] + g.l12_angle)
        return J5, J16

    def forward_kinematics(self, q, qd=None) -> LinkagePose:
        """All joint positions, with dual-path joints reported from both sides."""
        g = self.geom
        q = np.asarray(q, dtype=float)
        p1, p4, p9, p12 = (np.asarray(p, dtype=float) for p in (g.p1, g.p4, g.p9, g.p12))
        p14 = self.pivot14(q)
        L3 = g.l3a + q[8]
        L10 = g.l10a + q[11]
        L8 = g.l8a + q[10]
        pts = {
            "p1": p1, "p4": p4, "p9": p9, "p12": p12, "p14": p14,
            "p2": p1 + g.l1 * _u(q[TH1]),
            "p10": p9 + g.l9 * _u(q[TH9]),
            "p13": p4 + q[9] * _u(q[TH4] + g.arm3_angle),
        }
        pts["p3A"] = pts["p2"] + g.l2 * _u(q[TH2])
        pts["p3B"] = p4 - L3 * _u(q[TH4])
        pts["p11A"] = pts["p10"] + L10 * _u(q[TH10])
        pts["p11B"] = p12 + L8 * _u(q[TH12])
        pts["p15A"] = pts["p13"] + g.l13 * _u(q[TH13])
        pts["p15B"] = p14 + g.l14 * _u(q[TH14])
        vel = {}
        if qd is None:
            p5, p16 = self.end_effectors(q)
        else:
            p5, p16, v5, v16 = self.end_effectors(q, np.asarray(qd, dtype=float))
            vel = {"p5": v5, "p16": v16}
        pts["p5"] = p5
        pts["p16"] = p16
        return LinkagePose(pts, vel)


def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def crank_sweep(linkage: Linkage, fdc, guess, n=360, max_step=np.radians(2.0)):
    """Assemble over one crank revolution by continuation.

    Returns an (n, 12) array of assembled q1 at ``th1 = 2 pi k / n``; raises
    ``AssemblyError`` if any crank angle fails or the path does not close back
    on itself.  Continuation sub-steps never exceed ``max_step``.
    """
    thetas = np.linspace(0.0, 2 * np.pi, n + 1)
    out = np.empty((n, N_Q))
    q = linkage.assemble(0.0, fdc, guess)
    out[0] = q
    for k in range(1, n + 1):
        sub = max(1, int(np.ceil((thetas[k] - thetas[k - 1]) / max_step)))
        for th in np.linspace(thetas[k - 1], thetas[k], sub + 1)[1:]:
            q = linkage.assemble(th, fdc, q)
        if k < n:
            out[k] = q
    wrapped = q[FREE] - out[0, FREE]
    if np.max(np.abs(wrapped - 2 * np.pi * np.round(wrapped / (2 * np.pi)))) > 1e-6:
        raise AssemblyError("linkage branch does not close over a crank revolution")
    return out


@dataclass
class SweepResult:
    """End-effector path family of a sensitivity sweep.

    ``p5`` and ``p16`` are (n_grid, n_crank, 2) arrays, NaN where a grid
    point failed to assemble; ``errors`` maps grid index to the failure.
    """

    fdc: np.ndarray
    theta1: np.ndarray
    p5: np.ndarray
    p16: np.ndarray
    shoulder: np.ndarray
    elbow: np.ndarray
    errors: dict

    def deviation(self, reference=0):
        """Max pointwise distance of each path pair from grid point ``reference``."""
        d5 = np.linalg.norm(self.p5 - self.p5[reference], axis=2).max(axis=1)
        d16 = np.linalg.norm(self.p16 - self.p16[reference], axis=2).max(axis=1)
        return d5, d16

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["fdc1", "fdc2", "fdc3", "fdc4", "theta1", "p5_y", "p5_z", "p16_y", "p16_z"])
            for g in range(len(self.fdc)):
                for k, th in enumerate(self.theta1):
                    wr.writerow([repr(float(v)) for v in (*self.fdc[g], th, *self.p5[g, k],
                                                          *self.p16[g, k])])


def sensitivity_sweep(geom, fdc_grid, n_crank_samples=360):
    """Trace the guide end-effector paths over a crank revolution per FDC vector.

    Failed grid points are recorded in ``errors`` and left as NaN.
    """
    lk = Linkage(geom)
    grid = np.atleast_2d(np.asarray(fdc_grid, dtype=float))
    n = n_crank_samples
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    p5 = np.full((len(grid), n, 2), np.nan)
    p16 = np.full((len(grid), n, 2), np.nan)
    sh = np.full((len(grid), n), np.nan)
    el = np.full((len(grid), n), np.nan)
    errors = {}
    for g, fdc in enumerate(grid):
        try:
            qs = crank_sweep(lk, fdc, geom.assembly_guess, n)
        except AssemblyError as exc:
            errors[g] = str(exc)
            continue
        for k, q in enumerate(qs):
            a, b = lk.end_effectors(q)
            p5[g, k], p16[g, k] = a, b
            d5 = a - lk.pivot14(q)
            d16 = b - a
            sh[g, k] = np.arctan2(d5[1], d5[0])
            el[g, k] = np.arctan2(d16[1], d16[0]) - sh[g, k]
    return SweepResult(grid, theta, p5, p16, sh, el, errors)


def one_at_a_time_grid(l0, scales=(0.8, 0.9, 1.1, 1.2)):
    """Nominal FDC vector followed by each FDC scaled individually."""
    l0 = np.asarray(l0, dtype=float)
    rows = [l0.copy()]
    for i in range(len(l0)):
        for s in scales:
            r = l0.copy()
            r[i] *= s
            rows.append(r)
    return np.array(rows)
