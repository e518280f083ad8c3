"""Closed-loop simulation of the linkage-driven flapping robot.

The massless linkage (one instance, mirrored onto both wings) and the massed
body/wing subsystem are integrated together with classic RK4.  After every
step the linkage is projected back onto its constraint manifold and the body
rotation is re-orthonormalized.

State vector layout (50 entries)::

    [q1 (12), q1_dot (12), q2 (7), v (10), R_B (9, row-major)]
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import coupling
from .aero import AeroModel
from .body import SIDES, BodyState, MassedModel, pitch_angle, reorthonormalize, rot_y
from .config import fdc_bounds
from .linkage import FDC, N_Q, TH1, Linkage

Q1 = slice(0, 12)
Q1D = slice(12, 24)
Q2 = slice(24, 31)
V2 = slice(31, 41)
RB = slice(41, 50)
N_Y = 50

CSV_COLUMNS = (
    ["t", "x", "y", "z", "vx", "vy", "vz"]
    + [f"R{i}{j}" for i in range(3) for j in range(3)]
    + ["wx", "wy", "wz", "theta_sL", "theta_eL", "theta_sR", "theta_eR", "theta1",
       "l3b", "l3c", "l8b", "l10b", "Pi_x", "Pi_y", "Pi_z", "pitch", "lift", "thrust",
       "constraint"]
)


class SimulationError(RuntimeError):
    """A step failed; carries the simulation time and the partial trajectory."""

    def __init__(self, message, t, trajectory=None):
        super().__init__(f"sim: {message} at t = {t:.6f} s")
        self.t = t
        self.trajectory = trajectory


class TrajectoryTooShortError(ValueError):
    pass


# -- controllers -----------------------------------------------------------

def crank_controller(theta1_dot, omega_ref, kd1):
    """Crank acceleration command ``K_d1 (omega_ref - dth1)``."""
    return kd1 * (omega_ref - theta1_dot)


def fdc_controller(l, l_dot, l_ref, kp, kd):
    """FDC acceleration commands ``K_p2 (l_ref - l) - K_d2 dl``."""
    return np.asarray(kp) * (np.asarray(l_ref) - np.asarray(l)) - np.asarray(kd) * np.asarray(l_dot)


@dataclass
class ControllerState:
    omega_ref: float
    l_ref_zp: np.ndarray
    crank_gain: float
    kp: np.ndarray
    kd: np.ndarray
    pitch_gain: np.ndarray
    pitch_ref: float
    l_min: np.ndarray
    l_max: np.ndarray
    closed_loop: bool = False

    @classmethod
    def from_params(cls, params, closed_loop=False, l_ref=None, pitch_gain=None):
        c = params.control
        lo, hi = fdc_bounds(params)
        return cls(c.omega_ref, np.array(c.l_ref if l_ref is None else l_ref, dtype=float),
                   c.crank_gain, np.array(c.fdc_kp), np.array(c.fdc_kd),
                   np.array(c.pitch_gain if pitch_gain is None else pitch_gain, dtype=float),
                   c.pitch_ref, lo, hi, closed_loop)

    def reference(self, theta_y):
        if not self.closed_loop:
            return self.l_ref_zp
        return pitch_outer_loop(theta_y, self)


def pitch_outer_loop(theta_y, ctrl: ControllerState):
    """Saturated FDC reference ``clip(l_zp + K_c (theta_ref - theta_y))``."""
    raw = ctrl.l_ref_zp + ctrl.pitch_gain * (ctrl.pitch_ref - theta_y)
    return np.clip(raw, ctrl.l_min, ctrl.l_max)


def angular_momentum(state: BodyState, model: MassedModel, sign="negated"):
    return model.angular_momentum(state, sign=sign)


# -- state containers ------------------------------------------------------

@dataclass
class SystemState:
    q1: np.ndarray
    q1d: np.ndarray
    body: BodyState
    l_ref: np.ndarray
    t: float = 0.0

    def to_vector(self):
        return pack(self.q1, self.q1d, self.body)

    @classmethod
    def from_vector(cls, y, l_ref, t=0.0):
        return cls(y[Q1].copy(), y[Q1D].copy(), unpack_body(y), np.array(l_ref), t)


def pack(q1, q1d, body: BodyState):
    y = np.empty(N_Y)
    y[Q1] = q1
    y[Q1D] = q1d
    y[Q2] = body.q
    y[V2] = body.v
    y[RB] = body.R.ravel()
    return y


def unpack_body(y):
    return BodyState(y[Q2], y[V2], y[RB].reshape(3, 3))


@dataclass
class Trajectory:
    """Recorded samples; ``channels`` holds the derived per-sample series."""

    t: np.ndarray
    states: np.ndarray
    channels: dict
    dt: float
    decimation: int
    mode: str
    meta: dict = field(default_factory=dict)

    @property
    def sample_dt(self):
        return self.dt * self.decimation

    def __len__(self):
        return len(self.t)

    def table(self):
        """(n, len(CSV_COLUMNS)) array in CSV column order."""
        c = self.channels
        s = self.states
        return np.column_stack([
            self.t, s[:, 28:31], c["velocity"], s[:, RB], s[:, 38:41], s[:, 24:28],
            s[:, TH1], s[:, 8:12], c["momentum"], c["pitch"], c["lift"], c["thrust"],
            c["constraint"],
        ])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for row in self.table():
                wr.writerow([repr(float(x)) for x in row])


def read_trajectory_csv(path):
    """Load an exported trajectory as a dict of column arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {name: data[:, k] for k, name in enumerate(header)}


# -- the coupled model -----------------------------------------------------

class Simulator:
    """Right-hand side, RK4 step and initial conditions of the full model."""

    def __init__(self, params, mode="open_loop", l_ref=None, pitch_gain=None):
        if mode not in ("open_loop", "pitch_stabilized"):
            raise ValueError(f"unknown mode {mode!r}")
        self.params = params
        self.mode = mode
        self.linkage = Linkage(params.linkage)
        self.model = MassedModel(params.massed)
        self.aero = AeroModel(params.aero, self.model) if params.aero.enabled else None
        self.ctrl = ControllerState.from_params(params, mode == "pitch_stabilized", l_ref, pitch_gain)
        self.rest6 = params.linkage.l4
        self.rest17 = params.linkage.l11
        self.tol = params.sim.projection_tol
        self.momentum_sign = params.control.momentum_sign

    # -- dynamics -----------------------------------------------------------
    def inputs(self, y):
        """Crank and FDC acceleration commands and the active FDC reference."""
        c = self.ctrl
        R = y[RB].reshape(3, 3)
        l_ref = c.reference(pitch_angle(R))
        u_g = crank_controller(y[12 + TH1], c.omega_ref, c.crank_gain)
        u_p = fdc_controller(y[FDC], y[12 + 8:24], l_ref, c.kp, c.kd)
        return np.concatenate([[u_g], u_p]), l_ref

    def massed_forces(self, y, body, wings):
        q1, q1d = y[Q1], y[Q1D]
        th = body.q[:4]
        u = np.zeros(10)
        u[:4] = coupling.torsional_forces(th, body.v[:4], self.params.massed)
        ee = self.linkage.end_effectors(q1, q1d)
        g = coupling.guide_wrench(ee, wings, body.R, self.params.massed, self.rest6, self.rest17)
        u += g.generalized
        aero = None
        if self.aero is not None:
            aero = self.aero.force(body, wings, diagnostics=False)
            u += aero
        return u

    def rhs(self, y):
        u1, _ = self.inputs(y)
        q1, q1d = y[Q1], y[Q1D]
        qdd1 = self.linkage.accel(q1, q1d, u1)
        body = unpack_body(y)
        kin = self.model.kinematics(body)
        force = self.massed_forces(y, body, kin.wings)
        vdot, Rdot = self.model.accel(body, force, kin)
        yd = np.empty(N_Y)
        yd[Q1] = q1d
        yd[Q1D] = qdd1
        yd[24:28] = body.v[:4]
        yd[28:31] = body.v[4:7]
        yd[V2] = vdot
        yd[RB] = Rdot.ravel()
        return yd

    def step(self, y, dt):
        """One RK4 step followed by projection and re-orthonormalization."""
        k1 = self.rhs(y)
        k2 = self.rhs(y + 0.5 * dt * k1)
        k3 = self.rhs(y + 0.5 * dt * k2)
        k4 = self.rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return self.post_step(y)

    def post_step(self, y):
        y = y.copy()
        q1, q1d = self.linkage.project(y[Q1], y[Q1D], tol=self.tol)
        y[Q1] = q1
        y[Q1D] = q1d
        if self.params.sim.reorthonormalize != "none":
            y[RB] = reorthonormalize(y[RB].reshape(3, 3)).ravel()
        return y

    # -- derived channels ---------------------------------------------------
    def channels(self, y):
        body = unpack_body(y)
        kin = self.model.kinematics(body)
        _, l_ref = self.inputs(y)
        out = {
            "velocity": body.v[4:7].copy(),
            "momentum": self.model.angular_momentum(body, kin, self.momentum_sign),
            "pitch": pitch_angle(body.R),
            "constraint": float(np.max(np.abs(self.linkage.residual(y[Q1])))),
            "l_ref": l_ref,
            "lift": 0.0,
            "thrust": 0.0,
        }
        if self.aero is not None:
            a = self.aero.force(body, kin.wings)
            out["lift"], out["thrust"] = a.lift, a.thrust
        return out

    def energy(self, y):
        """Kinetic + gravity + joint spring + guide spring energy."""
        body = unpack_body(y)
        T, U = self.model.energies(body)
        m = self.params.massed
        E = T + U + coupling.torsional_energy(body.q[:4], m)
        if m.guide_stiffness:
            p5, p16 = self.linkage.end_effectors(y[Q1])
            for (side, s), wf in zip(SIDES, self.model.wing_frames(body.q)):
                k = np.array([-1.0, 1.0]) if s < 0 else 1.0
                d6 = np.linalg.norm(k * p5 - wf.elbow[1:]) - self.rest6
                d17 = np.linalg.norm(k * p16 - wf.tip[1:]) - self.rest17
                E += 0.5 * m.guide_stiffness * (d6 ** 2 + d17 ** 2)
        return E

    # -- initial conditions -------------------------------------------------
    def wing_equilibrium(self, q1, q1d):
        """Joint angles and rates that put both guide springs at rest length.

        The massed elbow and tip lag their guides (smaller joint angle side).
        """
        p5, p16, v5, v16 = self.linkage.end_effectors(q1, q1d)
        m = self.model

        def elbow(ths):
            return m.wing_frames(np.array([ths, 0.0, ths, 0.0, 0, 0, 0]))[0].elbow[1:]

        def tip(ths, the):
            return m.wing_frames(np.array([ths, the, ths, the, 0, 0, 0]))[0].tip[1:]

        def solve(f, start):
            a = start
            fa = f(a)
            for _ in range(400):
                b = a - 0.01
                fb = f(b)
                if np.sign(fb) != np.sign(fa):
                    return brentq(f, b, a, xtol=1e-15, rtol=1e-15)
                a, fa = b, fb
            raise RuntimeError("sim: no guide equilibrium found for the initial wing pose")

        # start from the joint angle where the link points at its guide point
        h = m.l_H
        d5 = p5 - m.p7[1:]
        ths0 = np.arctan2(d5[1], d5[0]) - np.arctan2(h[2], h[1]) + m.alpha
        ths = solve(lambda a: np.linalg.norm(p5 - elbow(a)) - self.rest6, ths0)
        e = elbow(ths)
        d16 = p16 - e
        the0 = np.arctan2(d16[1], d16[0]) - ths - m.alpha
        the = solve(lambda a: np.linalg.norm(p16 - tip(ths, a)) - self.rest17, the0)

        # rates from d/dt |p_guide - p_wing| = 0
        t = tip(ths, the)
        e6 = (p5 - e) / np.linalg.norm(p5 - e)
        dp6 = np.array([-(e - m.p7[1:])[1], (e - m.p7[1:])[0]])   # d elbow / d ths
        dths = (e6 @ v5) / (e6 @ dp6)
        e17 = (p16 - t) / np.linalg.norm(p16 - t)
        dtip_dths = np.array([-(t - m.p7[1:])[1], (t - m.p7[1:])[0]])
        dtip_dthe = np.array([-(t - e)[1], (t - e)[0]])
        dthe = (e17 @ v16 - dths * (e17 @ dtip_dths)) / (e17 @ dtip_dthe)
        return ths, the, dths, dthe

    def initial_state(self, pitch=None, x0=None):
        """Body at rest with the given pitch; crank spun up, FDCs at reference."""
        c = self.ctrl
        pitch = c.pitch_ref if pitch is None else pitch
        R = rot_y(pitch)
        l_ref = c.reference(pitch_angle(R))
        g = self.params.linkage
        q1 = self.linkage.assemble(0.0, l_ref, g.assembly_guess)
        q1d = np.zeros(N_Q)
        q1d[TH1] = c.omega_ref
        q1d = self.linkage.project_velocity(q1, q1d)
        ths, the, dths, dthe = self.wing_equilibrium(q1, q1d)
        q2 = np.zeros(7)
        q2[:4] = [ths, the, ths, the]
        if x0 is not None:
            q2[4:7] = x0
        v = np.zeros(10)
        v[:4] = [dths, dthe, dths, dthe]
        return pack(q1, q1d, BodyState(q2, v, R))


# -- driver ----------------------------------------------------------------

def simulate(params, mode="open_loop", t_end=None, y0=None, pitch=None, l_ref=None,
             pitch_gain=None, dt=None, decimation=None, engine="kernel"):
    """Integrate from rest (or ``y0``) and return a :class:`Trajectory`.

    Parameters
    ----------
    params : RobotParams
    mode : {"open_loop", "pitch_stabilized"}
    t_end : float, optional
        Horizon; defaults to ``params.sim.t_end``.
    pitch : float, optional
        Initial body pitch; defaults to the pitch reference.
    l_ref, pitch_gain : array_like, optional
        Overrides of the FDC reference (zero-pitch-error value) and the pitch gains.
    engine : {"kernel", "reference"}
        Compiled kernel or the pure numpy implementation (slow, for checks).

    Raises
    ------
    SimulationError
        When a step fails; ``exc.trajectory`` holds the samples recorded so far.
    """
    sim = Simulator(params, mode, l_ref, pitch_gain)
    dt = params.sim.dt if dt is None else dt
    dec = params.sim.decimation if decimation is None else decimation
    t_end = params.sim.t_end if t_end is None else t_end
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or dec < 1:
        raise ValueError("simulation needs at least one step and decimation >= 1")
    y = sim.initial_state(pitch) if y0 is None else np.asarray(y0, dtype=float).copy()
    meta = {"t_end": t_end, "n_steps": n_steps, "engine": engine}
    if engine == "kernel":
        return _simulate_kernel(sim, y, n_steps, dt, dec, meta)
    if engine != "reference":
        raise ValueError(f"unknown engine {engine!r}")

    times, states, chans = [], [], []

    def rec(k, y):
        times.append(k * dt)
        states.append(y.copy())
        chans.append(sim.channels(y))

    def build():
        ch = {key: np.array([c[key] for c in chans]) for key in chans[0]}
        return Trajectory(np.array(times), np.array(states), ch, dt, dec, sim.mode, meta)

    rec(0, y)
    for k in range(1, n_steps + 1):
        try:
            y = sim.step(y, dt)
            if not np.all(np.isfinite(y)):
                raise FloatingPointError("non-finite state")
        except (RuntimeError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            raise SimulationError(f"{type(exc).__name__}: {exc}", k * dt, build()) from exc
        if k % dec == 0:
            rec(k, y)
    return build()


_KERNEL_FAILURES = {1: "linkage projection did not converge",
                    2: "non-finite state",
                    3: "singular solve or coincident guide points"}


def _simulate_kernel(sim, y, n_steps, dt, dec, meta):
    from . import kernel

    K = kernel.pack(sim)
    states, ch, n, status, k_fail = kernel.run(np.ascontiguousarray(y), n_steps, dt, dec, K)
    states = states[:n]
    ch = ch[:n]
    channels = {
        "velocity": states[:, 35:38].copy(),
        "momentum": ch[:, 0:3].copy(),
        "pitch": ch[:, 3].copy(),
        "lift": ch[:, 4].copy(),
        "thrust": ch[:, 5].copy(),
        "constraint": ch[:, 6].copy(),
        "l_ref": ch[:, 7:11].copy(),
    }
    traj = Trajectory((np.arange(n) * dec) * dt, states, channels, dt, dec, sim.mode, meta)
    if status:
        raise SimulationError(_KERNEL_FAILURES[status], k_fail * dt, traj)
    return traj


# -- analysis --------------------------------------------------------------

def periodic_signal(traj: Trajectory):
    """Channels compared by the limit-cycle metric: body velocity, joint angles, w_B."""
    s = traj.states
    return np.column_stack([traj.channels["velocity"], s[:, 24:28], s[:, 38:41]])


def limit_cycle_metric(traj: Trajectory, flap_period, n_periods=5, relative=False):
    """Smallest stroboscopic state change over one flap period near the end.

    Samples one period apart are compared at the end of each of the final
    ``n_periods`` periods and the smallest difference norm is returned.  With
    ``relative=True`` it is divided by the RMS state norm of the last period.
    """
    z = periodic_signal(traj)
    lag = int(round(flap_period / traj.sample_dt))
    n = len(z) - 1
    if lag < 1 or n < 2 * lag:
        raise TrajectoryTooShortError("limit-cycle metric needs at least two flap periods")
    k_max = min(n_periods, n // lag - 1)
    diffs = [np.linalg.norm(z[n - k * lag] - z[n - (k + 1) * lag]) for k in range(k_max)]
    metric = float(min(diffs))
    if relative:
        scale = float(np.sqrt(np.mean(np.sum(z[n - lag:] ** 2, axis=1))))
        return metric / scale if scale > 0 else np.inf
    return metric


def summary(traj: Trajectory, flap_period, extra=None):
    vel = traj.channels["velocity"]
    out = {
        "mode": traj.mode,
        "t_end": float(traj.t[-1]),
        "samples": len(traj),
        "final_velocity": [float(x) for x in vel[-1]],
        "mean_velocity": [float(x) for x in vel.mean(axis=0)],
        "final_pitch": float(traj.channels["pitch"][-1]),
        "max_constraint": float(np.max(traj.channels["constraint"])),
    }
    try:
        out["limit_cycle_metric"] = limit_cycle_metric(traj, flap_period)
        out["limit_cycle_relative"] = limit_cycle_metric(traj, flap_period, relative=True)
    except TrajectoryTooShortError:
        out["limit_cycle_metric"] = None
        out["limit_cycle_relative"] = None
    if extra:
        out.update(extra)
    return out


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
