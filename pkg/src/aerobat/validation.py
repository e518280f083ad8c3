"""Invariant suites behind ``aerobat validate``.

Each check returns a :class:`CheckResult` with the measured value and the
threshold it was held to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import MassedModel
from .config import fdc_bounds, load_config
from .linkage import N_Q, TH1, Linkage, crank_sweep
from .sim import Simulator, simulate, unpack_body


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
                "passed": bool(self.passed), "detail": self.detail}


def random_linkage_states(params, n, seed=0, n_crank=360, fdc_steps=5):
    """Assembled, velocity-consistent linkage states with random crank angle and FDCs.

    Each state starts on the nominal crank path and is carried to its random
    FDC vector by continuation at fixed crank angle, which keeps the branch.
    """
    rng = np.random.default_rng(seed)
    g = params.linkage
    lk = Linkage(g)
    lo, hi = fdc_bounds(params)
    l0 = np.asarray(g.l0, dtype=float)
    path = crank_sweep(lk, l0, g.assembly_guess, n_crank)
    out = []
    for _ in range(n):
        fdc = rng.uniform(lo, hi)
        k = int(rng.integers(n_crank))
        th = 2 * np.pi * k / n_crank
        q = path[k]
        for s in np.linspace(0.0, 1.0, fdc_steps + 1)[1:]:
            q = lk.assemble(th, l0 + s * (fdc - l0), q)
        qd = np.zeros(N_Q)
        qd[TH1] = rng.normal() * 60.0
        qd[8:] = rng.normal(size=4) * 0.01
        qd = lk.project_velocity(q, qd)
        out.append((q, qd))
    return lk, out


def linkage_jacobian_error(params, n=100, seed=0, h=1e-6):
    """Max abs error of analytic M_A and h_A against central differences.

    ``h_A = (d/dt M_A) qd`` is differenced along the flow ``q + s qd``.
    """
    lk, states = random_linkage_states(params, n, seed)
    err = 0.0
    for q, qd in states:
        J = lk.jacobian(q)
        Jfd = np.empty_like(J)
        for i in range(N_Q):
            e = np.zeros(N_Q)
            e[i] = h
            Jfd[:, i] = (lk.residual(q + e) - lk.residual(q - e)) / (2 * h)
        hfd = (lk.jacobian(q + h * qd) @ qd - lk.jacobian(q - h * qd) @ qd) / (2 * h)
        err = max(err, np.max(np.abs(J - Jfd)), np.max(np.abs(lk.bias(q, qd) - hfd)))
    return err


def conservative_params(base=None, gravity=True):
    """Aerodynamics, damping and the (non-conservative) guide springs switched off."""
    ov = {"aero.enabled": "false", "massed.shoulder_damping": "0", "massed.elbow_damping": "0",
          "massed.guide_damping": "0", "massed.guide_stiffness": "0"}
    if not gravity:
        ov["massed.gravity"] = "0"
    from .config import dump_config
    return load_config(dump_config(base) if base is not None else None, ov)


def kicked_state(sim, seed=0):
    rng = np.random.default_rng(seed)
    y = sim.initial_state()
    y[31:35] += rng.normal(size=4) * 3.0
    y[35:38] = rng.normal(size=3)
    y[38:41] = rng.normal(size=3) * 2.0
    return y


def energy_drift(params=None, t_end=1.0, dt=1e-4, seed=0):
    """Relative drift ``max |E - E0| / max(|E0|, T0)`` of a conservative run."""
    p = conservative_params(params)
    sim = Simulator(p)
    y0 = kicked_state(sim, seed)
    traj = simulate(p, y0=y0, t_end=t_end, dt=dt, decimation=100)
    E = np.array([sim.energy(y) for y in traj.states])
    T0, _ = sim.model.energies(unpack_body(y0))
    return float(np.max(np.abs(E - E[0])) / max(abs(E[0]), T0))


def momentum_drift(params=None, t_end=1.0, dt=1e-4, seed=0):
    """Max change of total linear momentum with every external force removed."""
    p = conservative_params(params, gravity=False)
    sim = Simulator(p)
    y0 = kicked_state(sim, seed)
    traj = simulate(p, y0=y0, t_end=t_end, dt=dt, decimation=100)
    model = MassedModel(p.massed)
    P = np.array([model.linear_momentum(model.kinematics(unpack_body(y))) for y in traj.states])
    return float(np.max(np.abs(P - P[0])))


def so3_error(traj):
    """Worst orthonormality and determinant errors of R_B over a trajectory."""
    R = traj.states[:, 41:50].reshape(-1, 3, 3)
    ortho = np.linalg.norm(np.einsum("nji,njk->nik", R, R) - np.eye(3), axis=(1, 2))
    det = np.abs(np.linalg.det(R) - 1.0)
    return float(ortho.max()), float(det.max())


def run_suite(params=None, quick=False):
    """Run all invariant checks; returns a list of :class:`CheckResult`."""
    p = params or load_config()
    results = []
    err = linkage_jacobian_error(p, n=20 if quick else 100)
    results.append(CheckResult("linkage_jacobian", err, 1e-6, err <= 1e-6))
    drift = energy_drift(p, t_end=0.2 if quick else 1.0)
    results.append(CheckResult("energy_drift", drift, 1e-6, drift <= 1e-6,
                               "aero, damping and guides off; dt = 1e-4 s"))
    mom = momentum_drift(p, t_end=0.2 if quick else 1.0)
    results.append(CheckResult("linear_momentum", mom, 1e-9, mom <= 1e-9))
    traj = simulate(p, "open_loop", t_end=1.0 if quick else 4.0)
    c = float(np.max(traj.channels["constraint"]))
    results.append(CheckResult("constraint_drift", c, 1e-8, c <= 1e-8))
    ortho, det = so3_error(traj)
    results.append(CheckResult("so3_orthonormality", ortho, 1e-9, ortho <= 1e-9,
                               f"{traj.meta['n_steps']} steps"))
    results.append(CheckResult("so3_determinant", det, 1e-9, det <= 1e-9))
    return results
