"""Derivative-free gait and pitch-gain optimization.

Costs are Riemann sums over simulated trajectories.  The search is a
Nelder-Mead simplex run in box-normalized coordinates with every trial point
projected back onto the box.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import config_hash, fdc_bounds
from .sim import SimulationError, simulate

GAIT_NAMES = ("l3b_ref", "l3c_ref", "l8b_ref", "l10b_ref", "pitch0")
PITCH_NAMES = ("Kc_l3b", "Kc_l3c", "Kc_l8b", "Kc_l10b")
PENALTY_FACTOR = 1e6
PENALTY_FALLBACK = 1e300    # used while no feasible cost is known


class IncompleteTrajectoryError(ValueError):
    pass


class OptimizationFailedError(RuntimeError):
    """Every candidate evaluation failed."""


@dataclass(frozen=True)
class CostWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 10.0

    def __post_init__(self):
        w = (self.w1, self.w2, self.w3)
        if min(w) < 0 or not any(w):
            raise ValueError("cost weights must be nonnegative and not all zero")

    @classmethod
    def from_params(cls, params):
        o = params.optim
        return cls(o.w1, o.w2, o.w3)


def _check_complete(traj):
    n = traj.meta.get("n_steps")
    if n is not None and len(traj) != n // traj.decimation + 1:
        raise IncompleteTrajectoryError(
            f"trajectory has {len(traj)} samples, expected {n // traj.decimation + 1}")


def gait_cost(traj, w: CostWeights, dt=None):
    """``sum_k (w1 |Pi_k|^2 + w2 |dx_B,k|^2) dt`` over samples k = 1..N."""
    _check_complete(traj)
    dt = traj.sample_dt if dt is None else dt
    P = traj.channels["momentum"][1:]
    V = traj.channels["velocity"][1:]
    terms = w.w1 * np.sum(P * P, axis=1) + w.w2 * np.sum(V * V, axis=1)
    return float(math.fsum(terms * dt))


def pitch_cost(traj, w: CostWeights, pitch_ref, dt=None):
    """Gait cost plus ``w3 sum_k (pitch_ref - pitch_k)^2 dt``."""
    dt = traj.sample_dt if dt is None else dt
    e = pitch_ref - traj.channels["pitch"][1:]
    return gait_cost(traj, w, dt) + float(math.fsum(w.w3 * e * e * dt))


# -- optimizer -------------------------------------------------------------

@dataclass
class OptimizationResult:
    x: np.ndarray
    cost: float
    trace: list
    points: list
    feasible: list
    n_evals: int
    reason: str
    seed: int
    names: tuple = ()
    settings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def best_so_far(self):
        return np.minimum.accumulate(np.asarray(self.trace, dtype=float))

    def to_dict(self):
        return {
            "names": list(self.names),
            "x": [float(v) for v in self.x],
            "cost": float(self.cost),
            "n_evals": int(self.n_evals),
            "reason": self.reason,
            "seed": int(self.seed),
            "trace": [float(v) for v in self.trace],
            "feasible": [bool(v) for v in self.feasible],
            "points": [[float(v) for v in p] for p in self.points],
            "settings": self.settings,
            **self.extra,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Evaluator:
    """Counts evaluations, applies the failure penalty and records the trace."""

    def __init__(self, objective, lo, hi, max_evals):
        self.objective = objective
        self.lo = lo
        self.span = hi - lo
        self.max_evals = max_evals
        self.trace, self.points, self.feasible = [], [], []
        self.good = []

    def to_x(self, z):
        return self.lo + np.clip(z, 0.0, 1.0) * self.span

    @property
    def exhausted(self):
        return len(self.trace) >= self.max_evals

    def __call__(self, z):
        x = self.to_x(z)
        try:
            f = float(self.objective(x))
            ok = math.isfinite(f)
        except (SimulationError, ArithmeticError, ValueError, RuntimeError):
            ok = False
        if not ok:
            f = PENALTY_FACTOR * float(np.median(self.good)) if self.good else PENALTY_FALLBACK
        else:
            self.good.append(f)
        self.trace.append(f)
        self.points.append(x.copy())
        self.feasible.append(ok)
        return f


def _simplex_search(ev: _Evaluator, z0, step, xtol, ftol):
    n = len(z0)
    simplex = [np.clip(z0, 0.0, 1.0)]
    for i in range(n):
        z = simplex[0].copy()
        z[i] += step if z[i] + step <= 1.0 else -step
        simplex.append(z)
    fs = []
    for z in simplex:
        if ev.exhausted:
            return "max_evals"
        fs.append(ev(z))
    simplex = np.array(simplex)
    fs = np.array(fs)
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        diam = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if diam < xtol:
            return "xtol"
        if ftol > 0 and fs[-1] - fs[0] <= ftol * (abs(fs[0]) + 1e-300):
            return "ftol"
        if ev.exhausted:
            return "max_evals"
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        zr = np.clip(centroid + (centroid - worst), 0.0, 1.0)
        fr = ev(zr)
        if fr < fs[0]:
            if ev.exhausted:
                simplex[-1], fs[-1] = zr, fr
                continue
            ze = np.clip(centroid + 2.0 * (centroid - worst), 0.0, 1.0)
            fe = ev(ze)
            simplex[-1], fs[-1] = (ze, fe) if fe < fr else (zr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = zr, fr
            continue
        if ev.exhausted:
            continue
        if fr < fs[-1]:
            zc = np.clip(centroid + 0.5 * (zr - centroid), 0.0, 1.0)
            fc = ev(zc)
            if fc <= fr:
                simplex[-1], fs[-1] = zc, fc
                continue
        else:
            zc = np.clip(centroid + 0.5 * (worst - centroid), 0.0, 1.0)
            fc = ev(zc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = zc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            if ev.exhausted:
                break
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
            fs[i] = ev(simplex[i])


def nelder_mead(objective, x0, bounds, max_evals=400, initial_step=0.25, xtol=1e-4,
                ftol=0.0, restarts=0, seed=0, names=()):
    """Bounded Nelder-Mead.

    Parameters
    ----------
    objective : callable
        ``f(x) -> float``.  Exceptions and non-finite values count as failures
        and are replaced by ``1e6 * median(feasible costs)``.
    x0 : array_like
        Start point (clipped to the box).
    bounds : (lo, hi)
        Finite box with ``lo < hi``.
    initial_step, xtol : float
        Simplex edge and termination diameter, as fractions of the box width.
    restarts : int
        Additional searches from uniform random points drawn with ``seed``.
    """
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
        raise ValueError("bounds must be finite with lo < hi")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != lo.shape:
        raise ValueError("x0 and bounds differ in dimension")
    ev = _Evaluator(objective, lo, hi, max_evals)
    rng = np.random.default_rng(seed)
    reason = _simplex_search(ev, (x0 - lo) / (hi - lo), initial_step, xtol, ftol)
    for _ in range(restarts):
        if ev.exhausted:
            break
        reason = _simplex_search(ev, rng.uniform(size=len(lo)), initial_step, xtol, ftol)
    if not any(ev.feasible):
        raise OptimizationFailedError("all candidate evaluations failed")
    feas = [i for i, ok in enumerate(ev.feasible) if ok]
    best = min(feas, key=lambda i: (ev.trace[i], i))
    settings = {"method": "nelder-mead", "max_evals": max_evals, "initial_step": initial_step,
                "xtol": xtol, "ftol": ftol, "restarts": restarts,
                "bounds": [[float(v) for v in lo], [float(v) for v in hi]]}
    return OptimizationResult(ev.points[best].copy(), ev.trace[best], ev.trace, ev.points,
                              ev.feasible, len(ev.trace), reason, seed, tuple(names), settings)


# -- problems --------------------------------------------------------------

def gait_bounds(params):
    lo, hi = fdc_bounds(params)
    o = params.optim
    return np.append(lo, o.pitch_min), np.append(hi, o.pitch_max)


def gait_objective(params, horizon=None, weights=None):
    w = weights or CostWeights.from_params(params)
    horizon = params.optim.horizon if horizon is None else horizon

    def f(x):
        traj = simulate(params, "open_loop", t_end=horizon, l_ref=x[:4], pitch=x[4], decimation=1)
        return gait_cost(traj, w)
    return f


def pitch_objective(params, l_ref_zp, pitch0=None, horizon=None, weights=None):
    w = weights or CostWeights.from_params(params)
    horizon = params.optim.pitch_horizon if horizon is None else horizon
    ref = params.control.pitch_ref

    def f(kc):
        traj = simulate(params, "pitch_stabilized", t_end=horizon, l_ref=l_ref_zp,
                        pitch_gain=kc, pitch=pitch0, decimation=1)
        return pitch_cost(traj, w, ref)
    return f


def _settings(params, max_evals, seed):
    o = params.optim
    return (o.max_evals if max_evals is None else max_evals,
            o.seed if seed is None else seed)


def optimize_gait(params, max_evals=None, seed=None, horizon=None, objective=None):
    """Minimize the gait cost over ``(l_ref, initial pitch)`` from the nominal gait.

    ``objective`` replaces the simulation-based cost (used for self-tests).
    """
    o = params.optim
    max_evals, seed = _settings(params, max_evals, seed)
    lo, hi = gait_bounds(params)
    x0 = np.clip(np.append(params.linkage.l0, params.control.pitch_ref), lo, hi)
    f = objective or gait_objective(params, horizon)
    res = nelder_mead(f, x0, (lo, hi), max_evals, o.initial_step, o.xtol, o.ftol, o.restarts,
                      seed, GAIT_NAMES)
    res.extra.update({
        "problem": "gait",
        "nominal_x": [float(v) for v in x0],
        "nominal_cost": float(res.trace[0]),
        "horizon": float(o.horizon if horizon is None else horizon),
        "config_hash": config_hash(params),
        "reference_optimum_mm_deg": {"l_ref": [7.8, 10.5, 6.2, 7.2], "pitch": 33.0},
    })
    return res


def optimize_pitch_gains(params, l_ref_zp, max_evals=None, seed=None, horizon=None,
                         pitch0=None, objective=None):
    """Minimize the pitch cost over the outer-loop gains ``K_c`` starting at zero."""
    o = params.optim
    max_evals, seed = _settings(params, max_evals, seed)
    lo, hi = np.asarray(o.kc_min, float), np.asarray(o.kc_max, float)
    x0 = np.clip(np.zeros(4), lo, hi)
    f = objective or pitch_objective(params, l_ref_zp, pitch0, horizon)
    res = nelder_mead(f, x0, (lo, hi), max_evals, o.initial_step, o.xtol, o.ftol, o.restarts,
                      seed, PITCH_NAMES)
    res.extra.update({
        "problem": "pitch",
        "l_ref_zp": [float(v) for v in l_ref_zp],
        "zero_gain_cost": float(res.trace[0]),
        "horizon": float(o.pitch_horizon if horizon is None else horizon),
        "config_hash": config_hash(params),
        "reference_gains": [0.42, -0.26, -0.38, -0.097],
    })
    return res
