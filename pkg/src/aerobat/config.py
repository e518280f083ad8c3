"""Robot parameters: dataclasses, validation, and the INI-style config format.

The config document is a sectioned key-value file (``[linkage]``,
``[massed]``, ``[aero]``, ``[control]``, ``[sim]``, ``[optim]``).  Arrays
are comma separated.  Everything is SI (m, kg, s, rad) except
``control.flap_frequency_hz``; ``ControlParams.omega_ref`` gives rad/s.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np


class ConfigError(ValueError):
    """Base class for config problems."""


class ConfigParseError(ConfigError):
    """The document is not well formed."""


class ConfigValidationError(ConfigError):
    """A parameter invariant is violated."""


def _arr(x, n=None):
    a = np.array(x, dtype=float)
    if n is not None and a.shape != (n,):
        raise ConfigValidationError(f"expected {n} values, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _mat3(x):
    a = np.array(x, dtype=float).reshape(3, 3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinkageGeometry:
    """Planar linkage dimensions (m), anchors (body y-z, m) and angles (rad).

    ``l3b, l3c, l8b, l10b`` are the nominal FDC lengths l0.  ``l4`` and
    ``l11`` are the rest lengths of the guide springs between the linkage
    end effectors and the massed wing.  The output rocker L14 pivots at p14,
    carried by an arm of length ``l8c`` on L8 at angle ``arm8_angle``.
    ``assembly_guess`` holds the seven free angles (th2, th4, th9, th10,
    th12, th13, th14) of the assembly branch at th1 = 0.
    """

    l1: float
    l2: float
    l3a: float
    l3b: float
    l3c: float
    l4: float
    l5a: float
    l5b: float
    l8a: float
    l8b: float
    l9: float
    l10a: float
    l10b: float
    l11: float
    l12: float
    l13: float
    l14: float
    l8c: float
    arm3_angle: float
    arm8_angle: float
    l12_angle: float
    p1: np.ndarray
    p4: np.ndarray
    p9: np.ndarray
    p12: np.ndarray
    delta_phi: float
    assembly_guess: np.ndarray
    fdc_min_scale: float = 0.8
    fdc_max_scale: float = 1.2
    fdc_min: np.ndarray | None = None
    fdc_max: np.ndarray | None = None

    @property
    def l0(self) -> np.ndarray:
        return np.array([self.l3b, self.l3c, self.l8b, self.l10b])


@dataclass(frozen=True)
class MassedParams:
    """Masses (kg), inertias (kg m^2, link frame), lengths (m), joint springs.

    Humerus and radius values describe the left wing; the right wing is
    its mirror image across the body x-z plane.
    """

    body_mass: float
    body_inertia: np.ndarray
    humerus_mass: float
    humerus_inertia: np.ndarray
    radius_mass: float
    radius_inertia: np.ndarray
    humerus_length: float
    radius_length: float
    shoulder_offset_angle: float
    riser_length: float
    shoulder_anchor: np.ndarray
    shoulder_stiffness: float
    shoulder_damping: float
    shoulder_rest_angle: float
    elbow_stiffness: float
    elbow_damping: float
    elbow_rest_angle: float
    guide_stiffness: float
    guide_damping: float
    gravity: float = 9.81


@dataclass(frozen=True)
class AeroParams:
    air_density: float
    chord: float
    humerus_span: float
    radius_span: float
    wind: np.ndarray
    n_span: int = 20
    n_chord: int = 10
    enabled: bool = True

    @property
    def ac_offset_humerus(self) -> np.ndarray:
        """Quarter-chord offset from the leading-edge bone (link frame)."""
        return np.array([-0.25 * self.chord, 0.0, 0.0])

    @property
    def ac_offset_radius(self) -> np.ndarray:
        return np.array([-0.25 * self.chord, 0.0, 0.0])


@dataclass(frozen=True)
class ControlParams:
    crank_gain: float
    fdc_kp: np.ndarray
    fdc_kd: np.ndarray
    pitch_gain: np.ndarray
    flap_frequency_hz: float
    pitch_ref: float
    l_ref: np.ndarray           # zero-path FDC reference
    momentum_sign: str = "negated"

    @property
    def omega_ref(self) -> float:
        """Flapping reference in rad/s."""
        return 2.0 * np.pi * self.flap_frequency_hz


@dataclass(frozen=True)
class SimParams:
    dt: float = 2e-4
    t_end: float = 1.0
    projection_tol: float = 1e-12
    reorthonormalize: str = "polar"
    decimation: int = 1


@dataclass(frozen=True)
class OptimParams:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 10.0
    max_evals: int = 400
    horizon: float = 1.0
    pitch_horizon: float = 2.0
    seed: int = 0
    pitch_min: float = 0.0
    pitch_max: float = 1.0471975511965976
    kc_min: np.ndarray = dataclasses.field(default_factory=lambda: _arr([-1.0] * 4))
    kc_max: np.ndarray = dataclasses.field(default_factory=lambda: _arr([1.0] * 4))
    initial_step: float = 0.25
    xtol: float = 1e-4
    ftol: float = 1e-10
    restarts: int = 0


@dataclass(frozen=True)
class RobotParams:
    linkage: LinkageGeometry
    massed: MassedParams
    aero: AeroParams
    control: ControlParams
    sim: SimParams
    optim: OptimParams

    def replace(self, **sections) -> "RobotParams":
        return replace(self, **sections)


SECTIONS = {
    "linkage": LinkageGeometry,
    "massed": MassedParams,
    "aero": AeroParams,
    "control": ControlParams,
    "sim": SimParams,
    "optim": OptimParams,
}

_VECTORS = {
    "linkage": {"p1": 2, "p4": 2, "p9": 2, "p12": 2, "assembly_guess": 7,
                "fdc_min": 4, "fdc_max": 4},
    "massed": {"shoulder_anchor": 3},
    "aero": {"wind": 3},
    "control": {"fdc_kp": 4, "fdc_kd": 4, "pitch_gain": 4, "l_ref": 4},
    "optim": {"kc_min": 4, "kc_max": 4},
}
_MATRICES = {"massed": {"body_inertia", "humerus_inertia", "radius_inertia"}}
_INTS = {"n_span", "n_chord", "decimation", "max_evals", "seed", "restarts"}
_BOOLS = {"enabled"}
_STRINGS = {"momentum_sign", "reorthonormalize"}


def fdc_bounds(params: RobotParams):
    """(l_min, l_max) for the FDC lengths: scaled l0 unless overridden."""
    g = params.linkage
    lo = g.fdc_min if g.fdc_min is not None else g.fdc_min_scale * g.l0
    hi = g.fdc_max if g.fdc_max is not None else g.fdc_max_scale * g.l0
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


# -- parsing ---------------------------------------------------------------

def _parse_value(section, key, text):
    text = text.strip()
    try:
        if key in _STRINGS:
            return text
        if key in _BOOLS:
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if key in _INTS:
            return int(text)
        if key in _VECTORS.get(section, {}) or key in _MATRICES.get(section, set()):
            if text.lower() in ("", "none"):
                return None
            return [float(v) for v in text.replace("[", "").replace("]", "").split(",")]
        return float(text)
    except ValueError as exc:
        raise ConfigParseError(f"[{section}] {key}: cannot parse {text!r}") from exc


def _read_raw(document: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(document)
    except configparser.Error as exc:
        raise ConfigParseError(str(exc)) from exc
    raw = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigParseError(f"unknown section [{section}]")
        raw[section] = dict(cp.items(section))
    return raw


def _default_document() -> str:
    return resources.files("aerobat.data").joinpath("default.cfg").read_text()


def _build(raw: dict) -> RobotParams:
    built = {}
    for section, cls in SECTIONS.items():
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, text in raw.get(section, {}).items():
            if key not in names:
                raise ConfigParseError(f"[{section}] unknown key {key!r}")
            kwargs[key] = _parse_value(section, key, text)
        for name, n in _VECTORS.get(section, {}).items():
            if kwargs.get(name) is not None:
                kwargs[name] = _arr(kwargs[name], n)
        for name in _MATRICES.get(section, set()):
            if name in kwargs:
                if len(kwargs[name]) == 3:
                    kwargs[name] = np.diag(kwargs[name])
                kwargs[name] = _mat3(kwargs[name])
        try:
            built[section] = cls(**kwargs)
        except TypeError as exc:
            raise ConfigParseError(f"[{section}] {exc}") from exc
    return RobotParams(**built)


def load_config(document: str | None = None, overrides: dict | None = None,
                check_assembly: bool = True) -> RobotParams:
    """Parse a config document on top of the shipped defaults and validate it.

    ``overrides`` maps dotted keys (``"aero.chord"``) to strings in the
    config grammar and is applied after the document.
    """
    raw = _read_raw(_default_document())
    if document:
        for section, items in _read_raw(document).items():
            raw.setdefault(section, {}).update(items)
    for dotted, text in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigParseError(f"bad override key {dotted!r}")
        raw.setdefault(section, {})[key] = str(text)
    params = _build(raw)
    validate(params)
    if check_assembly:
        from .linkage import Linkage

        g = params.linkage
        Linkage(g).assemble(0.0, g.l0, g.assembly_guess)
    return params


def load_config_file(path, overrides=None) -> RobotParams:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read(), overrides)


# -- validation ------------------------------------------------------------

def _fail(msg):
    raise ConfigValidationError(msg)


def validate(params: RobotParams) -> None:
    """Raise ``ConfigValidationError`` naming the first violated invariant."""
    g = params.linkage
    for name in ("l1", "l2", "l3a", "l3b", "l3c", "l4", "l8a", "l8b", "l9", "l10a",
                 "l10b", "l11", "l12", "l13", "l14", "l8c"):
        v = getattr(g, name)
        if not (np.isfinite(v) and v > 0):
            _fail(f"linkage.{name} must be positive, got {v}")
    lo, hi = fdc_bounds(params)
    if not (np.all(lo > 0) and np.all(lo <= g.l0) and np.all(g.l0 <= hi)):
        _fail("FDC bounds must satisfy 0 < l_min <= l0 <= l_max")

    m = params.massed
    for name in ("body", "humerus", "radius"):
        mass = getattr(m, f"{name}_mass")
        if not mass > 0:
            _fail(f"massed.{name}_mass must be positive, got {mass}")
        inertia = getattr(m, f"{name}_inertia")
        if not np.allclose(inertia, inertia.T, atol=1e-15):
            _fail(f"massed.{name}_inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(inertia)) <= 0:
            _fail(f"massed.{name}_inertia must be positive definite")
    for name in ("humerus_length", "radius_length"):
        if not getattr(m, name) > 0:
            _fail(f"massed.{name} must be positive")
    for name in ("shoulder_stiffness", "shoulder_damping", "elbow_stiffness",
                 "elbow_damping", "guide_stiffness", "guide_damping", "gravity"):
        if getattr(m, name) < 0:
            _fail(f"massed.{name} must be non-negative")

    a = params.aero
    if not a.air_density > 0:
        _fail("aero.air_density must be positive")
    if not a.chord > 0:
        _fail("aero.chord must be positive")
    if not (a.humerus_span > 0 and a.radius_span > 0):
        _fail("aero spans must be positive")
    if a.n_span < 1 or a.n_chord < 1:
        _fail("aero.n_span and aero.n_chord must be >= 1")

    c = params.control
    if not c.crank_gain > 0:
        _fail("control.crank_gain must be positive")
    if np.any(c.fdc_kp < 0) or np.any(c.fdc_kd < 0):
        _fail("control FDC gains must be non-negative")
    if c.momentum_sign not in ("negated", "conventional"):
        _fail("control.momentum_sign must be 'negated' or 'conventional'")
    if np.any(c.l_ref <= 0):
        _fail("control.l_ref must be positive")

    s = params.sim
    if not s.dt > 0:
        _fail("sim.dt must be positive")
    if not s.t_end >= s.dt:
        _fail("sim.t_end must be at least one time step")
    if not s.projection_tol > 0:
        _fail("sim.projection_tol must be positive")
    if s.reorthonormalize not in ("polar", "none"):
        _fail("sim.reorthonormalize must be 'polar' or 'none'")
    if s.decimation < 1:
        _fail("sim.decimation must be >= 1")

    o = params.optim
    if min(o.w1, o.w2, o.w3) < 0 or (o.w1 == 0 and o.w2 == 0 and o.w3 == 0):
        _fail("optim weights must be non-negative and not all zero")
    if not (o.pitch_min < o.pitch_max):
        _fail("optim pitch bounds must be ordered")
    if np.any(o.kc_min >= o.kc_max):
        _fail("optim K_c bounds must be ordered")
    if o.max_evals < 1:
        _fail("optim.max_evals must be >= 1")


# -- serialization ---------------------------------------------------------

def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    if isinstance(value, np.ndarray):
        return ", ".join(repr(float(v)) for v in value.ravel())
    return repr(float(value))


def dump_config(params: RobotParams) -> str:
    """Serialize to the config grammar; ``load_config(dump_config(p)) == p``."""
    out = io.StringIO()
    for section, cls in SECTIONS.items():
        obj = getattr(params, section)
        out.write(f"[{section}]\n")
        for f in fields(cls):
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def params_equal(a: RobotParams, b: RobotParams) -> bool:
    for section in SECTIONS:
        sa, sb = getattr(a, section), getattr(b, section)
        for f in fields(sa):
            va, vb = getattr(sa, f.name), getattr(sb, f.name)
            if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
                if va is None or vb is None or not np.array_equal(va, vb):
                    return False
            elif va != vb:
                return False
    return True


def config_hash(params: RobotParams) -> str:
    return hashlib.sha256(dump_config(params).encode("utf-8")).hexdigest()[:16]
