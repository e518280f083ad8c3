"""Non-aerodynamic forces on the massed wing.

Torsional spring-dampers act on the shoulder and elbow joints.  Linear
spring-dampers ("guides") pull the massed elbow p6 toward the linkage
humerus guide p5 and the massed wing tip p17 toward the radius guide p16.
The linkage is massless and kinematically driven, so guide reactions on it
are not modelled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import EX, N_V, SIDES

# selector of the four massed joint angles inside the 10-vector
B_I = np.zeros((N_V, 4))
B_I[:4, :4] = np.eye(4)
MIRROR_2D = np.array([-1.0, 1.0])   # (y, z) -> (-y, z)


class CoincidentPointsError(ValueError):
    """Guide spring endpoints coincide, so its direction is undefined."""


@dataclass
class GuideForces:
    """Body-frame planar (y, z) guide forces on p6 and p17 of each wing."""

    f6: np.ndarray      # (2 sides, 2)
    f17: np.ndarray
    stretch6: np.ndarray
    stretch17: np.ndarray
    generalized: np.ndarray


def rest_angles(massed):
    return np.array([massed.shoulder_rest_angle, massed.elbow_rest_angle,
                     massed.shoulder_rest_angle, massed.elbow_rest_angle])


def torsional_forces(theta, theta_dot, massed):
    """Joint torques ``-(k (th - th0) + b dth)`` on [th_sL, th_eL, th_sR, th_eR]."""
    k = np.array([massed.shoulder_stiffness, massed.elbow_stiffness] * 2)
    b = np.array([massed.shoulder_damping, massed.elbow_damping] * 2)
    return -(k * (np.asarray(theta) - rest_angles(massed)) + b * np.asarray(theta_dot))


def torsional_energy(theta, massed):
    k = np.array([massed.shoulder_stiffness, massed.elbow_stiffness] * 2)
    d = np.asarray(theta) - rest_angles(massed)
    return float(0.5 * np.sum(k * d * d))


def guide_force(p_link, v_link, p_body, v_body, stiffness, damping, rest_length):
    """Spring-damper force on the massed point, directed along ``p_link - p_body``."""
    d = np.asarray(p_link, dtype=float) - np.asarray(p_body, dtype=float)
    dist = float(np.hypot(d[0], d[1]))
    if dist < 1e-12:
        raise CoincidentPointsError("guide endpoints coincide (separation < 1e-12 m)")
    e = d / dist
    rate = float((np.asarray(v_link) - np.asarray(v_body)) @ e)
    return (stiffness * (dist - rest_length) + damping * rate) * e, dist - rest_length


def map_point_force(point_jacobian, force):
    """Generalized force ``J^T f`` of a force applied at a point with Jacobian ``J``."""
    return np.asarray(point_jacobian).T @ np.asarray(force, dtype=float)


def wing_point_wrench(wf, side, point, force_body, R, on_radius):
    """Generalized force of a body-frame force applied at a body-frame wing point.

    Equivalent to ``map_point_force(point_jacobian, R @ force_body)`` without
    forming the Jacobian.
    """
    u = np.zeros(N_V)
    s = wf.sign
    u[2 * side] = s * np.cross(point - wf.shoulder, force_body)[0]
    if on_radius:
        u[2 * side + 1] = s * np.cross(point - wf.elbow, force_body)[0]
    u[4:7] = R @ force_body
    u[7:10] = np.cross(point, force_body)
    return u


def guide_wrench(end_effectors, wings, R, massed, rest6, rest17):
    """Assemble the generalized guide force over {6_L, 17_L, 6_R, 17_R}.

    ``end_effectors`` is ``(p5, p16, v5, v16)`` of the left linkage in the
    body y-z plane; the right wing uses its mirror image.
    """
    p5, p16, v5, v16 = end_effectors
    k, b = massed.guide_stiffness, massed.guide_damping
    total = np.zeros(N_V)
    f6 = np.zeros((2, 2))
    f17 = np.zeros((2, 2))
    s6 = np.zeros(2)
    s17 = np.zeros(2)
    if k == 0.0 and b == 0.0:
        return GuideForces(f6, f17, s6, s17, total)
    for (side, s), wf in zip(SIDES, wings):
        m = MIRROR_2D if s < 0 else 1.0
        elbow = wf.elbow
        tip = wf.tip
        v_elbow = wf.rate_h * np.cross(EX, wf.humerus)
        v_tip = v_elbow + wf.rate_r * np.cross(EX, wf.radius)
        f6[side], s6[side] = guide_force(m * p5, m * v5, elbow[1:], v_elbow[1:], k, b, rest6)
        f17[side], s17[side] = guide_force(m * p16, m * v16, tip[1:], v_tip[1:], k, b, rest17)
        total += wing_point_wrench(wf, side, elbow, np.array([0.0, *f6[side]]), R, False)
        total += wing_point_wrench(wf, side, tip, np.array([0.0, *f17[side]]), R, True)
    return GuideForces(f6, f17, s6, s17, total)
