"""Euler-angle rotation algebra for the Z-y'-x'' (yaw, pitch, roll) sequence.

All rotation matrices are *passive*: ``inertial_to_body(o) @ v_I`` gives the
body-frame coordinates of a vector whose inertial coordinates are ``v_I``.
Angles are never wrapped.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

#: Closest approach to |theta| = pi/2 at which the rate Jacobian may be inverted.
EPS_GIMBAL = 1e-6


class GimbalLockError(ValueError):
    """Raised when pitch is too close to +-pi/2 to invert the Euler-rate map."""


class EulerAngles(NamedTuple):
    phi: float
    theta: float
    psi: float


class EulerRates(NamedTuple):
    phi_dot: float
    theta_dot: float
    psi_dot: float


def _check_finite(*values) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite argument: {v!r}")


def elementary_rotation(axis: str, angle: float) -> np.ndarray:
    """Passive rotation about a single coordinate axis ('x', 'y' or 'z')."""
    _check_finite(angle)
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    if axis == "y":
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    if axis == "z":
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown axis {axis!r}; expected 'x', 'y' or 'z'")


def inertial_to_body(angles) -> np.ndarray:
    """R = R_x(phi) R_y(theta) R_z(psi)."""
    phi, theta, psi = angles
    _check_finite(phi, theta, psi)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    # closed form of the product above
    return np.array(
        [
            [ct * cp, ct * sp, -st],
            [sf * st * cp - cf * sp, sf * st * sp + cf * cp, sf * ct],
            [cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct],
        ]
    )


def skew(v) -> np.ndarray:
    """Matrix S with S @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def body_angular_velocity(angles, rates) -> np.ndarray:
    """Body-frame angular velocity from Euler angles and their rates.

    Sums the roll rate about x'', the pitch rate about y' and the yaw rate
    about Z, each re-expressed in the body frame.
    """
    phi, theta, psi = angles
    Rx = elementary_rotation("x", phi)
    Ry = elementary_rotation("y", theta)
    R = inertial_to_body(angles)
    phi_dot, theta_dot, psi_dot = rates
    return (
        Rx @ np.array([phi_dot, 0.0, 0.0])
        + Rx @ Ry @ np.array([0.0, theta_dot, 0.0])
        + R @ np.array([0.0, 0.0, psi_dot])
    )


def rate_matrix(angles) -> np.ndarray:
    """d(omega_B)/d(o_dot); omega_B = rate_matrix(o) @ o_dot."""
    phi, theta = angles[0], angles[1]
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, -st], [0.0, cf, sf * ct], [0.0, -sf, cf * ct]])


def check_gimbal(theta: float) -> None:
    if abs(theta) >= math.pi / 2 - EPS_GIMBAL:
        raise GimbalLockError(
            f"pitch {theta:.9f} rad reached the +-pi/2 singularity margin ({EPS_GIMBAL:g} rad)"
        )


def rate_matrix_inverse(angles) -> np.ndarray:
    """Closed-form inverse of :func:`rate_matrix`."""
    phi, theta = angles[0], angles[1]
    check_gimbal(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    return np.array(
        [[1.0, sf * tt, cf * tt], [0.0, cf, -sf], [0.0, sf / ct, cf / ct]]
    )


def euler_rate_jacobians(angles, rates, invertible: bool = False):
    """Return ``(J_o, J_odot)`` = (d omega_B / d o, d omega_B / d o_dot).

    With these, the body angular acceleration is
    ``J_o @ o_dot + J_odot @ o_ddot``.  Pass ``invertible=True`` when the
    caller is about to invert ``J_odot``; pitch is then checked against the
    gimbal margin.
    """
    phi, theta = angles[0], angles[1]
    if invertible:
        check_gimbal(theta)
    _, theta_dot, psi_dot = rates
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    # columns: d/dphi, d/dtheta, d/dpsi (omega_B does not depend on psi)
    J_o = np.array(
        [
            [0.0, -ct * psi_dot, 0.0],
            [0.0, -sf * st * psi_dot, 0.0],
            [0.0, -cf * st * psi_dot, 0.0],
        ]
    )
    J_o[1, 0] = -sf * theta_dot + cf * ct * psi_dot
    J_o[2, 0] = -cf * theta_dot - sf * ct * psi_dot
    return J_o, rate_matrix(angles)
