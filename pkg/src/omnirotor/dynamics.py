"""Newton-Euler rigid-body model of the tilt-rotor vehicle.

State vector layout (12): ``[X, Y, Z, phi, theta, psi, Xd, Yd, Zd, phid, thetad, psid]``.

Rotor thrust acts along ``z_n`` of each rotor frame. The rotor-frame
rotation ``R_n`` is passive (body -> rotor), so ``R_n.T @ e_z`` is the thrust
direction in body coordinates, used for forces, moment arms and drag torques
alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from omnirotor.configuration import (
    DEFAULT_ANGLE_LIMIT,
    ConfigId,
    TiltAngles,
    VehicleParams,
    constant_allocation_matrix,
    rotor_offsets,
    spin_signs,
)
from omnirotor.kinematics import check_gimbal, inertial_to_body, rate_matrix_inverse

#: Default rotor-speed ceiling, rad/s.
OMEGA_MAX = 1600.0
#: 0.4 s per 60 degrees.
SERVO_RATE_LIMIT = math.radians(60.0) / 0.4

_SPIN = spin_signs()


def rotor_thrust(omega: float, k_f: float) -> float:
    if omega < 0:
        raise ValueError(f"rotor speed must be non-negative, got {omega}")
    return k_f * omega * omega


def rotor_drag(omega: float, k_m: float) -> float:
    if omega < 0:
        raise ValueError(f"rotor speed must be non-negative, got {omega}")
    return k_m * omega * omega


@dataclass(frozen=True)
class ActuatorCommand:
    """Rotor speeds (rad/s) plus tilt angles (rad). ``gamma`` is zero unless Tilt-Hedral."""

    omega: np.ndarray
    beta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        for name in ("omega", "beta", "gamma"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(4)
            object.__setattr__(self, name, arr)

    @classmethod
    def hover(cls, params: VehicleParams) -> "ActuatorCommand":
        w = math.sqrt(params.m * params.g / (4.0 * params.k_f))
        return cls(np.full(4, w))

    @property
    def tilt(self) -> TiltAngles:
        return TiltAngles(self.beta, self.gamma)


@dataclass
class EulerState:
    p: np.ndarray
    o: np.ndarray
    p_dot: np.ndarray
    o_dot: np.ndarray

    @classmethod
    def from_vector(cls, x) -> "EulerState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.o, self.p_dot, self.o_dot]).astype(float)

    @classmethod
    def at_rest(cls, position=(0.0, 0.0, 0.0), angles=(0.0, 0.0, 0.0)) -> "EulerState":
        return cls(np.array(position, float), np.array(angles, float), np.zeros(3), np.zeros(3))


def _as_state_vector(state) -> np.ndarray:
    if isinstance(state, EulerState):
        return state.to_vector()
    return np.asarray(state, dtype=float)


# ---------------------------------------------------------------------------
# thrust geometry and wrench


def thrust_directions(config: ConfigId, beta, gamma=None) -> np.ndarray:
    """3x4 matrix of unit thrust directions ``R_n.T @ e_z`` in body coordinates."""
    config = ConfigId.parse(config)
    beta = np.asarray(beta, dtype=float)
    sb, cb = np.sin(beta), np.cos(beta)
    D = np.zeros((3, 4))
    if config is ConfigId.HEDRAL:
        D[0, :2], D[2, :2] = sb[:2], cb[:2]
        D[1, 2:], D[2, 2:] = -sb[2:], cb[2:]
    elif config is ConfigId.TILT:
        D[1, :2], D[2, :2] = -sb[:2], cb[:2]
        D[0, 2:], D[2, 2:] = sb[2:], cb[2:]
    elif config is ConfigId.HALF_TILT:
        D[1], D[2] = -sb, cb
    else:
        gamma = np.zeros(4) if gamma is None else np.asarray(gamma, dtype=float)
        sg, cg = np.sin(gamma), np.cos(gamma)
        D[0, :2], D[1, :2] = sb[:2], -cb[:2] * sg[:2]
        D[0, 2:], D[1, 2:] = cb[2:] * sg[2:], -sb[2:]
        D[2] = cb * cg
    return D


def rotor_vectors_from_virtual(config: ConfigId, v) -> np.ndarray:
    """3x4 matrix of ``omega_n**2 * direction_n`` expressed through the virtual input."""
    config = ConfigId.parse(config)
    v = np.asarray(v, dtype=float)
    if v.shape != (config.n_virtual,):
        raise ValueError(f"{config.value} expects a virtual input of length {config.n_virtual}")
    U = np.zeros((3, 4))
    if config is ConfigId.HEDRAL:
        U[0, :2], U[1, 2:] = v[0:2], -v[2:4]
        U[2] = v[4:8]
    elif config is ConfigId.TILT:
        U[1, :2], U[0, 2:] = -v[0:2], v[2:4]
        U[2] = v[4:8]
    elif config is ConfigId.HALF_TILT:
        U[1], U[2] = -v[0:4], v[4:8]
    else:
        U[0, :2], U[1, :2] = v[0:2], -v[4:6]
        U[0, 2:], U[1, 2:] = v[6:8], -v[2:4]
        U[2] = v[8:12]
    return U


def rotor_vectors_from_command(config: ConfigId, command: ActuatorCommand) -> np.ndarray:
    return thrust_directions(config, command.beta, command.gamma) * command.omega**2


def wrench_from_rotor_vectors(U: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Body wrench (force, moment) from per-rotor ``omega**2 * direction`` columns."""
    fx, fy, fz = params.k_f * U
    rx, ry, rz = rotor_offsets(params)
    out = np.empty(6)
    out[0], out[1], out[2] = fx.sum(), fy.sum(), fz.sum()
    drag = params.k_m * (U @ _SPIN)
    # sum of r_n x f_n, written out per component
    out[3] = ry @ fz - rz @ fy + drag[0]
    out[4] = rz @ fx - rx @ fz + drag[1]
    out[5] = rx @ fy - ry @ fx + drag[2]
    return out


def body_wrench(config: ConfigId, params: VehicleParams, command_or_v) -> np.ndarray:
    """Total body-frame force and moment for an actuator command or a virtual input."""
    if isinstance(command_or_v, ActuatorCommand):
        U = rotor_vectors_from_command(config, command_or_v)
    else:
        U = rotor_vectors_from_virtual(config, command_or_v)
    return wrench_from_rotor_vectors(U, params)


def gyro_momentum(config: ConfigId, command: ActuatorCommand, rotor_inertia: float) -> np.ndarray:
    """Sum of spin_n * J_p * omega_n * z_n; the plant torque is omega_B x this."""
    D = thrust_directions(config, command.beta, command.gamma)
    return rotor_inertia * (D @ (_SPIN * command.omega))


# ---------------------------------------------------------------------------
# equations of motion


def accelerations(
    x: np.ndarray,
    force_b: np.ndarray,
    moment_b: np.ndarray,
    params: VehicleParams,
    gyro_h: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Generalized accelerations (p_ddot, o_ddot) for a given body wrench."""
    return np.array(_accel(x, force_b, moment_b, params, gyro_h))


def state_rates(x, force_b, moment_b, params: VehicleParams, gyro_h=None, disturbance=None):
    """12-element state derivative for a fixed body wrench (the integrator's hot path)."""
    a = _accel(x, force_b, moment_b, params, gyro_h)
    out = np.empty(12)
    out[0:6] = x[6:12]
    out[6:12] = a
    if disturbance is not None:
        out[6:12] += disturbance
    return out


def _accel(x, force_b, moment_b, params: VehicleParams, gyro_h=None) -> tuple:
    phi, theta, psi = x[3], x[4], x[5]
    phid, thetad, psid = x[9], x[10], x[11]
    check_gimbal(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    fx, fy, fz = force_b
    m = params.m
    # R.T @ f, with R = inertial_to_body
    ax = (ct * cp * fx + (sf * st * cp - cf * sp) * fy + (cf * st * cp + sf * sp) * fz) / m
    ay = (ct * sp * fx + (sf * st * sp + cf * cp) * fy + (cf * st * sp - sf * cp) * fz) / m
    az = (-st * fx + sf * ct * fy + cf * ct * fz) / m - params.g

    # omega_B = W(o) o_dot
    wx = phid - st * psid
    wy = cf * thetad + sf * ct * psid
    wz = -sf * thetad + cf * ct * psid
    Ixx, Iyy, Izz = params.inertia
    mx, my, mz = moment_b
    if gyro_h is not None:
        hx, hy, hz = gyro_h
        mx += wy * hz - wz * hy
        my += wz * hx - wx * hz
        mz += wx * hy - wy * hx
    # J^-1 (M - omega x J omega)
    r1 = (mx - (wy * Izz * wz - wz * Iyy * wy)) / Ixx
    r2 = (my - (wz * Ixx * wx - wx * Izz * wz)) / Iyy
    r3 = (mz - (wx * Iyy * wy - wy * Ixx * wx)) / Izz
    # minus J_o o_dot
    r1 -= -ct * psid * thetad
    r2 -= (-sf * thetad + cf * ct * psid) * phid - sf * st * psid * thetad
    r3 -= (-cf * thetad - sf * ct * psid) * phid - cf * st * psid * thetad
    # W^-1
    tt = st / ct
    phidd = r1 + sf * tt * r2 + cf * tt * r3
    thetadd = cf * r2 - sf * r3
    psidd = (sf * r2 + cf * r3) / ct
    return ax, ay, az, phidd, thetadd, psidd


def state_derivative(
    state,
    command: ActuatorCommand,
    config: ConfigId,
    params: VehicleParams,
    disturbance: Optional[np.ndarray] = None,
    rotor_inertia: float = 0.0,
) -> np.ndarray:
    """Full 12-element state derivative under an actuator command."""
    x = _as_state_vector(state)
    wrench = body_wrench(config, params, command)
    h = gyro_momentum(config, command, rotor_inertia) if rotor_inertia else None
    acc = accelerations(x, wrench[:3], wrench[3:], params, h)
    if disturbance is not None:
        acc = acc + disturbance
    return np.concatenate([x[6:12], acc])


def virtual_from_actual(command: ActuatorCommand, config: ConfigId) -> np.ndarray:
    config = ConfigId.parse(config)
    w2 = command.omega**2
    sb, cb = np.sin(command.beta), np.cos(command.beta)
    if config.has_gamma:
        sg, cg = np.sin(command.gamma), np.cos(command.gamma)
        return np.concatenate([w2 * sb, w2 * cb * sg, w2 * cb * cg])
    return np.concatenate([w2 * sb, w2 * cb])


class AffinePair(NamedTuple):
    b: np.ndarray  # (6,)
    G: np.ndarray  # (6, n_virtual)


def affine_decompose(
    state, config: ConfigId, params: VehicleParams, G_b: Optional[np.ndarray] = None
) -> AffinePair:
    """Split the accelerations into ``b(x) + G(x) @ v``.

    ``G_b`` defaults to the configuration's constant body-frame allocation
    matrix; since the body wrench is ``G_b @ v``,
    ``G = blockdiag(R.T / m, W^-1 J^-1) @ G_b``.
    """
    x = _as_state_vector(state)
    if G_b is None:
        G_b = constant_allocation_matrix(config, params).matrix
    o = x[3:6]
    b = accelerations(x, np.zeros(3), np.zeros(3), params)
    Rt = inertial_to_body(o).T
    Winv = rate_matrix_inverse(o)
    inv_inertia = 1.0 / np.asarray(params.inertia)
    G = np.empty((6, G_b.shape[1]))
    G[:3] = (Rt / params.m) @ G_b[:3]
    G[3:] = (Winv * inv_inertia) @ G_b[3:]
    return AffinePair(b, G)


# ---------------------------------------------------------------------------
# uncertainties, actuators and disturbances


@dataclass(frozen=True)
class UncertaintySpec:
    """Plant-side perturbations. Defaults reproduce the full robustness stack.

    A scale of 1, a time constant of 0, ``None`` error ranges and
    ``disturbance='off'`` each switch the corresponding effect off.
    """

    mass_scale: float = 1.05
    inertia_scale: float = 1.20
    aero_scale: float = 0.90
    ecc_scale: float = 1.20
    bldc_time_constant: float = 1e-4
    servo_time_constant: float = 1e-4
    servo_rate_limit: float = SERVO_RATE_LIMIT
    servo_error_pct: Optional[tuple] = (1.0, 5.0)
    bldc_error_pct: Optional[tuple] = (4.0, 10.0)
    disturbance: str = "random"
    disturbance_range: tuple = (0.0353, 0.0707)
    constant_disturbance: tuple = (0.053, 0.053)
    disturbance_rate: float = 100.0
    rotor_inertia: float = 0.0
    controller_e: Optional[float] = None

    def __post_init__(self):
        for name in ("mass_scale", "inertia_scale", "aero_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ecc_scale < 0:
            raise ValueError("ecc_scale must be non-negative")
        if self.disturbance not in ("off", "random", "constant"):
            raise ValueError("disturbance must be 'off', 'random' or 'constant'")
        for name in ("servo_error_pct", "bldc_error_pct"):
            pct = getattr(self, name)
            if pct is None:
                continue
            lo, hi = pct
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 0 <= low <= high")
        if self.bldc_time_constant < 0 or self.servo_time_constant < 0:
            raise ValueError("time constants must be non-negative")
        if not self.servo_rate_limit > 0:
            raise ValueError("servo_rate_limit must be positive (use inf to disable)")

    @classmethod
    def ideal(cls) -> "UncertaintySpec":
        return cls(
            mass_scale=1.0,
            inertia_scale=1.0,
            aero_scale=1.0,
            ecc_scale=1.0,
            bldc_time_constant=0.0,
            servo_time_constant=0.0,
            servo_rate_limit=math.inf,
            servo_error_pct=None,
            bldc_error_pct=None,
            disturbance="off",
        )

    def with_(self, **changes) -> "UncertaintySpec":
        return replace(self, **changes)

    @property
    def actuators_ideal(self) -> bool:
        return (
            self.bldc_time_constant == 0
            and self.servo_time_constant == 0
            and math.isinf(self.servo_rate_limit)
            and self.servo_error_pct is None
            and self.bldc_error_pct is None
        )


def perturbed_params(params: VehicleParams, spec: UncertaintySpec) -> VehicleParams:
    """Truth-plant parameters. Apply once per run; the scaling compounds."""
    return replace(
        params,
        m=params.m * spec.mass_scale,
        inertia=tuple(i * spec.inertia_scale for i in params.inertia),
        k_f=params.k_f * spec.aero_scale,
        k_m=params.k_m * spec.aero_scale,
        e=params.e * spec.ecc_scale,
    )


def _signed_uniform(rng: np.random.Generator, pct: tuple, n: int) -> np.ndarray:
    lo, hi = pct
    mag = rng.uniform(lo, hi, n) / 100.0
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * mag


class ActuatorModel:
    """Rotor and servo response to commands: first-order lag, rate limit, errors.

    Holds the achieved actuator state between control steps. One instance per run.
    """

    def __init__(
        self,
        spec: UncertaintySpec,
        rng: np.random.Generator,
        initial: ActuatorCommand,
        angle_limit: float = DEFAULT_ANGLE_LIMIT,
    ):
        self.spec = spec
        self.rng = rng
        self.angle_limit = angle_limit
        self.omega = initial.omega.copy()
        self.beta = initial.beta.copy()
        self.gamma = initial.gamma.copy()

    def _lag(self, current, target, tau, dt):
        if tau == 0:
            return target.copy()
        return target + (current - target) * math.exp(-dt / tau)

    def _servo(self, current, target, dt):
        nxt = self._lag(current, target, self.spec.servo_time_constant, dt)
        max_step = self.spec.servo_rate_limit * dt
        return current + np.clip(nxt - current, -max_step, max_step)

    def step(self, commanded: ActuatorCommand, dt: float) -> ActuatorCommand:
        if dt <= 0:
            raise ValueError("dt must be positive")
        spec = self.spec
        w_target = commanded.omega
        b_target, g_target = commanded.beta, commanded.gamma
        if spec.bldc_error_pct is not None:
            w_target = w_target * (1.0 + _signed_uniform(self.rng, spec.bldc_error_pct, 4))
        if spec.servo_error_pct is not None:
            b_target = b_target * (1.0 + _signed_uniform(self.rng, spec.servo_error_pct, 4))
            g_target = g_target * (1.0 + _signed_uniform(self.rng, spec.servo_error_pct, 4))
        self.omega = np.maximum(self._lag(self.omega, w_target, spec.bldc_time_constant, dt), 0.0)
        lim = self.angle_limit
        self.beta = np.clip(self._servo(self.beta, b_target, dt), -lim, lim)
        self.gamma = np.clip(self._servo(self.gamma, g_target, dt), -lim, lim)
        return ActuatorCommand(self.omega.copy(), self.beta.copy(), self.gamma.copy())


class DisturbanceModel:
    """Horizontal disturbance accelerations ``(xi_X g, xi_Y g, 0, 0, 0, 0)``.

    Random mode draws |xi| uniformly from ``disturbance_range`` with independent
    signs and holds each draw for one period of ``disturbance_rate``.
    """

    def __init__(self, spec: UncertaintySpec, rng: np.random.Generator, g: float):
        self.spec = spec
        self.rng = rng
        self.g = g
        self._window = None
        self._value = np.zeros(6)
        if spec.disturbance == "constant":
            xi_x, xi_y = spec.constant_disturbance
            self._value = np.array([xi_x * g, xi_y * g, 0.0, 0.0, 0.0, 0.0])

    def accel(self, t: float) -> np.ndarray:
        if self.spec.disturbance != "random":
            return self._value.copy()
        window = math.floor(t * self.spec.disturbance_rate + 1e-9)
        if window != self._window:
            self._window = window
            lo, hi = self.spec.disturbance_range
            mag = self.rng.uniform(lo, hi, 2)
            sign = np.where(self.rng.random(2) < 0.5, -1.0, 1.0)
            xi = sign * mag
            self._value = np.array([xi[0] * self.g, xi[1] * self.g, 0.0, 0.0, 0.0, 0.0])
        return self._value.copy()
