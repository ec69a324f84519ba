"""Sliding mode and PID-with-gravity-compensation controllers.

Both controllers only ever see the parameters held in their
:class:`ControllerModel`; the truth plant may differ.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple, Optional

import numpy as np

from omnirotor.allocation import ConstantAllocator, actual_from_virtual, min_norm_solve
from omnirotor.configuration import (
    DEFAULT_ANGLE_LIMIT,
    ConfigId,
    VehicleParams,
    constant_allocation_matrix,
)
from omnirotor.dynamics import OMEGA_MAX, ActuatorCommand, accelerations, affine_decompose
from omnirotor.kinematics import elementary_rotation, inertial_to_body, rate_matrix

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SAT_OMEGA = 1
SAT_TILT = 2
SAT_INTEGRAL = 4

_ZERO3 = np.zeros(3)


class Reference(NamedTuple):
    pos: np.ndarray  # (X, Y, Z, phi, theta, psi) desired
    vel: np.ndarray
    acc: np.ndarray


def _vec6(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(6, float(arr))
    if arr.shape != (6,):
        raise ValueError(f"{name} must have 6 elements, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SmcGains:
    lam: np.ndarray = field(default_factory=lambda: np.full(6, 2.0))
    k: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 5.0, 8.0, 8.0, 8.0]))
    sigma: np.ndarray = field(default_factory=lambda: np.full(6, 10.0))

    def __post_init__(self):
        for name in ("lam", "k", "sigma"):
            arr = _vec6(getattr(self, name), name)
            if np.any(arr <= 0):
                raise ValueError(f"SMC gain {name} must be strictly positive")
            object.__setattr__(self, name, arr)

    def scaled(self, factor: float) -> "SmcGains":
        """Same gains with the robustness vector ``k`` multiplied by ``factor``."""
        return replace(self, k=self.k * factor)


@dataclass(frozen=True)
class PidGains:
    k_p: np.ndarray
    k_d: np.ndarray
    k_i: np.ndarray
    integral_limit: np.ndarray = field(default_factory=lambda: np.full(6, 2.0))

    def __post_init__(self):
        for name in ("k_p", "k_d", "k_i", "integral_limit"):
            arr = _vec6(getattr(self, name), name)
            if np.any(arr < 0):
                raise ValueError(f"PID gain {name} must be non-negative")
            object.__setattr__(self, name, arr)
        if np.any(self.integral_limit <= 0):
            raise ValueError("integral_limit must be positive")


@dataclass(frozen=True)
class ControllerModel:
    """What the controller believes about the vehicle."""

    params: VehicleParams
    config: ConfigId


def _load_gain_table() -> dict:
    text = resources.files("omnirotor").joinpath("data/default_gains.toml").read_text()
    return tomllib.loads(text)


def default_gains(controller: str, config: ConfigId, params: Optional[VehicleParams] = None):
    """Shipped gain set for a (controller, configuration) pair.

    Translational PID gains in the table are per unit mass and rotational
    ones per unit inertia; they are scaled by ``params`` here.
    """
    config = ConfigId.parse(config)
    table = _load_gain_table()
    if controller not in ("smc", "pid"):
        raise ValueError(f"unknown controller {controller!r}")
    entry = dict(table[controller]["default"])
    entry.update(table[controller].get(config.value, {}))
    if controller == "smc":
        return SmcGains(entry["lam"], entry["k"], entry["sigma"])
    params = params or VehicleParams()
    scale = np.array([params.m] * 3 + list(params.inertia))
    return PidGains(
        np.asarray(entry["k_p"]) * scale,
        np.asarray(entry["k_d"]) * scale,
        np.asarray(entry["k_i"]) * scale,
        entry["integral_limit"],
    )


def saturate(
    command: ActuatorCommand, omega_max: float = OMEGA_MAX, angle_limit: float = DEFAULT_ANGLE_LIMIT
) -> tuple:
    """Clip a command to actuator limits; returns ``(command, flags)``."""
    flags = 0
    omega, beta, gamma = command.omega, command.beta, command.gamma
    if omega.max() > omega_max:
        flags |= SAT_OMEGA
        omega = np.minimum(omega, omega_max)
    if max(np.abs(beta).max(), np.abs(gamma).max()) > angle_limit:
        flags |= SAT_TILT
        beta = np.clip(beta, -angle_limit, angle_limit)
        gamma = np.clip(gamma, -angle_limit, angle_limit)
    if flags:
        log.debug("actuator saturation (flags=%d)", flags)
        command = ActuatorCommand(omega, beta, gamma)
    return command, flags


def _split_state(state):
    x = np.asarray(state.to_vector() if hasattr(state, "to_vector") else state, dtype=float)
    return x, x[0:6], x[6:12]


# ---------------------------------------------------------------------------
# sliding mode control


def sliding_surface(state, ref: Reference, lam) -> np.ndarray:
    """s = (x_dot - x_dot_d) + lam * (x - x_d), element-wise."""
    _, pos, vel = _split_state(state)
    return (vel - ref.vel) + np.asarray(lam) * (pos - ref.pos)


def smc_wrench(state, ref: Reference, gains: SmcGains, model: ControllerModel, G_b=None):
    """Right-hand side ``w`` of ``G v = w`` together with the affine pair."""
    x, _, vel = _split_state(state)
    b, G = affine_decompose(x, model.config, model.params, G_b)
    s = sliding_surface(x, ref, gains.lam)
    w = ref.acc + gains.lam * (ref.vel - vel) - b - gains.k * np.tanh(gains.sigma * s)
    return w, G, s


def smc_command(state, ref: Reference, gains: SmcGains, model: ControllerModel) -> ActuatorCommand:
    """Unsaturated SMC actuator command."""
    w, G, _ = smc_wrench(state, ref, gains, model)
    return actual_from_virtual(min_norm_solve(G, w), model.config)


class SlidingModeController:
    """Stateless SMC with per-step minimum-norm allocation.

    Since ``G = blockdiag(R.T / m, W^-1 J^-1) @ G_b`` with an invertible left
    factor, the minimum-norm solution of ``G v = w`` equals the minimum-norm
    solution of ``G_b v = blockdiag(m R, J W) @ w``. The controller uses that
    identity with ``G_b`` factorized once; ``factored=False`` solves with the
    full state-dependent ``G`` every step instead.
    """

    def __init__(
        self,
        model: ControllerModel,
        gains: SmcGains,
        omega_max: float = OMEGA_MAX,
        angle_limit: float = DEFAULT_ANGLE_LIMIT,
        factored: bool = True,
    ):
        self.model = model
        self.gains = gains
        self.omega_max = omega_max
        self.angle_limit = angle_limit
        self.factored = factored
        self._G_b = constant_allocation_matrix(model.config, model.params).matrix
        self.allocator = ConstantAllocator(self._G_b, model.config)
        self._inertia = np.asarray(model.params.inertia)
        self.last_w = np.zeros(6)
        self.last_s = np.zeros(6)
        self.last_v = np.zeros(model.config.n_virtual)

    def _virtual_wrench(self, x, ref: Reference):
        params = self.model.params
        vel = x[6:12]
        b = accelerations(x, _ZERO3, _ZERO3, params)
        s = (vel - ref.vel) + self.gains.lam * (x[0:6] - ref.pos)
        w = ref.acc + self.gains.lam * (ref.vel - vel) - b - self.gains.k * np.tanh(self.gains.sigma * s)
        return w, s

    def command(self, state, ref: Reference, dt: float = 0.0):
        x, _, _ = _split_state(state)
        if self.factored:
            w, s = self._virtual_wrench(x, ref)
            o = x[3:6]
            w_b = np.empty(6)
            w_b[0:3] = self.model.params.m * (inertial_to_body(o) @ w[0:3])
            w_b[3:6] = self._inertia * (rate_matrix(o) @ w[3:6])
            v = self.allocator.solve(w_b)
        else:
            w, G, s = smc_wrench(x, ref, self.gains, self.model, self._G_b)
            v = min_norm_solve(G, w)
        self.last_w, self.last_s, self.last_v = w, s, v
        cmd = actual_from_virtual(v, self.model.config)
        return saturate(cmd, self.omega_max, self.angle_limit)


# ---------------------------------------------------------------------------
# PID with gravity compensation


def gravity_compensation(angles, params: VehicleParams) -> np.ndarray:
    phi, theta = angles[0], angles[1]
    mg = params.m * params.g
    return np.array(
        [
            mg * math.sin(theta),
            -mg * math.cos(theta) * math.sin(phi),
            -mg * math.cos(theta) * math.cos(phi),
            0.0,
            0.0,
            0.0,
        ]
    )


def wrench_to_body(q, angles) -> np.ndarray:
    """Re-express the inertial/Euler-axis virtual wrench in body coordinates.

    Force goes through the full inertial-to-body rotation. The three moments
    are taken about x'', y' and Z and composed as
    ``R_x(phi) [Mx,0,0] + R_y(theta) R_x(phi) [0,My,0] + R [0,0,MZ]``.
    """
    q = np.asarray(q, dtype=float)
    phi, theta = angles[0], angles[1]
    R = inertial_to_body(angles)
    Rx = elementary_rotation("x", phi)
    Ry = elementary_rotation("y", theta)
    force = R @ q[0:3]
    moment = (
        Rx @ np.array([q[3], 0.0, 0.0])
        + Ry @ Rx @ np.array([0.0, q[4], 0.0])
        + R @ np.array([0.0, 0.0, q[5]])
    )
    return np.concatenate([force, moment])


def pid_virtual_wrench(error, error_rate, integral, gains: PidGains) -> np.ndarray:
    return gains.k_p * error + gains.k_d * error_rate + gains.k_i * integral


class PidController:
    """Six decoupled PID loops, gravity compensation, constant allocation.

    The allocation matrix is factorized once at construction; rank-deficient
    configurations fail here.
    """

    def __init__(
        self,
        model: ControllerModel,
        gains: PidGains,
        omega_max: float = OMEGA_MAX,
        angle_limit: float = DEFAULT_ANGLE_LIMIT,
    ):
        self.model = model
        self.gains = gains
        self.omega_max = omega_max
        self.angle_limit = angle_limit
        G_b = constant_allocation_matrix(model.config, model.params).matrix
        self.allocator = ConstantAllocator(G_b, model.config)
        self.integral = np.zeros(6)
        self._prev_error: Optional[np.ndarray] = None
        self.last_w = np.zeros(6)
        self.last_v = np.zeros(model.config.n_virtual)

    def reset(self) -> None:
        self.integral = np.zeros(6)
        self._prev_error = None

    def virtual_wrench(self, state, ref: Reference, dt: float) -> tuple:
        """Inertial-frame PID output ``q``; ``dt`` is the time since the previous call.

        Returns ``(q, integral_clamped)``.
        """
        _, pos, vel = _split_state(state)
        error = ref.pos - pos
        clamped = False
        if self._prev_error is not None and dt > 0:
            self.integral = self.integral + 0.5 * (self._prev_error + error) * dt
            lim = self.gains.integral_limit
            if np.any(np.abs(self.integral) > lim):
                clamped = True
                self.integral = np.clip(self.integral, -lim, lim)
                log.debug("PID integral clamped")
        self._prev_error = error
        q = pid_virtual_wrench(error, ref.vel - vel, self.integral, self.gains)
        return q, clamped

    def body_wrench_demand(self, state, q) -> np.ndarray:
        _, pos, _ = _split_state(state)
        angles = pos[3:6]
        return wrench_to_body(q, angles) - gravity_compensation(angles, self.model.params)

    def command(self, state, ref: Reference, dt: float):
        q, clamped = self.virtual_wrench(state, ref, dt)
        w_b = self.body_wrench_demand(state, q)
        v = self.allocator.solve(w_b)
        self.last_w, self.last_v = w_b, v
        cmd, flags = saturate(actual_from_virtual(v, self.model.config), self.omega_max, self.angle_limit)
        return cmd, flags | (SAT_INTEGRAL if clamped else 0)


def pid_command(state, ref: Reference, gains: PidGains, model: ControllerModel, dt: float = 0.0):
    """One-shot PID command with a fresh (zero) integral state."""
    ctrl = PidController(model, gains)
    x, pos, vel = _split_state(state)
    q = pid_virtual_wrench(ref.pos - pos, ref.vel - vel, np.zeros(6), gains)
    w_b = ctrl.body_wrench_demand(x, q)
    return actual_from_virtual(ctrl.allocator.solve(w_b), model.config)


def make_controller(kind: str, model: ControllerModel, gains=None, **limits):
    kind = kind.lower()
    if gains is None:
        gains = default_gains(kind, model.config, model.params)
    if kind == "smc":
        return SlidingModeController(model, gains, **limits)
    if kind == "pid":
        return PidController(model, gains, **limits)
    raise ValueError(f"unknown controller {kind!r}; expected 'smc' or 'pid'")
