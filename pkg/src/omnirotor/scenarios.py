"""Reference maneuvers, the fixed-step closed-loop simulation and its log."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from omnirotor.allocation import HALF_TILT_EXPLANATION, RankDeficiencyError
from omnirotor.configuration import (
    DEFAULT_ANGLE_LIMIT,
    NOMINAL_PARAMS,
    ConfigId,
    VehicleParams,
    constant_allocation_matrix,
)
from omnirotor.controllers import ControllerModel, Reference, make_controller
from omnirotor.dynamics import (
    OMEGA_MAX,
    ActuatorCommand,
    ActuatorModel,
    DisturbanceModel,
    UncertaintySpec,
    gyro_momentum,
    perturbed_params,
    state_rates,
    virtual_from_actual,
)
from omnirotor.kinematics import GimbalLockError

log = logging.getLogger(__name__)

DIVERGENCE_RADIUS = 100.0


class SimulationError(RuntimeError):
    """A run was aborted; ``time`` is the simulation time of the failure."""

    def __init__(self, message: str, time: float = float("nan")):
        self.time = time
        super().__init__(message)


class DivergenceError(SimulationError):
    pass


class ManeuverId(enum.Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"
    M4 = "m4"
    HOVER = "hover"

    @classmethod
    def parse(cls, text) -> "ManeuverId":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        key = {"1": "m1", "2": "m2", "3": "m3", "4": "m4"}.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown maneuver {text!r}; expected m1..m4 or hover")


_DEG = math.pi / 180.0
HELIX_RADIUS = 2.0
HELIX_HEIGHT = 3.0
HELIX_PERIOD = 30.0


def _sin_channel(amp: float, freq: float, t: float, offset: float = 0.0):
    s, c = math.sin(freq * t), math.cos(freq * t)
    return offset + amp * s, amp * freq * c, -amp * freq * freq * s


def maneuver_reference(maneuver: ManeuverId, t: float) -> Reference:
    """Desired generalized coordinates and their first two time derivatives."""
    if t < 0:
        raise ValueError("t must be non-negative")
    maneuver = ManeuverId.parse(maneuver)
    pos, vel, acc = np.zeros(6), np.zeros(6), np.zeros(6)
    if maneuver is ManeuverId.M1:
        for i in (0, 1):
            pos[i], vel[i], acc[i] = _sin_channel(1.0, 0.4, t)
        pos[2] = 2.0
    elif maneuver is ManeuverId.M2:
        pos[:] = [0.0, 0.0, 2.0, 20 * _DEG, 25 * _DEG, 90 * _DEG]
    elif maneuver is ManeuverId.M3:
        for i in (0, 1, 2):
            pos[i], vel[i], acc[i] = _sin_channel(1.0, 0.4, t)
        for i in (3, 4, 5):
            pos[i], vel[i], acc[i] = _sin_channel(20 * _DEG, 0.3, t)
    elif maneuver is ManeuverId.M4:
        w = 2 * math.pi / HELIX_PERIOD
        r = HELIX_RADIUS
        c, s = math.cos(w * t), math.sin(w * t)
        pos[0:3] = [r * c, r * s, HELIX_HEIGHT * t / HELIX_PERIOD]
        vel[0:3] = [-r * w * s, r * w * c, HELIX_HEIGHT / HELIX_PERIOD]
        acc[0:3] = [-r * w * w * c, -r * w * w * s, 0.0]
        pos[3], vel[3], acc[3] = _sin_channel(30 * _DEG, 0.3, t)
        # heading at the helix axis: atan2(-Y, -X), unwrapped
        pos[5], vel[5] = w * t + math.pi, w
    else:
        pos[2] = 2.0
    return Reference(pos, vel, acc)


def initial_state(maneuver: ManeuverId) -> np.ndarray:
    """Reference pose and rates at t=0; maneuver 2 starts level so the attitude step is flown.

    Starting at rest instead puts a 0.4 m/s velocity step on the sinusoidal
    maneuvers, which the rate-limited servos cannot follow.
    """
    maneuver = ManeuverId.parse(maneuver)
    ref = maneuver_reference(maneuver, 0.0)
    x = np.concatenate([ref.pos, ref.vel])
    if maneuver is ManeuverId.M2:
        x[3:6] = 0.0
    return x


def rk4_step(x: np.ndarray, dt: float, f: Callable, t: float = 0.0) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of ``x' = f(t, x)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"non-finite state after RK4 step at t={t + dt:.4f}", t + dt)
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    config: ConfigId = ConfigId.HEDRAL
    controller: str = "smc"
    maneuver: ManeuverId = ManeuverId.M1
    gains: object = None
    params: VehicleParams = NOMINAL_PARAMS
    uncertainty: Optional[UncertaintySpec] = None
    duration: float = 30.0
    dt: float = 1e-3
    log_rate: float = 200.0
    seed: int = 42
    omega_max: float = OMEGA_MAX
    angle_limit: float = DEFAULT_ANGLE_LIMIT
    x0: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "config", ConfigId.parse(self.config))
        object.__setattr__(self, "maneuver", ManeuverId.parse(self.maneuver))
        object.__setattr__(self, "controller", str(self.controller).lower())
        if self.controller not in ("smc", "pid"):
            raise ValueError(f"controller must be 'smc' or 'pid', got {self.controller!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.log_rate > 0:
            raise ValueError("log_rate must be positive")

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def controller_params(self) -> VehicleParams:
        if self.uncertainty is not None and self.uncertainty.controller_e is not None:
            return replace(self.params, e=self.uncertainty.controller_e)
        return self.params

    def plant_params(self) -> VehicleParams:
        if self.uncertainty is None:
            return self.params
        return perturbed_params(self.params, self.uncertainty)


@dataclass
class SimLog:
    """Uniformly sampled record of one run (SI units, radians)."""

    config: ConfigId
    t: np.ndarray
    state: np.ndarray  # (N, 12)
    reference: np.ndarray  # (N, 6)
    omega: np.ndarray  # (N, 4) applied rotor speeds
    beta: np.ndarray  # (N, 4)
    gamma: np.ndarray  # (N, 4)
    v_norm: np.ndarray  # (N,)
    disturbance: np.ndarray  # (N, 2)
    sat_flags: np.ndarray  # (N,) int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    @property
    def tracking_error(self) -> np.ndarray:
        return self.state[:, 0:6] - self.reference

    @property
    def columns(self) -> list:
        cols = ["t", "X", "Y", "Z", "phi", "theta", "psi"]
        cols += ["Xd", "Yd", "Zd", "phid", "thetad", "psid"]
        cols += [f"w{i}" for i in range(1, 5)] + [f"beta{i}" for i in range(1, 5)]
        if self.config.has_gamma:
            cols += [f"gamma{i}" for i in range(1, 5)]
        return cols + ["dist_x", "dist_y", "sat_flags"]

    def rows(self):
        for k in range(len(self.t)):
            row = [self.t[k], *self.state[k, 0:6], *self.reference[k], *self.omega[k], *self.beta[k]]
            if self.config.has_gamma:
                row += list(self.gamma[k])
            row += [*self.disturbance[k]]
            yield [repr(float(x)) for x in row] + [str(int(self.sat_flags[k]))]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            writer.writerows(self.rows())
        return path

    def saturation_counts(self) -> dict:
        from omnirotor.controllers import SAT_INTEGRAL, SAT_OMEGA, SAT_TILT

        flags = self.sat_flags.astype(int)
        return {
            "omega": int(np.count_nonzero(flags & SAT_OMEGA)),
            "tilt": int(np.count_nonzero(flags & SAT_TILT)),
            "integral": int(np.count_nonzero(flags & SAT_INTEGRAL)),
        }


def check_allocatable(config: ConfigId, params: VehicleParams) -> None:
    alloc = constant_allocation_matrix(config, params)
    if not alloc.full_rank:
        detail = HALF_TILT_EXPLANATION if config is ConfigId.HALF_TILT else ""
        raise RankDeficiencyError(alloc.rank, 6, detail)


def run_simulation(spec: ScenarioSpec, reference: Optional[Callable] = None) -> SimLog:
    """Closed-loop run: controller at 1/dt Hz with zero-order hold, RK4 plant.

    ``reference`` overrides the maneuver's reference generator (``t -> Reference``).
    """
    config = spec.config
    check_allocatable(config, spec.controller_params())
    ref_fn = reference or (lambda t: maneuver_reference(spec.maneuver, t))
    model = ControllerModel(spec.controller_params(), config)
    controller = make_controller(
        spec.controller, model, spec.gains, omega_max=spec.omega_max, angle_limit=spec.angle_limit
    )
    plant = spec.plant_params()
    unc = spec.uncertainty
    seeds = np.random.SeedSequence(spec.seed).spawn(2)
    actuators = disturbances = None
    if unc is not None and not unc.actuators_ideal:
        actuators = ActuatorModel(
            unc, np.random.default_rng(seeds[0]), ActuatorCommand.hover(plant), spec.angle_limit
        )
    if unc is not None and unc.disturbance != "off":
        disturbances = DisturbanceModel(unc, np.random.default_rng(seeds[1]), plant.g)
    rotor_inertia = unc.rotor_inertia if unc is not None else 0.0
    plant_G_b = constant_allocation_matrix(config, plant).matrix

    dt = spec.dt
    n_steps = int(round(spec.duration / dt))
    log_every = max(1, int(round(1.0 / (spec.log_rate * dt))))
    n_log = n_steps // log_every + 1
    x = np.asarray(spec.x0, dtype=float) if spec.x0 is not None else initial_state(spec.maneuver)
    nv = config.n_virtual

    out = SimLog(
        config=config,
        t=np.zeros(n_log),
        state=np.zeros((n_log, 12)),
        reference=np.zeros((n_log, 6)),
        omega=np.zeros((n_log, 4)),
        beta=np.zeros((n_log, 4)),
        gamma=np.zeros((n_log, 4)),
        v_norm=np.zeros(n_log),
        disturbance=np.zeros((n_log, 2)),
        sat_flags=np.zeros(n_log, dtype=int),
        meta={"spec": spec},
    )
    zero6 = np.zeros(6)
    row = 0
    t = 0.0
    for k in range(n_steps + 1):
        t = k * dt
        ref = ref_fn(t)
        try:
            cmd, flags = controller.command(x, ref, dt)
        except GimbalLockError as exc:
            raise SimulationError(f"gimbal proximity at t={t:.3f}: {exc}", t) from exc
        applied = actuators.step(cmd, dt) if actuators is not None else cmd
        dist = disturbances.accel(t) if disturbances is not None else zero6
        if k % log_every == 0 and row < n_log:
            out.t[row] = t
            out.state[row] = x
            out.reference[row] = ref.pos
            out.omega[row] = applied.omega
            out.beta[row] = applied.beta
            out.gamma[row] = applied.gamma
            out.v_norm[row] = float(np.linalg.norm(controller.last_v)) if nv else 0.0
            out.disturbance[row] = dist[0:2]
            out.sat_flags[row] = flags
            row += 1
        if k == n_steps:
            break
        # G_b @ v equals the summed rotor wrench (checked by the verify suite) and is cheaper
        wrench = plant_G_b @ virtual_from_actual(applied, config)
        force, moment = wrench[0:3], wrench[3:6]
        h = gyro_momentum(config, applied, rotor_inertia) if rotor_inertia else None
        d = dist if disturbances is not None else None

        def f(_t, y):
            return state_rates(y, force, moment, plant, h, d)

        try:
            x = rk4_step(x, dt, f, t)
        except GimbalLockError as exc:
            raise SimulationError(f"gimbal proximity at t={t:.3f}: {exc}", t) from exc
        if np.linalg.norm(x[0:3]) > DIVERGENCE_RADIUS:
            raise DivergenceError(
                f"position left the {DIVERGENCE_RADIUS:g} m ball at t={t + dt:.3f} s", t + dt
            )
    return out
