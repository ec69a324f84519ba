"""Rotor-tilt configurations: per-rotor frames, geometry and constant allocation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from omnirotor.kinematics import elementary_rotation

#: Default bound on |beta| and |gamma|; the recovery arctangents degenerate at pi/2.
DEFAULT_ANGLE_LIMIT = math.pi / 2 - 0.01

#: Relative singular-value threshold used for every numerical rank decision.
RANK_RTOL = 1e-9


class ConfigId(enum.Enum):
    HEDRAL = "hedral"
    TILT = "tilt"
    HALF_TILT = "half-tilt"
    TILT_HEDRAL = "tilt-hedral"

    @classmethod
    def parse(cls, text: "str | ConfigId") -> "ConfigId":
        """Case-insensitive lookup; accepts 'half-tilt', 'half_tilt', 'HalfTilt'."""
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        aliases = {"halftilt": "half-tilt", "tilthedral": "tilt-hedral"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(
            f"unknown configuration {text!r}; expected one of "
            + ", ".join(m.value for m in cls)
        )

    @property
    def n_virtual(self) -> int:
        return 12 if self is ConfigId.TILT_HEDRAL else 8

    @property
    def has_gamma(self) -> bool:
        return self is ConfigId.TILT_HEDRAL


@dataclass(frozen=True)
class VehicleParams:
    """Physical model. Inertia is diagonal: ``inertia = (Ixx, Iyy, Izz)``."""

    m: float = 1.0
    inertia: tuple = (10e-3, 10e-3, 17e-3)
    l: float = 0.3
    e: float = 0.05
    k_f: float = 6e-6
    k_m: float = 4e-7
    g: float = 9.81

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(x) for x in self.inertia))
        if len(self.inertia) != 3:
            raise ValueError("inertia must have three diagonal entries")
        for name in ("m", "l", "k_f", "k_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if min(self.inertia) <= 0:
            raise ValueError("inertia entries must be positive")

    @property
    def J(self) -> np.ndarray:
        return np.diag(self.inertia)

    def with_(self, **changes) -> "VehicleParams":
        return replace(self, **changes)


NOMINAL_PARAMS = VehicleParams()


class RotorGeometry(NamedTuple):
    offset: np.ndarray  # CoG -> rotor, body frame, m
    spin_sign: int  # sign of the drag torque along z_n


_OFFSET_UNITS = ((1.0, 0.0), (-1.0, 0.0), (0.0, -1.0), (0.0, 1.0))
_SPIN_SIGNS = (-1, 1, -1, 1)


def _check_rotor(n: int) -> None:
    if n not in (1, 2, 3, 4):
        raise IndexError(f"rotor index must be 1..4, got {n}")


def rotor_geometry(n: int, params: VehicleParams = NOMINAL_PARAMS) -> RotorGeometry:
    _check_rotor(n)
    ux, uy = _OFFSET_UNITS[n - 1]
    return RotorGeometry(
        np.array([ux * params.l, uy * params.l, params.e]), _SPIN_SIGNS[n - 1]
    )


def rotor_offsets(params: VehicleParams) -> np.ndarray:
    """3x4 matrix whose columns are the rotor offsets."""
    units = np.array(_OFFSET_UNITS).T
    return np.vstack([units * params.l, np.full(4, params.e)])


def spin_signs() -> np.ndarray:
    return np.array(_SPIN_SIGNS, dtype=float)


@dataclass(frozen=True)
class TiltAngles:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(4))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).reshape(4))
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.gamma))):
            raise ValueError("tilt angles must be finite")

    def check_limits(self, limit: float = DEFAULT_ANGLE_LIMIT) -> None:
        worst = max(np.max(np.abs(self.beta)), np.max(np.abs(self.gamma)))
        if worst > limit:
            raise ValueError(f"tilt angle {worst:.6f} rad exceeds limit {limit:.6f} rad")


# axis of the single tilt rotation for the four-servo layouts, rotors 1..4
_TILT_AXES = {
    ConfigId.HEDRAL: ("y", "y", "x", "x"),
    ConfigId.TILT: ("x", "x", "y", "y"),
    ConfigId.HALF_TILT: ("x", "x", "x", "x"),
}
# (beta axis, gamma axis) per rotor; gamma is applied first
_TILT_HEDRAL_AXES = (("y", "x"), ("y", "x"), ("x", "y"), ("x", "y"))


def rotor_frame_rotation(
    config: ConfigId,
    n: int,
    tilt: TiltAngles,
    angle_limit: float = DEFAULT_ANGLE_LIMIT,
) -> np.ndarray:
    """Passive rotation R_n taking body coordinates to rotor-n coordinates."""
    _check_rotor(n)
    tilt.check_limits(angle_limit)
    config = ConfigId.parse(config)
    beta = tilt.beta[n - 1]
    if config is ConfigId.TILT_HEDRAL:
        beta_axis, gamma_axis = _TILT_HEDRAL_AXES[n - 1]
        return elementary_rotation(beta_axis, beta) @ elementary_rotation(
            gamma_axis, tilt.gamma[n - 1]
        )
    return elementary_rotation(_TILT_AXES[config][n - 1], beta)


@dataclass(frozen=True)
class AllocationMatrixConst:
    matrix: np.ndarray
    rank: int

    @property
    def full_rank(self) -> bool:
        return self.rank == 6


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def constant_allocation_matrix(
    config: ConfigId, params: VehicleParams = NOMINAL_PARAMS
) -> AllocationMatrixConst:
    """Body-frame wrench per unit virtual input: wrench_B = G_b @ v."""
    config = ConfigId.parse(config)
    kf, km, l, e = params.k_f, params.k_m, params.l, params.e
    lk, ek = l * kf, e * kf
    if config is ConfigId.HEDRAL:
        G = [
            [kf, kf, 0, 0, 0, 0, 0, 0],
            [0, 0, -kf, -kf, 0, 0, 0, 0],
            [0, 0, 0, 0, kf, kf, kf, kf],
            [-km, km, ek, ek, 0, 0, -lk, lk],
            [ek, ek, km, -km, -lk, lk, 0, 0],
            [0, 0, 0, 0, -km, km, -km, km],
        ]
    elif config is ConfigId.TILT:
        G = [
            [0, 0, kf, kf, 0, 0, 0, 0],
            [-kf, -kf, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, kf, kf, kf, kf],
            [ek, ek, -km, km, 0, 0, -lk, lk],
            [km, -km, ek, ek, -lk, lk, 0, 0],
            [-lk, lk, lk, -lk, -km, km, -km, km],
        ]
    elif config is ConfigId.TILT_HEDRAL:
        G = [
            [kf, kf, 0, 0, 0, 0, kf, kf, 0, 0, 0, 0],
            [0, 0, -kf, -kf, -kf, -kf, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, 0, 0, kf, kf, kf, kf],
            [-km, km, ek, ek, ek, ek, -km, km, 0, 0, -lk, lk],
            [ek, ek, km, -km, km, -km, ek, ek, -lk, lk, 0, 0],
            [0, 0, 0, 0, -lk, lk, lk, -lk, -km, km, -km, km],
        ]
    else:
        # every thrust vector turns about body x only, so body-x force is never produced
        G = [
            [0, 0, 0, 0, 0, 0, 0, 0],
            [-kf, -kf, -kf, -kf, 0, 0, 0, 0],
            [0, 0, 0, 0, kf, kf, kf, kf],
            [ek, ek, ek, ek, 0, 0, -lk, lk],
            [km, -km, km, -km, -lk, lk, 0, 0],
            [-lk, lk, 0, 0, -km, km, -km, km],
        ]
    M = np.array(G, dtype=float)
    return AllocationMatrixConst(M, numerical_rank(M))
