"""Minimum-norm control allocation and recovery of actuator commands."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import scipy.linalg

from omnirotor.configuration import RANK_RTOL, ConfigId, numerical_rank
from omnirotor.dynamics import ActuatorCommand, virtual_from_actual

log = logging.getLogger(__name__)


class RankDeficiencyError(ValueError):
    """The allocation matrix cannot produce an arbitrary six-axis wrench."""

    def __init__(self, rank: int, rows: int = 6, detail: str = ""):
        self.rank = rank
        msg = f"allocation matrix is rank-deficient (rank {rank} < {rows})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


HALF_TILT_EXPLANATION = (
    "every thrust vector rotates about the body x axis only, so one pair of "
    "servos adds no independent actuation; pitch cannot be controlled "
    "independently of translation along x, and the vehicle stays under-actuated"
)


class TiltSaturationError(ValueError):
    """Recovered tilt angle falls outside the allowed range."""

    def __init__(self, rotor: int, angle: float, limit: float):
        self.rotor, self.angle, self.limit = rotor, angle, limit
        super().__init__(
            f"rotor {rotor}: recovered tilt {angle:.4f} rad exceeds limit {limit:.4f} rad"
        )


def min_norm_solve(G: np.ndarray, w: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """v = G.T (G G.T)^-1 w, the least-norm exact solution of ``G v = w``."""
    G = np.asarray(G, dtype=float)
    w = np.asarray(w, dtype=float)
    s = np.linalg.svd(G, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    if rank < G.shape[0]:
        raise RankDeficiencyError(rank, G.shape[0])
    if log.isEnabledFor(logging.DEBUG):
        log.debug("allocation cond(G G^T) = %.3e", (s[0] / s[-1]) ** 2)
    return G.T @ np.linalg.solve(G @ G.T, w)


class ConstantAllocator:
    """Minimum-norm allocation for a fixed matrix, factorized once."""

    def __init__(self, G: np.ndarray, config: Optional[ConfigId] = None, rtol: float = RANK_RTOL):
        self.G = np.array(G, dtype=float)
        rank = numerical_rank(self.G, rtol)
        if rank < self.G.shape[0]:
            detail = HALF_TILT_EXPLANATION if config is ConfigId.HALF_TILT else ""
            raise RankDeficiencyError(rank, self.G.shape[0], detail)
        self.factor = scipy.linalg.cho_factor(self.G @ self.G.T)
        # G.T (G G.T)^-1, formed once from the factorization
        self.pinv = self.G.T @ scipy.linalg.cho_solve(self.factor, np.eye(self.G.shape[0]))

    def solve(self, w: np.ndarray) -> np.ndarray:
        return self.pinv @ w


def actual_from_virtual(
    v, config: ConfigId, angle_limit: Optional[float] = None
) -> ActuatorCommand:
    """Invert the virtual-input map: rotor speeds and tilt angles.

    Angles use ``atan2`` with the cosine component second, so a negative
    cosine component shows up as |angle| > pi/2 instead of folding back.
    With ``angle_limit`` set, such angles raise :class:`TiltSaturationError`.
    A rotor whose components are all zero gets zero speed and zero angles.
    """
    config = ConfigId.parse(config)
    v = np.asarray(v, dtype=float)
    if v.shape != (config.n_virtual,):
        raise ValueError(f"{config.value} expects a virtual input of length {config.n_virtual}")
    a = v[0:4]
    if config.has_gamma:
        b, c = v[4:8], v[8:12]
        gamma = np.arctan2(b, c)
        beta = np.arctan2(a, np.hypot(b, c))
        omega = np.sqrt(np.sqrt(a * a + b * b + c * c))
    else:
        c = v[4:8]
        beta = np.arctan2(a, c)
        gamma = np.zeros(4)
        omega = np.sqrt(np.hypot(a, c))
    if angle_limit is not None:
        for name, angles in (("beta", beta), ("gamma", gamma)):
            bad = np.flatnonzero(np.abs(angles) > angle_limit)
            if bad.size:
                i = int(bad[0])
                raise TiltSaturationError(i + 1, float(angles[i]), angle_limit)
    return ActuatorCommand(omega, beta, gamma)


def recovery_residual(v, command: ActuatorCommand, config: ConfigId) -> float:
    """Relative mismatch between ``v`` and the virtual input of ``command``."""
    v = np.asarray(v, dtype=float)
    back = virtual_from_actual(command, config)
    return float(np.max(np.abs(back - v)) / max(1.0, np.max(np.abs(v))))


__all__ = [
    "ConstantAllocator",
    "HALF_TILT_EXPLANATION",
    "RankDeficiencyError",
    "TiltSaturationError",
    "actual_from_virtual",
    "min_norm_solve",
    "recovery_residual",
]
