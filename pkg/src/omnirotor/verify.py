"""Cross-module numerical checks run by ``omnirotor verify``.

Each check returns a :class:`CheckResult`; the worst observed error is
compared with a tolerance multiplied by ``tolerance_scale``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from omnirotor.allocation import actual_from_virtual, min_norm_solve
from omnirotor.configuration import NOMINAL_PARAMS, ConfigId, constant_allocation_matrix
from omnirotor.dynamics import (
    ActuatorCommand,
    accelerations,
    affine_decompose,
    body_wrench,
    virtual_from_actual,
)
from omnirotor.kinematics import body_angular_velocity, inertial_to_body
from omnirotor.scenarios import ManeuverId, maneuver_reference, rk4_step

FULL_RANK = (ConfigId.HEDRAL, ConfigId.TILT, ConfigId.TILT_HEDRAL)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""


def random_state(rng: np.random.Generator, max_pitch: float = 1.2) -> np.ndarray:
    x = rng.normal(size=12)
    x[3] = rng.uniform(-math.pi, math.pi)
    x[4] = rng.uniform(-max_pitch, max_pitch)
    x[5] = rng.uniform(-math.pi, math.pi)
    return x


def random_command(rng: np.random.Generator, config: ConfigId, limit: float = 1.4) -> ActuatorCommand:
    gamma = rng.uniform(-limit, limit, 4) if config.has_gamma else np.zeros(4)
    return ActuatorCommand(rng.uniform(50.0, 1500.0, 4), rng.uniform(-limit, limit, 4), gamma)


def affine_exactness(n: int = 1000, seed: int = 0) -> float:
    """Worst |accelerations(state, wrench(u)) - (b + G v(u))| over random samples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for config in FULL_RANK:
        for _ in range(n):
            x = random_state(rng)
            u = random_command(rng, config)
            w = body_wrench(config, NOMINAL_PARAMS, u)
            direct = accelerations(x, w[:3], w[3:], NOMINAL_PARAMS)
            b, G = affine_decompose(x, config, NOMINAL_PARAMS)
            recon = b + G @ virtual_from_actual(u, config)
            scale = max(1.0, float(np.max(np.abs(direct))))
            worst = max(worst, float(np.max(np.abs(direct - recon))) / scale)
    return worst


def probed_allocation(config: ConfigId, params=NOMINAL_PARAMS) -> np.ndarray:
    """Body-wrench Jacobian with respect to the virtual input, probed column by column."""
    n = config.n_virtual
    return np.column_stack([body_wrench(config, params, np.eye(n)[i]) for i in range(n)])


def allocation_probe_error() -> float:
    worst = 0.0
    for config in FULL_RANK:
        constant = constant_allocation_matrix(config, NOMINAL_PARAMS).matrix
        worst = max(worst, float(np.max(np.abs(probed_allocation(config) - constant))))
    return worst


def hover_residual() -> float:
    """Largest generalized acceleration at the level hover command."""
    u = ActuatorCommand.hover(NOMINAL_PARAMS)
    x = np.zeros(12)
    worst = 0.0
    for config in FULL_RANK:
        w = body_wrench(config, NOMINAL_PARAMS, u)
        worst = max(worst, float(np.max(np.abs(accelerations(x, w[:3], w[3:], NOMINAL_PARAMS)))))
    return worst


def conservation_drift(duration: float = 10.0, dt: float = 1e-3) -> float:
    """Relative drift of kinetic energy and inertial angular momentum, torque-free."""
    params = NOMINAL_PARAMS
    J = params.J
    x = np.zeros(12)
    x[3:6] = (0.2, -0.3, 0.5)
    x[9:12] = (0.7, -0.4, 1.1)
    zero = np.zeros(3)

    def invariants(y):
        w = body_angular_velocity(y[3:6], y[9:12])
        h_body = J @ w
        return 0.5 * w @ h_body, inertial_to_body(y[3:6]).T @ h_body

    def f(_t, y):
        return np.concatenate([y[6:12], accelerations(y, zero, zero, params)])

    e0, h0 = invariants(x)
    for k in range(int(round(duration / dt))):
        x = rk4_step(x, dt, f, k * dt)
    e1, h1 = invariants(x)
    return max(abs(e1 - e0) / abs(e0), float(np.linalg.norm(h1 - h0) / np.linalg.norm(h0)))


def round_trip_error(n: int = 1000, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for config in FULL_RANK:
        for _ in range(n):
            u = random_command(rng, config)
            back = actual_from_virtual(virtual_from_actual(u, config), config)
            for a, b in ((u.omega, back.omega), (u.beta, back.beta), (u.gamma, back.gamma)):
                worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))))
    return worst


def allocation_optimality(n: int = 100, perturbations: int = 50, seed: int = 2) -> float:
    """Relative mismatch against the SVD pseudoinverse; inf if a null-space move is shorter."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        cols = int(rng.integers(7, 13))
        G = rng.normal(size=(6, cols))
        w = rng.normal(size=6)
        v = min_norm_solve(G, w)
        oracle = np.linalg.pinv(G) @ w
        worst = max(worst, float(np.linalg.norm(v - oracle) / np.linalg.norm(oracle)))
        _, _, vt = np.linalg.svd(G)
        null = vt[6:].T
        for _ in range(perturbations):
            alt = v + null @ rng.normal(size=null.shape[1])
            if np.linalg.norm(alt) <= np.linalg.norm(v):
                return math.inf
    return worst


def rk4_errors() -> tuple:
    """(error at t=1 for dt=0.01, error ratio dt=0.02 over dt=0.01) on x' = -x."""

    def integrate(dt):
        x = np.array([1.0])
        for k in range(int(round(1.0 / dt))):
            x = rk4_step(x, dt, lambda _t, y: -y, k * dt)
        return abs(x[0] - math.exp(-1.0))

    e1, e2 = integrate(0.01), integrate(0.02)
    return float(e1), float(e2 / e1)


def reference_derivative_error(samples: int = 100, h: float = 1e-5, seed: int = 3) -> float:
    """Worst central-difference mismatch of the analytic reference derivatives."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for maneuver in ManeuverId:
        for t in rng.uniform(h, 60.0, samples):
            lo, mid, hi = (maneuver_reference(maneuver, s) for s in (t - h, t, t + h))
            vel = (hi.pos - lo.pos) / (2 * h)
            acc = (hi.vel - lo.vel) / (2 * h)
            worst = max(worst, float(np.max(np.abs(vel - mid.vel))), float(np.max(np.abs(acc - mid.acc))))
    return worst


def _timed(name: str, fn: Callable[[], float], tol: float, scale: float) -> CheckResult:
    start = time.perf_counter()
    err = fn()
    limit = tol * scale
    return CheckResult(name, bool(err < limit), err, limit, time.perf_counter() - start)


def run_checks(tolerance_scale: float = 1.0) -> List[CheckResult]:
    """Run every invariant check; ``tolerance_scale`` multiplies each tolerance."""
    if not tolerance_scale > 0:
        raise ValueError("tolerance_scale must be positive")
    s = tolerance_scale
    results = [
        _timed("affine-exactness", affine_exactness, 1e-10, s),
        _timed("allocation-probe", allocation_probe_error, 1e-10, s),
    ]
    start = time.perf_counter()
    rank = constant_allocation_matrix(ConfigId.HALF_TILT).rank
    results.append(
        CheckResult("half-tilt-rank", rank == 5, float(rank), 5.0, time.perf_counter() - start,
                    "numerical rank of the Half-Tilt allocation matrix")
    )
    results += [
        _timed("hover-fixed-point", hover_residual, 1e-9, s),
        _timed("conservation", conservation_drift, 1e-6, s),
        _timed("round-trip", round_trip_error, 1e-9, s),
        _timed("allocation-optimality", allocation_optimality, 1e-8, s),
        _timed("reference-derivatives", reference_derivative_error, 1e-6, s),
    ]
    start = time.perf_counter()
    err, ratio = rk4_errors()
    results.append(
        CheckResult(
            "rk4-order",
            bool(err < 1e-9 * s and 12.0 < ratio < 20.0),
            err,
            1e-9 * s,
            time.perf_counter() - start,
            f"halving dt divides the error by {ratio:.2f}",
        )
    )
    return results
