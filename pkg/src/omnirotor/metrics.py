"""Power-consumption factors, comparison factor and the UIF gain search."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from omnirotor.configuration import VehicleParams
from omnirotor.controllers import SmcGains, default_gains
from omnirotor.dynamics import UncertaintySpec
from omnirotor.scenarios import ScenarioSpec, SimLog, SimulationError, run_simulation

log = logging.getLogger(__name__)


def _check_log(lg: SimLog) -> None:
    if lg is None or len(lg.t) == 0:
        raise ValueError("empty log")


def pcf(lg: SimLog) -> float:
    """Time average of sqrt(sum omega_n^4), trapezoidal over the log grid."""
    _check_log(lg)
    effort = np.sqrt(np.sum(lg.omega**4, axis=1))
    if len(lg.t) == 1 or lg.duration == 0:
        return float(effort[0])
    return float(np.trapezoid(effort, lg.t) / lg.duration)


def hover_speed(params: VehicleParams) -> float:
    """Rotor speed at level hover with untilted rotors."""
    if not params.k_f > 0:
        raise ValueError("k_f must be positive")
    return math.sqrt(params.m * params.g / (4.0 * params.k_f))


def npcf(lg: SimLog, params: VehicleParams) -> float:
    """PCF normalized by level-hover effort (1.0 at exact hover)."""
    return pcf(lg) * 2.0 * params.k_f / (params.m * params.g)


def cf(a: float, b: float) -> float:
    """Symmetric percentage difference of two NPCF values."""
    if not a + b > 0:
        raise ValueError("cf needs a positive sum")
    return 2.0 * abs(a - b) / (a + b) * 100.0


# ---------------------------------------------------------------------------
# tracking statistics


def final_third(lg: SimLog) -> slice:
    _check_log(lg)
    n = len(lg.t)
    return slice(n - max(1, n // 3), n)


def position_rms(lg: SimLog, window: Optional[slice] = None) -> float:
    """RMS of the position error norm, over the final third by default."""
    window = window or final_third(lg)
    err = lg.tracking_error[window, 0:3]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def attitude_rms(lg: SimLog, window: Optional[slice] = None) -> float:
    """RMS of the Euler-angle error norm (rad), over the final third by default."""
    window = window or final_third(lg)
    err = lg.tracking_error[window, 3:6]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def settling_time(lg: SimLog, band: float) -> float:
    """Time after which the position error norm stays within ``band``; 0 if always inside."""
    _check_log(lg)
    err = np.linalg.norm(lg.tracking_error[:, 0:3], axis=1)
    outside = np.flatnonzero(err > band)
    if outside.size == 0:
        return 0.0
    k = outside[-1]
    if k + 1 >= len(lg.t):
        return math.inf
    return float(lg.t[k + 1] - lg.t[0])


# ---------------------------------------------------------------------------
# UIF


@dataclass(frozen=True)
class TrackingThresholds:
    """Acceptance test for "closely matches the uncertainty-free response".

    Each limit is ``max(factor * baseline, floor)``. The floors stand in for a
    baseline that is numerically perfect: with an exact model the sliding mode
    controller tracks to a few micrometres, so a purely relative limit would
    reject any uncertainty at all.
    """

    rms_factor: float = 1.5
    settle_factor: float = 1.25
    position_floor: float = 1e-4  # m, 0.01 % of the 1 m maneuver amplitude
    attitude_floor: float = math.radians(20.0) * 1e-4  # rad, same fraction of 20 deg
    settle_band: float = 0.01  # m
    settle_floor: float = 0.5  # s

    def scaled(self, factor: float) -> "TrackingThresholds":
        """Loosen (factor > 1) or tighten every floor."""
        return replace(
            self,
            position_floor=self.position_floor * factor,
            attitude_floor=self.attitude_floor * factor,
            settle_floor=self.settle_floor * factor,
        )


@dataclass(frozen=True)
class TrackingStats:
    position_rms: float
    attitude_rms: float
    settling_time: float
    diverged: bool = False
    message: str = ""

    @classmethod
    def of(cls, lg: SimLog, band: float) -> "TrackingStats":
        return cls(position_rms(lg), attitude_rms(lg), settling_time(lg, band))

    @classmethod
    def failed(cls, message: str) -> "TrackingStats":
        return cls(math.inf, math.inf, math.inf, True, message)


@dataclass(frozen=True)
class Limits:
    position_rms: float
    attitude_rms: float
    settling_time: float

    @classmethod
    def from_baseline(cls, base: TrackingStats, th: TrackingThresholds) -> "Limits":
        return cls(
            max(th.rms_factor * base.position_rms, th.position_floor),
            max(th.rms_factor * base.attitude_rms, th.attitude_floor),
            max(th.settle_factor * base.settling_time, th.settle_floor),
        )

    def accepts(self, stats: TrackingStats) -> bool:
        return (
            not stats.diverged
            and stats.position_rms <= self.position_rms
            and stats.attitude_rms <= self.attitude_rms
            and stats.settling_time <= self.settling_time
        )


@dataclass(frozen=True)
class UifResult:
    value: float
    multiplier_nominal: float
    multiplier_uncertain: float
    k_nominal: float
    k_uncertain: float
    uncompensable: bool
    baseline: TrackingStats
    limits: Limits
    evaluations: dict = field(default_factory=dict)


def _evaluate(spec: ScenarioSpec, band: float) -> TrackingStats:
    try:
        lg = run_simulation(spec)
    except SimulationError as exc:
        return TrackingStats.failed(str(exc))
    stats = TrackingStats.of(lg, band)
    if not (math.isfinite(stats.position_rms) and math.isfinite(stats.attitude_rms)):
        return TrackingStats.failed("non-finite tracking error")
    return stats


def _min_multiplier(
    passes: Callable[[float], bool], bracket: tuple, iterations: int
) -> Optional[float]:
    """Smallest passing multiplier, or None if nothing in the bracket passes.

    Doubles upward from the bottom of the bracket and then bisects
    geometrically between the last failure and the first success. Scanning
    from below matters because very large gains make the discrete-time loop
    chatter, so the top of the bracket can fail while a middle value passes.
    """
    lo, hi = bracket
    if passes(lo):
        return lo
    fail, mult = lo, lo
    while True:
        mult = min(2.0 * mult, hi)
        if passes(mult):
            break
        if mult >= hi:
            return None
        fail = mult
    for _ in range(iterations):
        mid = math.sqrt(fail * mult)
        if passes(mid):
            mult = mid
        else:
            fail = mid
    return mult


def uif_search(
    base: ScenarioSpec,
    uncertainty: Optional[UncertaintySpec],
    thresholds: TrackingThresholds = TrackingThresholds(),
    iterations: int = 6,
    bracket: tuple = (1.0, 64.0),
) -> UifResult:
    """Ratio of the largest SMC robustness gain needed with and without ``uncertainty``.

    The whole ``k`` vector is scaled by one multiplier. The acceptance limits
    come from the uncertainty-free run at the base gains.
    """
    if base.controller != "smc":
        raise ValueError("UIF is defined on sliding mode gains; base.controller must be 'smc'")
    gains = base.gains if base.gains is not None else default_gains("smc", base.config)
    if not isinstance(gains, SmcGains):
        raise TypeError("base.gains must be SmcGains")
    nominal = base.with_(uncertainty=None, gains=gains)
    band = thresholds.settle_band
    baseline = _evaluate(nominal, band)
    if baseline.diverged:
        raise SimulationError(f"uncertainty-free baseline failed: {baseline.message}")
    limits = Limits.from_baseline(baseline, thresholds)
    evaluations: dict = {}

    def passes_with(unc):
        def passes(mult: float) -> bool:
            key = ("nominal" if unc is None else "uncertain", mult)
            if key not in evaluations:
                if unc is None and mult == 1.0:
                    evaluations[key] = baseline
                else:
                    spec = base.with_(uncertainty=unc, gains=gains.scaled(mult))
                    evaluations[key] = _evaluate(spec, band)
                log.debug("uif %s x%.4f -> %s", key[0], mult, evaluations[key])
            return limits.accepts(evaluations[key])

        return passes

    m_nom = _min_multiplier(passes_with(None), bracket, iterations)
    if m_nom is None:
        raise SimulationError("uncertainty-free run fails its own limits across the bracket")
    if uncertainty is None:
        m_unc = m_nom
    else:
        m_unc = _min_multiplier(passes_with(uncertainty), bracket, iterations)
    k0 = float(np.max(gains.k))
    if m_unc is None:
        top = bracket[1]
        return UifResult(top / m_nom, m_nom, top, k0 * m_nom, k0 * top, True, baseline, limits, evaluations)
    return UifResult(
        m_unc / m_nom, m_nom, m_unc, k0 * m_nom, k0 * m_unc, False, baseline, limits, evaluations
    )


# ---------------------------------------------------------------------------
# reference tables

#: Reference NPCF values on ideal maneuver 3: (controller, e) -> config -> value.
REFERENCE_NPCF = {
    ("smc", 0.0): {"hedral": 1.0546, "tilt": 1.0546, "tilt-hedral": 0.9999},
    ("smc", 0.05): {"hedral": 1.0580, "tilt": 1.0580, "tilt-hedral": 1.0028},
    ("pid", 0.0): {"hedral": 1.087, "tilt": 1.087, "tilt-hedral": 1.0428},
    ("pid", 0.05): {"hedral": 1.098, "tilt": 1.098, "tilt-hedral": 1.0477},
}
NPCF_TOLERANCE = 0.05


#: Propeller spin inertia used for the unmodeled gyroscopic case, kg m^2.
ROTOR_INERTIA = 5e-5


def _ideal_with(**changes) -> UncertaintySpec:
    return UncertaintySpec.ideal().with_(**changes)


#: Isolated uncertainty cases: name -> (uncertainty, reference band, acceptance band).
#: Acceptance bands only exist where a tolerance is committed to; None means report only.
UNCERTAINTY_CASES = {
    "random-disturbance": (lambda: _ideal_with(disturbance="random"), (5.0, 7.0), (4.0, 9.0)),
    "constant-disturbance": (lambda: _ideal_with(disturbance="constant"), (2.0, 2.0), None),
    "servo-error": (lambda: _ideal_with(servo_error_pct=(1.0, 5.0)), (3.0, 3.0), None),
    "bldc-error": (lambda: _ideal_with(bldc_error_pct=(4.0, 10.0)), (2.2, 2.2), None),
    "servo-delay": (
        lambda: _ideal_with(
            servo_time_constant=UncertaintySpec().servo_time_constant,
            servo_rate_limit=UncertaintySpec().servo_rate_limit,
        ),
        (2.5, 2.5),
        None,
    ),
    "bldc-delay": (lambda: _ideal_with(bldc_time_constant=1e-4), (1.7, 1.7), None),
    "mass": (lambda: _ideal_with(mass_scale=1.05), (1.2, 1.2), (0.0, 1.5)),
    "aero": (lambda: _ideal_with(aero_scale=0.9), (1.5, 1.5), None),
    "inertia": (lambda: _ideal_with(inertia_scale=1.2), (1.9, 1.9), None),
    "gyroscopic": (lambda: _ideal_with(rotor_inertia=ROTOR_INERTIA), (1.5, 1.5), None),
    "unmodeled-cog": (lambda: _ideal_with(controller_e=0.0), (20.0, 30.0), (15.0, math.inf)),
}

def uncertainty_case(name: str) -> UncertaintySpec:
    key = name.strip().lower().replace("_", "-")
    if key not in UNCERTAINTY_CASES:
        raise ValueError(
            f"unknown uncertainty {name!r}; expected one of " + ", ".join(UNCERTAINTY_CASES)
        )
    return UNCERTAINTY_CASES[key][0]()


def _uif_job(args):
    base, name, thresholds = args
    return name, uif_search(base, uncertainty_case(name), thresholds)


def uif_table(
    base: ScenarioSpec,
    names,
    thresholds: TrackingThresholds = TrackingThresholds(),
    workers: int = 1,
) -> dict:
    """One UIF per named uncertainty, each in isolation. Runs searches in a process pool."""
    names = list(names)
    jobs = [(base, n, thresholds) for n in names]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_uif_job, jobs))
    else:
        results = dict(map(_uif_job, jobs))
    return {n: results[n] for n in names}
