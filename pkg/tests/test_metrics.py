import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omnirotor.configuration import NOMINAL_PARAMS, ConfigId
from omnirotor.dynamics import UncertaintySpec
from omnirotor.metrics import (
    UNCERTAINTY_CASES,
    Limits,
    TrackingStats,
    TrackingThresholds,
    _min_multiplier,
    attitude_rms,
    cf,
    hover_speed,
    npcf,
    pcf,
    position_rms,
    settling_time,
    uif_search,
    uncertainty_case,
)
from omnirotor.scenarios import ManeuverId, ScenarioSpec, SimLog, run_simulation

P = NOMINAL_PARAMS
positive = st.floats(1e-3, 1e3)


def synthetic_log(t, err_xyz=None, omega=None):
    n = len(t)
    state = np.zeros((n, 12))
    if err_xyz is not None:
        state[:, 0:3] = err_xyz
    return SimLog(
        ConfigId.HEDRAL, np.asarray(t, float), state, np.zeros((n, 6)),
        np.zeros((n, 4)) if omega is None else omega, np.zeros((n, 4)), np.zeros((n, 4)),
        np.zeros(n), np.zeros((n, 2)), np.zeros(n, dtype=int),
    )


def test_hover_speed():
    assert hover_speed(P) == pytest.approx(639.335, abs=1e-3)
    assert hover_speed(P) ** 2 == pytest.approx(408750.0)


def test_constant_hover_effort_is_one():
    t = np.linspace(0, 2, 401)
    lg = synthetic_log(t, omega=np.full((401, 4), hover_speed(P)))
    assert pcf(lg) == pytest.approx(2 * hover_speed(P) ** 2)
    assert npcf(lg, P) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_npcf_is_scaled_pcf(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 21)
    lg = synthetic_log(t, omega=rng.uniform(0, 1500, (21, 4)))
    assert npcf(lg, P) == pytest.approx(pcf(lg) * 2 * P.k_f / (P.m * P.g), rel=1e-14)


@given(positive, positive)
def test_cf_properties(a, b):
    assert cf(a, b) == cf(b, a)
    assert cf(a, a) == 0.0
    assert 0.0 <= cf(a, b) < 200.0


def test_cf_rejects_non_positive_sum():
    with pytest.raises(ValueError):
        cf(0.0, 0.0)


def test_tracking_statistics_on_synthetic_log():
    t = np.linspace(0, 3, 301)
    err = np.zeros((301, 3))
    err[:, 0] = np.where(t < 1.0, 0.5, 0.003)
    lg = synthetic_log(t, err)
    assert position_rms(lg) == pytest.approx(0.003)
    assert attitude_rms(lg) == 0.0
    assert settling_time(lg, 0.01) == pytest.approx(1.0)
    assert settling_time(synthetic_log(t), 0.01) == 0.0
    always = synthetic_log(t, np.ones((301, 3)))
    assert settling_time(always, 0.01) == math.inf


def test_limits_use_floors_and_factors():
    th = TrackingThresholds()
    base = TrackingStats(1e-6, 1e-7, 0.0)
    lim = Limits.from_baseline(base, th)
    assert lim.position_rms == th.position_floor
    assert lim.settling_time == th.settle_floor
    big = Limits.from_baseline(TrackingStats(1.0, 1.0, 4.0), th)
    assert big.position_rms == 1.5 and big.settling_time == 5.0
    assert not lim.accepts(TrackingStats.failed("boom"))
    assert lim.accepts(TrackingStats(5e-5, 0.0, 0.1))
    assert th.scaled(2.0).position_floor == 2 * th.position_floor


def test_min_multiplier_scans_from_below():
    calls = []

    def passes(m):
        calls.append(m)
        return 5.0 <= m <= 40.0  # the top of the bracket fails, as with chattering gains

    found = _min_multiplier(passes, (1.0, 64.0), iterations=20)
    assert found == pytest.approx(5.0, rel=1e-4)
    assert _min_multiplier(lambda m: True, (1.0, 64.0), 5) == 1.0
    assert _min_multiplier(lambda m: False, (1.0, 64.0), 5) is None
    assert max(calls) <= 64.0


def test_uncertainty_cases():
    assert uncertainty_case("random_disturbance").disturbance == "random"
    assert uncertainty_case("mass").mass_scale == 1.05
    assert uncertainty_case("unmodeled-cog").controller_e == 0.0
    for name in UNCERTAINTY_CASES:
        spec = uncertainty_case(name)
        assert isinstance(spec, UncertaintySpec)
    with pytest.raises(ValueError, match="expected one of"):
        uncertainty_case("wind")


def test_uif_requires_smc():
    with pytest.raises(ValueError):
        uif_search(ScenarioSpec(controller="pid"), None)


def test_uif_without_uncertainty_is_one():
    r = uif_search(ScenarioSpec(maneuver=ManeuverId.M3, duration=3.0), None)
    assert r.value == 1.0 and not r.uncompensable


@pytest.mark.slow
def test_exact_hover_run_costs_level_hover_effort():
    lg = run_simulation(ScenarioSpec(maneuver=ManeuverId.HOVER, duration=20.0))
    assert npcf(lg, P) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.slow
def test_uif_grows_when_uncertainties_combine():
    base = ScenarioSpec(maneuver=ManeuverId.M3, duration=9.0)
    dist = uncertainty_case("random-disturbance")
    inertia = uncertainty_case("inertia")
    both = dist.with_(inertia_scale=inertia.inertia_scale)
    combined = uif_search(base, both).value
    assert combined >= uif_search(base, dist).value
    assert combined >= uif_search(base, inertia).value
