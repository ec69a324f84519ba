import csv
import functools
import math

import numpy as np
import pytest

from omnirotor.allocation import RankDeficiencyError, min_norm_solve
from omnirotor.configuration import NOMINAL_PARAMS, ConfigId, constant_allocation_matrix
from omnirotor.controllers import gravity_compensation
from omnirotor.dynamics import UncertaintySpec
from omnirotor.metrics import hover_speed, npcf
from omnirotor.scenarios import (
    DivergenceError,
    ManeuverId,
    ScenarioSpec,
    SimLog,
    SimulationError,
    initial_state,
    maneuver_reference,
    rk4_step,
    run_simulation,
)
from omnirotor.verify import reference_derivative_error, rk4_errors

P = NOMINAL_PARAMS
FULL = [ConfigId.HEDRAL, ConfigId.TILT, ConfigId.TILT_HEDRAL]


def test_maneuver_parse():
    assert ManeuverId.parse("M3") is ManeuverId.M3
    assert ManeuverId.parse("hover") is ManeuverId.HOVER
    with pytest.raises(ValueError):
        ManeuverId.parse("m9")


def test_m1_start():
    ref = maneuver_reference(ManeuverId.M1, 0.0)
    assert np.allclose(ref.pos, [0, 0, 2, 0, 0, 0])
    assert np.allclose(ref.vel, [0.4, 0.4, 0, 0, 0, 0])
    assert np.allclose(ref.acc, 0.0)


def test_m2_is_constant():
    a, b = maneuver_reference(ManeuverId.M2, 0.0), maneuver_reference(ManeuverId.M2, 17.3)
    assert np.array_equal(a.pos, b.pos)
    assert np.allclose(np.degrees(a.pos[3:]), [20, 25, 90])
    assert not a.vel.any() and not a.acc.any()


def test_m3_peak():
    ref = maneuver_reference(ManeuverId.M3, math.pi / 0.8)
    assert np.allclose(ref.pos[:3], 1.0) and np.allclose(ref.vel[:3], 0.0, atol=1e-15)


def test_m4_full_revolution():
    a, b = maneuver_reference(ManeuverId.M4, 0.0), maneuver_reference(ManeuverId.M4, 30.0)
    assert np.allclose(a.pos[:2], b.pos[:2]) and np.allclose(a.pos[:2], [2, 0])
    assert b.pos[2] - a.pos[2] == pytest.approx(3.0)
    # heading points at the helix axis
    for t in (0.0, 7.0, 22.0):
        ref = maneuver_reference(ManeuverId.M4, t)
        heading = np.array([math.cos(ref.pos[5]), math.sin(ref.pos[5])])
        assert np.allclose(heading, -ref.pos[:2] / np.linalg.norm(ref.pos[:2]))


def test_reference_rejects_negative_time():
    with pytest.raises(ValueError):
        maneuver_reference(ManeuverId.M1, -0.1)


def test_reference_derivatives_match_finite_differences():
    assert reference_derivative_error() < 1e-6


def test_initial_states():
    assert np.allclose(initial_state(ManeuverId.M2), [0, 0, 2] + [0] * 9)
    x = initial_state(ManeuverId.M3)
    ref = maneuver_reference(ManeuverId.M3, 0.0)
    assert np.array_equal(x[:6], ref.pos) and np.array_equal(x[6:], ref.vel)


def test_rk4_examples():
    x = np.array([1.0, -2.0])
    assert np.array_equal(rk4_step(x, 0.1, lambda _t, y: np.zeros(2)), x)
    err, ratio = rk4_errors()
    assert err < 1e-9
    assert 12 < ratio < 20
    with pytest.raises(ValueError):
        rk4_step(x, 0.0, lambda _t, y: y)
    with pytest.raises(SimulationError):
        rk4_step(x, 1.0, lambda _t, y: np.full(2, np.inf))


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(duration=0.0)
    with pytest.raises(ValueError):
        ScenarioSpec(controller="lqr")
    assert ScenarioSpec(config="Tilt").config is ConfigId.TILT


def test_half_tilt_cannot_be_simulated():
    with pytest.raises(RankDeficiencyError, match="rank 5"):
        run_simulation(ScenarioSpec(config=ConfigId.HALF_TILT, duration=0.1))


def test_divergence_guard():
    x0 = tuple([150.0, 0, 2] + [0.0] * 9)
    with pytest.raises(DivergenceError) as info:
        run_simulation(ScenarioSpec(duration=0.1, x0=x0))
    assert info.value.time == pytest.approx(1e-3)


def test_log_grid_and_csv(tmp_path):
    lg = run_simulation(ScenarioSpec(config=ConfigId.TILT_HEDRAL, duration=0.5))
    assert len(lg) == 101
    assert np.allclose(np.diff(lg.t), 0.005)
    assert np.all(np.isfinite(lg.state))
    path = lg.to_csv(tmp_path / "run.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:7] == ["t", "X", "Y", "Z", "phi", "theta", "psi"]
    assert "gamma4" in rows[0] and rows[0][-1] == "sat_flags"
    assert len(rows) == 102
    assert "gamma1" not in run_simulation(ScenarioSpec(duration=0.01)).columns


def test_determinism_and_seed_sensitivity():
    spec = ScenarioSpec(maneuver=ManeuverId.M3, uncertainty=UncertaintySpec(), duration=1.0, seed=7)
    a, b = run_simulation(spec), run_simulation(spec)
    assert np.array_equal(a.state, b.state) and np.array_equal(a.disturbance, b.disturbance)
    c = run_simulation(spec.with_(seed=8))
    assert not np.array_equal(a.state, c.state)


def test_custom_reference_overrides_maneuver():
    ref = maneuver_reference(ManeuverId.HOVER, 0.0)
    lg = run_simulation(ScenarioSpec(maneuver=ManeuverId.M1, duration=0.1), reference=lambda t: ref)
    assert np.allclose(lg.reference, ref.pos)


@pytest.mark.slow
def test_m2_reaches_commanded_attitude():
    lg = run_simulation(ScenarioSpec(maneuver=ManeuverId.M2, duration=20.0))
    assert np.max(np.abs(np.degrees(lg.state[-1, 3:6]) - [20, 25, 90])) < 0.5
    assert np.linalg.norm(lg.state[-1, :3] - [0, 0, 2]) < 0.02


@functools.lru_cache(maxsize=None)
def _steady_npcf(config):
    lg = run_simulation(ScenarioSpec(config=config, maneuver=ManeuverId.M2, duration=20.0))
    keep = lg.t >= lg.t[-1] - 5.0
    tail = SimLog(lg.config, lg.t[keep], lg.state[keep], lg.reference[keep], lg.omega[keep],
                  lg.beta[keep], lg.gamma[keep], lg.v_norm[keep], lg.disturbance[keep], lg.sat_flags[keep])
    return npcf(tail, P)


def _static_npcf(config):
    # minimum-norm effort for holding the weight at the maneuver 2 attitude
    o = maneuver_reference(ManeuverId.M2, 0.0).pos[3:]
    v = min_norm_solve(constant_allocation_matrix(config).matrix, -gravity_compensation(o, P))
    return np.linalg.norm(v) / (2 * hover_speed(P) ** 2)


@pytest.mark.slow
@pytest.mark.parametrize("config", FULL)
def test_m2_steady_effort_equals_static_minimum(config):
    assert _steady_npcf(config) == pytest.approx(_static_npcf(config), abs=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize(
    "config",
    [
        pytest.param(ConfigId.HEDRAL, marks=pytest.mark.xfail(
            strict=True, reason="static minimum effort at this attitude is 1.256")),
        pytest.param(ConfigId.TILT, marks=pytest.mark.xfail(
            strict=True, reason="static minimum effort at this attitude is 1.135")),
        ConfigId.TILT_HEDRAL,
    ],
)
def test_m2_steady_effort_band(config):
    assert 1.0 <= _steady_npcf(config) <= 1.1
