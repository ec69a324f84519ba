import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omnirotor.configuration import NOMINAL_PARAMS, ConfigId
from omnirotor.controllers import (
    SAT_OMEGA,
    SAT_TILT,
    ControllerModel,
    PidController,
    PidGains,
    Reference,
    SlidingModeController,
    SmcGains,
    default_gains,
    gravity_compensation,
    make_controller,
    pid_command,
    pid_virtual_wrench,
    saturate,
    sliding_surface,
    smc_command,
    smc_wrench,
    wrench_to_body,
)
from omnirotor.dynamics import ActuatorCommand, UncertaintySpec, state_derivative
from omnirotor.kinematics import elementary_rotation, inertial_to_body
from omnirotor.scenarios import ManeuverId, ScenarioSpec, rk4_step, run_simulation
from omnirotor.metrics import position_rms
from omnirotor.verify import random_state

P = NOMINAL_PARAMS
W_H = math.sqrt(P.m * P.g / (4 * P.k_f))
FULL = [ConfigId.HEDRAL, ConfigId.TILT, ConfigId.TILT_HEDRAL]
HOVER_REF = Reference(np.array([0, 0, 2.0, 0, 0, 0]), np.zeros(6), np.zeros(6))
HOVER_X = np.array([0, 0, 2.0] + [0.0] * 9)
angle = st.floats(-math.pi, math.pi)


def model(config=ConfigId.HEDRAL, params=P):
    return ControllerModel(params, config)


def test_gain_validation():
    with pytest.raises(ValueError, match="strictly positive"):
        SmcGains(k=np.zeros(6))
    with pytest.raises(ValueError, match="6 elements"):
        SmcGains(lam=[1.0, 2.0])
    with pytest.raises(ValueError):
        PidGains(-np.ones(6), np.ones(6), np.ones(6))
    assert np.array_equal(SmcGains().scaled(2.0).k, 2 * SmcGains().k)


def test_default_gains():
    g = default_gains("smc", ConfigId.TILT)
    assert np.array_equal(g.lam, np.full(6, 2.0)) and np.array_equal(g.sigma, np.full(6, 10.0))
    heavy = default_gains("pid", ConfigId.HEDRAL, P.with_(m=2.0))
    light = default_gains("pid", ConfigId.HEDRAL, P)
    assert np.allclose(heavy.k_p[:3], 2 * light.k_p[:3])
    assert np.allclose(heavy.k_p[3:], light.k_p[3:])
    with pytest.raises(ValueError):
        default_gains("lqr", ConfigId.HEDRAL)
    with pytest.raises(ValueError):
        make_controller("lqr", model())


def test_sliding_surface_examples(rng):
    assert np.array_equal(sliding_surface(HOVER_X, HOVER_REF, np.ones(6)), np.zeros(6))
    x = np.concatenate([np.full(6, 0.1), np.zeros(6)])
    ref = Reference(np.zeros(6), np.zeros(6), np.zeros(6))
    assert np.allclose(sliding_surface(x, ref, np.ones(6)), np.full(6, 0.1))
    x = rng.normal(size=12)
    ref = Reference(rng.normal(size=6), rng.normal(size=6), np.zeros(6))
    lam = rng.uniform(0.5, 3, 6)
    expected = (x[6:] - ref.vel) + lam * (x[:6] - ref.pos)
    assert np.allclose(sliding_surface(x, ref, lam), expected, atol=1e-14)


@pytest.mark.parametrize("config", FULL)
def test_smc_hover_command(config):
    for factored in (True, False):
        ctrl = SlidingModeController(model(config), SmcGains(), factored=factored)
        cmd, flags = ctrl.command(HOVER_X, HOVER_REF)
        assert flags == 0
        assert np.allclose(cmd.omega, W_H, atol=1e-9)
        assert np.allclose(cmd.beta, 0.0, atol=1e-12) and np.allclose(cmd.gamma, 0.0, atol=1e-12)
    one_shot = smc_command(HOVER_X, HOVER_REF, SmcGains(), model(config))
    assert np.allclose(one_shot.omega, W_H, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from(FULL))
def test_factored_smc_matches_state_dependent_allocation(seed, config):
    rng = np.random.default_rng(seed)
    x = random_state(rng, max_pitch=1.0)
    ref = Reference(rng.normal(size=6), rng.normal(size=6), rng.normal(size=6))
    a = SlidingModeController(model(config), SmcGains(), factored=True)
    b = SlidingModeController(model(config), SmcGains(), factored=False)
    a.command(x, ref)
    b.command(x, ref)
    assert np.allclose(a.last_v, b.last_v, rtol=1e-9, atol=1e-6 * np.max(np.abs(b.last_v)))


def test_smc_wrench_drives_affine_model_to_target(rng):
    x = random_state(rng, max_pitch=1.0)
    ref = Reference(rng.normal(size=6), rng.normal(size=6), rng.normal(size=6))
    w, G, s = smc_wrench(x, ref, SmcGains(), model())
    ctrl = SlidingModeController(model(), SmcGains())
    ctrl.command(x, ref)
    assert np.allclose(G @ ctrl.last_v, w, atol=1e-8)


def test_pid_virtual_wrench_examples():
    g = PidGains(np.arange(1.0, 7.0), np.zeros(6), np.zeros(6))
    assert np.array_equal(pid_virtual_wrench(np.zeros(6), np.zeros(6), np.zeros(6), g), np.zeros(6))
    e = np.linspace(-1, 1, 6)
    assert np.allclose(pid_virtual_wrench(e, np.zeros(6), np.zeros(6), g), g.k_p * e)


def test_pid_integral_matches_analytic_integral():
    gains = PidGains(np.zeros(6), np.zeros(6), np.ones(6), integral_limit=np.full(6, 10.0))
    ctrl = PidController(model(), gains)
    w = 2 * math.pi
    x = np.zeros(12)
    dt = 1e-3
    worst = 0.0
    for k in range(1001):
        t = k * dt
        ref = Reference(np.full(6, math.sin(w * t)), np.zeros(6), np.zeros(6))
        q, _ = ctrl.virtual_wrench(x, ref, dt)
        worst = max(worst, float(np.max(np.abs(q - (1 - math.cos(w * t)) / w))))
    assert worst < 1e-3


def test_pid_integral_clamp_flags():
    gains = PidGains(np.zeros(6), np.zeros(6), np.ones(6), integral_limit=np.full(6, 0.01))
    ctrl = PidController(model(), gains)
    ref = Reference(np.ones(6), np.zeros(6), np.zeros(6))
    ctrl.virtual_wrench(np.zeros(12), ref, 0.1)
    q, clamped = ctrl.virtual_wrench(np.zeros(12), ref, 0.1)
    assert clamped and np.allclose(ctrl.integral, 0.01)
    ctrl.reset()
    assert not ctrl.integral.any()


def test_wrench_to_body_examples():
    q = np.array([1.0, 2, 3, 4, 5, 6])
    assert np.allclose(wrench_to_body(q, (0, 0, 0)), q)
    out = wrench_to_body([0, 0, 0, 0, 0, 0.7], (0, 0, 1.3))
    assert np.allclose(out, [0, 0, 0, 0, 0, 0.7])


@given(angle, st.floats(-1.4, 1.4), angle)
def test_wrench_to_body_force_is_rotated(phi, theta, psi):
    o = (phi, theta, psi)
    f = np.array([0.3, -1.2, 2.0])
    out = wrench_to_body(np.concatenate([f, [0.1, 0.2, 0.3]]), o)
    assert np.allclose(out[:3], inertial_to_body(o) @ f, atol=1e-12)


def test_gravity_compensation_examples():
    assert np.allclose(gravity_compensation((0, 0, 0), P), [0, 0, -9.81, 0, 0, 0])
    assert np.allclose(
        gravity_compensation((math.radians(30), 0, 0), P), [0, -4.905, -8.4957, 0, 0, 0], atol=1e-4
    )
    assert np.allclose(gravity_compensation((0, math.pi / 2, 0), P), [9.81, 0, 0, 0, 0, 0], atol=1e-12)


@given(angle, st.floats(-1.4, 1.4), angle)
def test_gravity_compensation_is_rotated_weight(phi, theta, psi):
    o = (phi, theta, psi)
    weight = inertial_to_body(o) @ [0, 0, -P.m * P.g]
    assert np.allclose(gravity_compensation(o, P)[:3], weight, atol=1e-12)


@pytest.mark.parametrize("config", FULL)
def test_both_controllers_agree_at_hover(config):
    gains = default_gains("pid", config)
    pid = PidController(model(config), gains)
    cmd_pid, _ = pid.command(HOVER_X, HOVER_REF, 1e-3)
    assert np.allclose(pid.last_w, [0, 0, P.m * P.g, 0, 0, 0], atol=1e-12)
    cmd_smc, _ = SlidingModeController(model(config), SmcGains()).command(HOVER_X, HOVER_REF)
    for a, b in ((cmd_pid.omega, cmd_smc.omega), (cmd_pid.beta, cmd_smc.beta), (cmd_pid.gamma, cmd_smc.gamma)):
        assert np.allclose(a, b, atol=1e-9)
    assert np.allclose(cmd_pid.omega, W_H, atol=1e-9)
    assert np.allclose(pid_command(HOVER_X, HOVER_REF, gains, model(config)).omega, W_H, atol=1e-9)


def test_zero_pid_gains_only_compensate_gravity(rng):
    zero = PidGains(np.zeros(6), np.zeros(6), np.zeros(6))
    pid = PidController(model(), zero)
    for _ in range(5):
        x = random_state(rng, max_pitch=1.0)
        ref = Reference(rng.normal(size=6), rng.normal(size=6), np.zeros(6))
        pid.command(x, ref, 1e-3)
        assert np.allclose(pid.last_w, -gravity_compensation(x[3:6], P), atol=1e-12)


def test_saturate():
    cmd = ActuatorCommand([2000, 100, 100, 100], [0, 1.6, 0, 0])
    out, flags = saturate(cmd, omega_max=1600, angle_limit=1.5)
    assert flags == SAT_OMEGA | SAT_TILT
    assert out.omega.max() == 1600 and out.beta.max() == 1.5
    same, flags = saturate(ActuatorCommand.hover(P))
    assert flags == 0


def test_pid_allocation_is_factorized_once():
    pid = PidController(model(), default_gains("pid", ConfigId.HEDRAL))
    allocator = pid.allocator
    snapshot = allocator.pinv.tobytes()
    x = HOVER_X.copy()
    for k in range(50):
        ref = Reference(np.array([0.1 * k, 0, 2, 0, 0, 0]), np.zeros(6), np.zeros(6))
        pid.command(x, ref, 1e-3)
    assert pid.allocator is allocator and allocator.pinv.tobytes() == snapshot


def test_controller_never_sees_plant_parameters(rng):
    base = ScenarioSpec(config=ConfigId.TILT)
    perturbed = base.with_(uncertainty=UncertaintySpec())
    assert perturbed.controller_params() == base.controller_params() == P
    assert perturbed.plant_params() != P
    x = random_state(rng, max_pitch=1.0)
    ref = Reference(rng.normal(size=6), rng.normal(size=6), rng.normal(size=6))
    w = []
    for spec in (base, perturbed):
        ctrl = SlidingModeController(ControllerModel(spec.controller_params(), spec.config), SmcGains())
        ctrl.command(x, ref)
        w.append(ctrl.last_w)
    assert np.array_equal(w[0], w[1])


def test_smc_reaching_condition_outside_boundary_layer():
    gains = SmcGains()
    ctrl = SlidingModeController(model(), gains)
    x = HOVER_X.copy()
    x[0] = 0.5
    x[3] = 0.2
    dt = 1e-3
    checked = 0
    for _ in range(1500):
        s = sliding_surface(x, HOVER_REF, gains.lam)
        cmd, _ = ctrl.command(x, HOVER_REF)
        x = rk4_step(x, dt, lambda _t, y: state_derivative(y, cmd, ConfigId.HEDRAL, P))
        s_next = sliding_surface(x, HOVER_REF, gains.lam)
        outside = np.abs(gains.sigma * s) > 2
        assert np.all(s[outside] * (s_next - s)[outside] < 0)
        checked += int(outside.sum())
    assert checked > 100


@pytest.mark.slow
def test_smc_step_error_decays_below_boundary_layer_bound():
    x0 = tuple(HOVER_X + np.eye(12)[0] * 0.5)
    lg = run_simulation(ScenarioSpec(maneuver=ManeuverId.HOVER, duration=6.0, x0=x0))
    err = np.abs(lg.tracking_error[:, 0])
    settled = err[lg.t >= 0.5]
    assert np.all(np.diff(settled) <= 1e-9)
    gains = SmcGains()
    assert err[-1] < gains.k[0] / (gains.sigma[0] * gains.lam[0])
    assert err[-1] < 1e-3


@pytest.mark.slow
def test_larger_boundary_slope_does_not_increase_error():
    rms = []
    for sigma in (5.0, 10.0, 20.0):
        gains = SmcGains(sigma=np.full(6, sigma))
        lg = run_simulation(ScenarioSpec(maneuver=ManeuverId.M2, gains=gains, duration=12.0))
        rms.append(position_rms(lg))
    assert rms[0] >= rms[1] >= rms[2]
