import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detachctl.control import (ControllerState, DelayLine, FopdtParams, PidGains, check_stability, fit_fopdt,
                               imc_gains, low_pass, pid_step, simulate_fopdt_loop, tune_pid_from_fopdt)
from detachctl.errors import NonPositiveDt, NonUniformSampling, NoStepFound, UnstableResult, ValidationError

DT = 1.0 / 30.0


def test_low_pass_examples():
    assert low_pass(0.3, 0.9, DT, 0.0) == 0.9
    assert low_pass(0.3, 0.3, DT, 0.04) == 0.3
    assert low_pass(0.0, 1.0, 1.0, 1.0) == 0.5


def test_filter_reaches_63_percent_within_tau():
    # first filtered sample at t=0 already sees the step; 63% is passed one tick (< 40 ms) later
    y, t = 0.0, 0.0
    ys = []
    for _ in range(5):
        y = low_pass(y, 1.0, DT, 0.04)
        ys.append(y)
    assert ys[0] == pytest.approx(DT / (0.04 + DT))
    first = next(k for k, v in enumerate(ys) if v >= 1 - math.exp(-1))
    assert first * DT <= 0.04
    # discrete response is exactly geometric
    r = 0.04 / (0.04 + DT)
    assert np.allclose(ys, 1 - r ** np.arange(1, 6), rtol=0, atol=1e-15)


def test_zero_error_from_rest_holds_clamped_zero():
    for limits in [(0.0, 10.0), (1.0, 10.0), (-5.0, -1.0)]:
        st_ = ControllerState(command_limits=limits)
        g = PidGains(2.0, 5.0, 0.3)
        us = [pid_step(st_, g, 0.4, 0.4, DT) for _ in range(100)]
        assert all(u == min(max(0.0, limits[0]), limits[1]) for u in us)


@settings(max_examples=100, deadline=None)
@given(target=st.floats(-2, 2), meas=st.floats(-2, 2))
def test_zero_gains_always_clamped_zero(target, meas):
    st_ = ControllerState(command_limits=(0.5, 10))
    assert pid_step(st_, PidGains(0.0, 0.0, 0.0), target, meas, DT) == 0.5


def test_pure_proportional():
    st_ = ControllerState(command_limits=(-math.inf, math.inf))
    assert pid_step(st_, PidGains(-1.0, filter_tau=0.0), 0.6, 0.5, DT) == pytest.approx(-0.1, abs=1e-15)


def test_integral_is_trapezoidal_and_derivative_on_measurement():
    st_ = ControllerState(command_limits=(-math.inf, math.inf))
    g = PidGains(1.0, 2.0, 0.0, filter_tau=0.0)
    pid_step(st_, g, 1.0, 0.0, 0.1)          # e=1, integral = 0.1 (first sample pairs with itself)
    pid_step(st_, g, 1.0, 0.5, 0.1)          # e=0.5, integral += 0.075
    assert st_.integral == pytest.approx(0.175, abs=1e-15)
    d = ControllerState(command_limits=(-math.inf, math.inf))
    gd = PidGains(1.0, 0.0, 0.5, filter_tau=0.0)
    pid_step(d, gd, 0.0, 0.0, 0.1)
    u = pid_step(d, gd, 5.0, 0.2, 0.1)       # target jump adds no kick; measurement rise is damped
    assert u == pytest.approx((5.0 - 0.2) + 0.5 * (-(0.2 - 0.0) / 0.1), abs=1e-12)


def test_anti_windup_keeps_integral_bounded():
    st_ = ControllerState(command_limits=(0.0, 10.0))
    g = PidGains(3.0, 5.0, 0.1)
    bound = 10.0 / (3.0 * 5.0)
    for _ in range(20000):
        u = pid_step(st_, g, 5.0, 0.0, DT)   # unreachable target
        assert abs(st_.integral) <= bound + 1e-12
    assert u == 10.0
    # once the target becomes reachable the controller comes off the limit quickly
    for k in range(30):
        u = pid_step(st_, g, 0.0, 0.5, DT)
    assert u < 10.0


def test_non_positive_dt():
    with pytest.raises(NonPositiveDt):
        pid_step(ControllerState(), PidGains(1.0), 0, 0, 0.0)
    with pytest.raises(ValidationError):
        PidGains(1.0, filter_tau=-1)


def test_pid_is_deterministic():
    a, b = ControllerState(), ControllerState()
    g = PidGains(2.5, 3.0, 0.07)
    rng = np.random.default_rng(0)
    for target, meas in rng.random((200, 2)):
        assert pid_step(a, g, target, meas, DT) == pid_step(b, g, target, meas, DT)


def test_delay_line_interpolates():
    line = DelayLine(0.25, initial=-1.0)
    seen = []
    for k in range(10):
        line.push(k * 0.1, float(k))
        seen.append(line.at(k * 0.1))
    # before the first knot the initial value holds; afterwards u(t - 0.25) by linear interpolation
    assert seen[:3] == [-1.0, -1.0, -1.0]
    assert seen[3:] == pytest.approx([0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5])


def step_data(p: FopdtParams, noise=0.0, seed=0, dt=DT, duration=4.0, t_step=1.0, du=1.0, y0=0.1):
    t = np.arange(int(round(duration / dt))) * dt
    u = np.where(t >= t_step - 1e-12, 1.0 + du, 1.0)
    ts = t[np.argmax(u > 1.0)]
    y = p.step_response(t, ts, du, y0)
    if noise:
        y = y + noise * np.random.default_rng(seed).standard_normal(t.size)
    return t, u, y


def test_fopdt_noiseless_recovery():
    true = FopdtParams(2.0, 0.3, 0.2)
    fit = fit_fopdt(*step_data(true))
    for a, b in [(fit.k, 2.0), (fit.tau_p, 0.3), (fit.theta, 0.2)]:
        assert a == pytest.approx(b, rel=0.01)


def test_fopdt_noisy_recovery_over_seeds():
    true = FopdtParams(2.0, 0.3, 0.2)
    for seed in range(20):
        fit = fit_fopdt(*step_data(true, noise=0.01, seed=seed))
        for a, b in [(fit.k, 2.0), (fit.tau_p, 0.3), (fit.theta, 0.2)]:
            assert a == pytest.approx(b, rel=0.05), seed


@settings(max_examples=15, deadline=None)
@given(k=st.floats(0.1, 5.0), tau=st.floats(0.1, 1.0), theta=st.floats(0.0, 0.5))
def test_fopdt_fixed_point(k, tau, theta):
    true = FopdtParams(k, tau, theta)
    t, u, y = step_data(true, duration=1.0 + theta + 8 * tau + 2.0)
    fit = fit_fopdt(t, u, y)
    again = fit_fopdt(t, u, fit.step_response(t, t[np.argmax(u > 1.0)], 1.0, 0.1))
    for a, b in [(again.k, fit.k), (again.tau_p, fit.tau_p)]:
        assert a == pytest.approx(b, rel=1e-3)
    assert again.theta == pytest.approx(fit.theta, rel=1e-3, abs=1e-4)


def test_fit_report_and_objective():
    t, u, y = step_data(FopdtParams(1.0, 0.5, 0.1))
    rep = fit_fopdt(t, u, y, return_report=True)
    assert rep.sse < 1e-10
    assert rep.t_step == pytest.approx(1.0, abs=DT) and rep.du == 1.0 and rep.y0 == pytest.approx(0.1)
    assert all(b <= a + 1e-15 for a, b in zip(rep.history, rep.history[1:]))


def test_fopdt_errors():
    t = np.arange(100) * DT
    with pytest.raises(NoStepFound):
        fit_fopdt(t, np.ones(100), np.zeros(100))
    t2 = t.copy()
    t2[50:] += 0.01
    with pytest.raises(NonUniformSampling):
        fit_fopdt(t2, np.r_[np.ones(30), 2 * np.ones(70)], np.zeros(100))


def test_imc_rule_examples():
    g = imc_gains(FopdtParams(1.0, 1.0, 0.0), 1.0)
    assert g.g_p == pytest.approx(1.0) and g.ratio_d == 0.0 and g.ratio_i == 1.0
    base = imc_gains(FopdtParams(0.2, 0.3, 0.2), 0.3)
    doubled = imc_gains(FopdtParams(0.4, 0.3, 0.2), 0.3)
    assert doubled.g_p == pytest.approx(base.g_p / 2, rel=1e-15)
    assert (doubled.ratio_i, doubled.ratio_d) == (base.ratio_i, base.ratio_d)
    neg = imc_gains(FopdtParams(-0.2, 0.3, 0.2), 0.3)
    assert neg.g_p == -base.g_p
    assert base.ratio_d == pytest.approx(0.3 * 0.2 / 0.8)
    with pytest.raises(ValidationError):
        imc_gains(FopdtParams(0.2, 0.3, 0.2), 0.0)


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.05, 5.0).flatmap(lambda v: st.sampled_from([v, -v])), tau=st.floats(0.1, 2.0),
       theta=st.floats(0.0, 0.6), lam_ratio=st.floats(0.5, 3.0))
def test_tuned_gains_always_stabilize(k, tau, theta, lam_ratio):
    plant = FopdtParams(k, tau, theta)
    gains = tune_pid_from_fopdt(plant, lam_ratio * max(theta, 0.1))
    assert check_stability(plant, gains)[0]


def test_tuned_step_settles_with_limited_overshoot():
    plant = FopdtParams(0.2, 0.3, 0.2)
    gains = tune_pid_from_fopdt(plant, 0.3)
    t, y, _ = simulate_fopdt_loop(plant, gains, 1.0, 6.0, DT)
    assert y.max() <= 1.25
    assert np.all(np.abs(y[t > 3.0] - 1.0) <= 0.05)


def test_aggressive_gains_are_rejected():
    plant = FopdtParams(1.0, 0.1, 0.5)
    ok, _ = check_stability(plant, PidGains(5.0, 10.0, 0.0))
    assert not ok
    with pytest.raises(UnstableResult):
        import detachctl.control as c
        orig = c.imc_gains
        try:
            c.imc_gains = lambda p, lam, ft=0.04: PidGains(5.0, 10.0, 0.0, ft)
            c.tune_pid_from_fopdt(plant, 0.3)
        finally:
            c.imc_gains = orig
