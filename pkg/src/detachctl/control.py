"""Discrete PID with measurement filter and anti-windup; FOPDT identification and tuning.

Controller law (derivative acts on the filtered measurement)::

    f_k   = low_pass(f_{k-1}, measurement_k, dt, filter_tau)
    e_k   = target_k - f_k
    I_k   = I_{k-1} + (e_k + e_{k-1}) * dt / 2
    D_k   = -(f_k - f_{k-1}) / dt
    u_k   = clip(g_p * (e_k + ratio_i * I_k + ratio_d * D_k), lo, hi)

Tuning rule (IMC-style, closed-loop time constant ``lam``)::

    g_p     = tau_p / (k * (lam + theta))
    ratio_i = 1 / tau_p
    ratio_d = tau_p * theta / (2 * tau_p + theta)
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NonPositiveDt, NonUniformSampling, NoStepFound, UnstableResult, ValidationError

DEFAULT_LIMITS = (0.0, 10.0)


@dataclass(frozen=True)
class PidGains:
    g_p: float
    ratio_i: float = 0.0
    ratio_d: float = 0.0
    filter_tau: float = 0.04

    def __post_init__(self):
        if not self.filter_tau >= 0:
            raise ValidationError("filter_tau must be >= 0")


@dataclass(frozen=True)
class FopdtParams:
    k: float
    tau_p: float
    theta: float

    def __post_init__(self):
        if not self.tau_p > 0:
            raise ValidationError("tau_p must be > 0")
        if not self.theta >= 0:
            raise ValidationError("theta must be >= 0")

    def step_response(self, t, t_step: float, du: float, y0: float = 0.0) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lag = t - t_step - self.theta
        out = np.where(lag >= 0, 1.0 - np.exp(-np.maximum(lag, 0.0) / self.tau_p), 0.0)
        return y0 + self.k * du * out


@dataclass
class ControllerState:
    integral: float = 0.0
    filtered_meas: float | None = None
    last_filtered_meas: float | None = None
    last_error: float | None = None
    command_limits: tuple[float, float] = DEFAULT_LIMITS

    def reset(self) -> None:
        self.integral = 0.0
        self.filtered_meas = None
        self.last_filtered_meas = None
        self.last_error = None


def low_pass(prev: float, raw: float, dt: float, tau: float) -> float:
    if tau == 0:
        return raw
    return prev + (dt / (tau + dt)) * (raw - prev)


def _clip(u: float, limits) -> float:
    lo, hi = limits
    return min(max(u, lo), hi)


def pid_step(state: ControllerState, gains: PidGains, target: float, measurement: float, dt: float) -> float:
    """Advance the controller one tick and return the clamped command."""
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    lo, hi = state.command_limits
    if state.filtered_meas is None:
        prev_f = f = measurement
    else:
        prev_f = state.filtered_meas
        f = low_pass(prev_f, measurement, dt, gains.filter_tau)
    e = target - f
    e_prev = e if state.last_error is None else state.last_error
    deriv = -(f - prev_f) / dt

    ki = gains.g_p * gains.ratio_i
    candidate = state.integral + 0.5 * (e + e_prev) * dt
    raw = gains.g_p * (e + gains.ratio_i * candidate + gains.ratio_d * deriv)
    push = ki * (candidate - state.integral)
    winding = (raw > hi and push > 0) or (raw < lo and push < 0)
    integral = state.integral if winding else candidate
    if ki != 0:
        # keep the integral contribution itself inside the actuator range
        integral = min(max(ki * integral, lo), hi) / ki
    u = _clip(gains.g_p * (e + gains.ratio_i * integral + gains.ratio_d * deriv), (lo, hi))

    state.integral = integral
    state.last_filtered_meas = prev_f
    state.filtered_meas = f
    state.last_error = e
    return u


# --------------------------------------------------------------------------
# FOPDT plant simulation (exact zero-order-hold discretization)
# --------------------------------------------------------------------------

class DelayLine:
    """Command history with linear interpolation at ``t - delay``."""

    def __init__(self, delay: float, initial: float = 0.0):
        self.delay = delay
        self.initial = initial
        self._t: deque = deque()
        self._u: deque = deque()

    def push(self, t: float, u: float) -> None:
        self._t.append(t)
        self._u.append(u)
        # keep one knot at or before the oldest time still needed
        while len(self._t) > 2 and self._t[1] <= t - self.delay:
            self._t.popleft()
            self._u.popleft()

    def at(self, t: float) -> float:
        tq = t - self.delay
        if not self._t or tq < self._t[0]:
            return self.initial
        ts, us = self._t, self._u
        for i in range(len(ts) - 1, -1, -1):
            if ts[i] <= tq:
                if i == len(ts) - 1 or ts[i] == tq:
                    return us[i]
                w = (tq - ts[i]) / (ts[i + 1] - ts[i])
                return us[i] + w * (us[i + 1] - us[i])
        return self.initial


def simulate_fopdt_loop(plant: FopdtParams, gains: PidGains, target: float, duration: float, dt: float,
                        limits=(-math.inf, math.inf), y0: float = 0.0):
    """Closed-loop PID on an ideal FOPDT plant; returns ``(t, y, u)`` arrays."""
    n = int(round(duration / dt))
    state = ControllerState(command_limits=limits)
    line = DelayLine(plant.theta)
    decay = math.exp(-dt / plant.tau_p)
    y = y0
    ts, ys, us = np.empty(n), np.empty(n), np.empty(n)
    for i in range(n):
        t = i * dt
        u = pid_step(state, gains, target, y, dt)
        line.push(t, u)
        ts[i], ys[i], us[i] = t, y, u
        ueff = line.at(t)
        y = y0 + plant.k * ueff + (y - y0 - plant.k * ueff) * decay
    return ts, ys, us


# --------------------------------------------------------------------------
# identification
# --------------------------------------------------------------------------

@dataclass
class FitReport:
    params: FopdtParams
    sse: float
    t_step: float
    du: float
    y0: float
    iterations: int = 0
    history: list = field(default_factory=list)


def _find_step(u: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(u))))
    jumps = np.flatnonzero(np.abs(np.diff(u)) > 1e-9 * scale)
    if jumps.size == 0:
        raise NoStepFound("command never changes")
    return jumps


def fit_fopdt(t, command, dz, return_report: bool = False):
    """Least-squares FOPDT fit to a single command step.

    ``theta`` is grid-initialised; then ``tau_p``, ``theta`` and ``k`` are
    refined by coordinate descent (``k`` in closed form) until the objective
    improves by less than 1e-10.
    """
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(command, dtype=np.float64)
    y = np.asarray(dz, dtype=np.float64)
    if not (t.shape == u.shape == y.shape) or t.size < 4:
        raise ValidationError("trace arrays must share a length of at least 4")
    steps = np.diff(t)
    dt = float(steps.mean())
    if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise NonUniformSampling("fit_fopdt needs uniform sampling")
    jumps = _find_step(u)
    i0 = int(jumps[0])
    end = int(jumps[1]) + 1 if jumps.size > 1 else t.size
    t_step = float(t[i0 + 1])
    du = float(u[i0 + 1] - u[i0])
    y0 = float(y[: i0 + 1].mean())
    tt, yy = t[:end], y[:end] - y0
    span = float(tt[-1] - t_step)
    if span <= 0:
        raise NoStepFound("no samples after the command step")

    def basis(tau, theta):
        lag = tt - t_step - theta
        return np.where(lag >= 0, du * (1.0 - np.exp(-np.maximum(lag, 0.0) / tau)), 0.0)

    def best_k(tau, theta):
        phi = basis(tau, theta)
        den = float(phi @ phi)
        return float(phi @ yy) / den if den > 0 else 0.0

    def sse(k, tau, theta):
        r = yy - k * basis(tau, theta)
        return float(r @ r)

    tau_lo, tau_hi = dt / 20.0, 10.0 * span
    theta_hi = 0.8 * span

    def tau_line(theta, xatol):
        res = minimize_scalar(lambda tau: sse(best_k(tau, theta), tau, theta),
                              bounds=(tau_lo, tau_hi), method="bounded", options={"xatol": xatol})
        return float(res.x), float(res.fun)

    best = None
    for theta in np.arange(0.0, theta_hi, dt / 2.0):
        tau, f = tau_line(theta, 1e-3)
        if best is None or f < best[0]:
            best = (f, tau, float(theta))
    f, tau, theta = best
    k = best_k(tau, theta)
    f = sse(k, tau, theta)
    history = [f]
    it = 0
    for it in range(1, 201):
        res = minimize_scalar(lambda th: sse(k, tau, th), method="bounded",
                              bounds=(max(0.0, theta - dt), min(theta_hi, theta + dt)),
                              options={"xatol": 1e-12})
        if res.fun < sse(k, tau, theta):
            theta = float(res.x)
        res = minimize_scalar(lambda ta: sse(k, ta, theta), method="bounded",
                              bounds=(max(tau_lo, 0.5 * tau), min(tau_hi, 2.0 * tau)),
                              options={"xatol": 1e-12})
        if res.fun < sse(k, tau, theta):
            tau = float(res.x)
        k = best_k(tau, theta)
        f_new = sse(k, tau, theta)
        history.append(f_new)
        if f - f_new < 1e-10:
            f = min(f, f_new)
            break
        f = f_new
    params = FopdtParams(k, tau, theta)
    if return_report:
        return FitReport(params, f, t_step, du, y0, it, history)
    return params


# --------------------------------------------------------------------------
# tuning
# --------------------------------------------------------------------------

def imc_gains(plant: FopdtParams, closed_loop_tau: float, filter_tau: float = 0.04) -> PidGains:
    if not closed_loop_tau > 0:
        raise ValidationError("closed_loop_tau must be > 0")
    if plant.k == 0:
        raise ValidationError("plant gain must be non-zero")
    g_p = plant.tau_p / (plant.k * (closed_loop_tau + plant.theta))
    ratio_i = 1.0 / plant.tau_p
    ratio_d = plant.tau_p * plant.theta / (2.0 * plant.tau_p + plant.theta)
    return PidGains(g_p, ratio_i, ratio_d, filter_tau)


def check_stability(plant: FopdtParams, gains: PidGains, dt: float | None = None) -> tuple[bool, float]:
    """Unit step on the generating FOPDT; returns ``(settled, late_error)``."""
    if dt is None:
        # resolve the dead time, but not below tau_p/200 (the delay line interpolates anyway)
        dt = min(1.0 / 30.0, plant.tau_p / 20.0)
        if plant.theta > 0:
            dt = min(dt, max(plant.theta / 4.0, plant.tau_p / 200.0))
    scale = plant.tau_p + plant.theta + 1.0 / max(abs(gains.g_p * plant.k), 1e-12)
    duration = 40.0 * scale
    _, y, _ = simulate_fopdt_loop(plant, gains, 1.0, duration, dt)
    err = np.abs(y - 1.0)
    half = err.size // 2
    late = float(err[-err.size // 5:].max())
    ok = bool(np.all(np.isfinite(y))) and late <= 0.05 and late <= float(err[:half].max())
    return ok, late


def tune_pid_from_fopdt(plant: FopdtParams, closed_loop_tau: float, filter_tau: float = 0.04) -> PidGains:
    gains = imc_gains(plant, closed_loop_tau, filter_tau)
    ok, late = check_stability(plant, gains)
    if not ok:
        raise UnstableResult(f"tuned loop does not settle (late error {late:.3g})")
    return gains
