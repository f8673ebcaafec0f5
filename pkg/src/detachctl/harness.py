"""Orchestration: training campaigns, closed-loop runs, system identification."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import linmodel
from ._accel import warmup
from .config import BUILTIN_PREFIX, Config, Scenario, load_config
from .control import ControllerState, FopdtParams, PidGains, fit_fopdt, pid_step, tune_pid_from_fopdt
from .core import Frame, GeometryState, PixelCalibration
from .dzmetric import DzParams, below_strike, clamp_for_control, compute_dz
from .errors import DetachError, TickError
from .labeling import LabeledSample, label_emission_height
from .linmodel import LinearMap
from .plant import (DZ_CEILING, PlantParams, equilibrium_dz, initial_state, plant_step, proxy_prad,
                    render_camera_frame, render_inverted_emissivity)
from .preprocess import AugmentParams, add_speckle, prepare_realtime
from .trace import Trace

FRAME_BUDGET_S = 1.0 / 30.0


def calibration_for(shape) -> PixelCalibration:
    h, w = shape
    return PixelCalibration.desk(w, h)


# --------------------------------------------------------------------------
# training campaign
# --------------------------------------------------------------------------

@dataclass
class CampaignSample:
    camera: Frame
    inverted: Frame
    geometry: GeometryState
    dz_true: float
    true_front_z: float
    label: float


def campaign_sample(cfg: Config, seed: int, index: int, cal: PixelCalibration | None = None) -> CampaignSample:
    """One randomised plant state, rendered both ways and labeled.

    Each sample draws from its own stream keyed by ``(seed, index)`` so
    samples can be produced in any order.
    """
    d = cfg.data
    cal = cal or calibration_for(cfg.shape)
    rng = np.random.default_rng([seed, index])
    z_x = -1.0 + rng.uniform(-d.z_jitter, d.z_jitter)
    z_s = -1.25 + rng.uniform(-d.z_jitter, d.z_jitter)
    geom = GeometryState(d.r_x, z_x, z_s)
    params = replace(cfg.plant, leg_inset=rng.uniform(d.leg_inset_min, d.leg_inset_max))
    state = initial_state(params, geom, rng.uniform(d.dz_min, d.dz_max),
                          brightness=rng.uniform(d.brightness_min, d.brightness_max))
    camera = render_camera_frame(state, params, cal, cfg.shape, seed=seed, tick=index)
    camera = add_speckle(camera, AugmentParams(d.speckle_alpha, seed), index)
    if params.bit_depth > 0:
        camera = camera.with_values(np.clip(np.rint(camera.flat), 0, 2 ** params.bit_depth - 1))
    inverted = render_inverted_emissivity(state, params, cal, cfg.shape)
    label = label_emission_height(inverted, cal, geom)
    return CampaignSample(camera, inverted, geom, state.dz_true, state.true_front_z, label)


def generate_campaign(cfg: Config, seed: int, count: int | None = None, start: int = 0) -> list[CampaignSample]:
    count = cfg.data.count if count is None else count
    cal = calibration_for(cfg.shape)
    return [campaign_sample(cfg, seed, start + k, cal) for k in range(count)]


def train_from_campaign(samples, preprocessing: str = "norm", lam: float | None = None, reference=None):
    from .preprocess import build_histogram, prepare_training

    if preprocessing in ("hist", "norm") and reference is None:
        reference = build_histogram([s.camera for s in samples])
    labeled = [LabeledSample(prepare_training(s.camera, preprocessing, reference), s.label, s.geometry)
               for s in samples]
    return linmodel.train(labeled, lam, preprocessing)


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------

@dataclass
class LatencyLog:
    tick_s: list = field(default_factory=list)
    inference_s: list = field(default_factory=list)

    def summary(self) -> dict:
        def stats(xs):
            a = np.asarray(xs) * 1e3
            if a.size == 0:
                return {}
            return {"mean_ms": float(a.mean()), "p99_ms": float(np.percentile(a, 99)), "max_ms": float(a.max())}

        return {
            "ticks": len(self.tick_s),
            "render_to_command": stats(self.tick_s),
            "inference": stats(self.inference_s),
            "frame_budget_ms": FRAME_BUDGET_S * 1e3,
        }


def command_for_equilibrium(params: PlantParams, geom: GeometryState, dz: float, hi: float = 100.0) -> float:
    """Smallest command whose steady state reaches ``dz`` (bisection on the static map)."""
    if dz <= 0:
        return 0.0
    lo = 0.0
    if equilibrium_dz(params, geom, hi) < dz:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if equilibrium_dz(params, geom, mid) < dz:
            lo = mid
        else:
            hi = mid
    return hi


def run_closed_loop(
    scenario: Scenario,
    model: LinearMap,
    gains: PidGains | None,
    dz_params: DzParams,
    plant: PlantParams,
    limits=(0.0, 10.0),
    latency: LatencyLog | None = None,
) -> Trace:
    """Render -> preprocess -> infer -> DZ -> PID -> plant, once per frame.

    With ``gains=None`` the gas command follows ``scenario.command`` (open
    loop).  A ``scenario.front`` waveform overrides the plant dynamics and
    prescribes the true front fraction.
    """
    shape = model.shape
    cal = calibration_for(shape)
    n, dt, seed = scenario.ticks, scenario.dt, scenario.seed
    geom0 = scenario.geometry_at(0.0)
    if scenario.front is not None:
        dz0 = scenario.front(0.0)
        u0 = command_for_equilibrium(plant, geom0, dz0)
    elif gains is None and scenario.command is not None:
        u0 = scenario.command(0.0)
        dz0 = equilibrium_dz(plant, geom0, u0)
    elif gains is not None and gains.g_p == 0:
        # a dead controller holds the clamped zero command from the start
        u0 = min(max(0.0, limits[0]), limits[1])
        dz0 = equilibrium_dz(plant, geom0, u0)
    else:
        dz0 = scenario.initial_dz
        u0 = command_for_equilibrium(plant, geom0, dz0)
    state = initial_state(plant, geom0, dz0, command=u0, brightness=scenario.brightness_at(0.0))
    ctrl = ControllerState(command_limits=tuple(limits))
    if gains is not None and gains.g_p * gains.ratio_i != 0:
        ctrl.integral = u0 / (gains.g_p * gains.ratio_i)  # bumpless start at the initial equilibrium

    if latency is not None:
        warmup()  # keep one-off kernel compilation out of the per-tick timings
    cols = {k: np.empty(n) for k in ("t", "target", "dz", "z_e", "u", "front", "prad", "r_x", "z_x", "z_s")}
    below = np.zeros(n, dtype=bool)
    for i in range(n):
        t = i * dt
        geom = scenario.geometry_at(t)
        state.geometry = geom
        state.brightness = scenario.brightness_at(t)
        target = scenario.target_at(t)
        try:
            t0 = time.perf_counter()
            frame = render_camera_frame(state, plant, cal, shape, seed=seed, tick=i)
            t1 = time.perf_counter()
            z_e = linmodel.infer(model, prepare_realtime(frame, model.preprocessing))
            t2 = time.perf_counter()
            dz = compute_dz(z_e, geom, dz_params)
            if gains is None:
                u = scenario.command(t) if scenario.command is not None else u0
            else:
                u = pid_step(ctrl, gains, target, clamp_for_control(dz), dt)
            t3 = time.perf_counter()
        except DetachError as exc:
            raise TickError(i, exc) from exc
        if latency is not None:
            latency.tick_s.append(t3 - t0)
            latency.inference_s.append(t2 - t1)
        cols["t"][i], cols["target"][i], cols["dz"][i], cols["z_e"][i], cols["u"][i] = t, target, dz, z_e, u
        cols["front"][i] = state.true_front_z
        cols["prad"][i] = proxy_prad(state, plant, seed, i)
        cols["r_x"][i], cols["z_x"][i], cols["z_s"][i] = geom.r_x, geom.z_x, geom.z_s
        below[i] = below_strike(z_e, geom, dz_params)
        if scenario.front is not None:
            state.dz_true = float(np.clip(scenario.front(t + dt), 0.0, DZ_CEILING))
            state.t = t + dt
        else:
            plant_step(state, plant, u, dt)
    return Trace(cols["t"], cols["target"], cols["dz"], dz_params.variant, cols["z_e"], cols["u"],
                 cols["front"], cols["prad"], cols["r_x"], cols["z_x"], cols["z_s"], below)


# --------------------------------------------------------------------------
# system identification
# --------------------------------------------------------------------------

def step_response(scenario: Scenario, plant: PlantParams, model: LinearMap | None = None,
                  dz_params: DzParams | None = None):
    """Open-loop run under ``scenario.command``; returns ``(t, command, dz)``.

    Without a model the true front fraction is used as the measurement.
    """
    if scenario.command is None:
        raise DetachError("system identification needs command= knots in the scenario")
    if model is not None:
        trace = run_closed_loop(scenario, model, None, dz_params or DzParams(), plant)
        return trace.t, trace.gas_command, trace.dz_measured
    n, dt = scenario.ticks, scenario.dt
    geom = scenario.geometry_at(0.0)
    u0 = scenario.command(0.0)
    state = initial_state(plant, geom, equilibrium_dz(plant, geom, u0), command=u0)
    t = np.arange(n) * dt
    u = np.array([scenario.command(ti) for ti in t])
    y = np.empty(n)
    for i in range(n):
        state.geometry = scenario.geometry_at(t[i])
        y[i] = state.dz_true
        plant_step(state, plant, u[i], dt)
    return t, u, y


def identify(scenario: Scenario, plant: PlantParams, model: LinearMap | None = None,
             dz_params: DzParams | None = None) -> FopdtParams:
    t, u, y = step_response(scenario, plant, model, dz_params)
    return fit_fopdt(t, u, y)


def default_step() -> Scenario:
    return load_config(BUILTIN_PREFIX + "step").scenario


def resolve_gains(cfg: Config) -> PidGains:
    """Gains from the ``pid.*`` keys, or IMC-tuned on the plant's step response when ``pid.g_p`` is unset."""
    p = cfg.pid
    if p.g_p is not None:
        return PidGains(p.g_p, p.ratio_i, p.ratio_d, p.filter_tau)
    step = cfg.scenario if cfg.scenario.command is not None else default_step()
    fp = identify(step, cfg.plant)
    return tune_pid_from_fopdt(fp, cfg.closed_loop_tau, p.filter_tau)
