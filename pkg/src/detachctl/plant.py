"""Synthetic divertor plant and frame renderers.

The plant has one scalar state, the emission front height.  It is tracked
as the fraction ``dz_true`` of the leg between strike point (0) and X-point
(1) so that scripted geometry changes keep the fraction fixed.  The front
relaxes with time constant ``gas_tau`` towards a static equilibrium
``dz_eq(u)`` of the delayed gas command ``u``:

* below ``cliff_center`` the map is linear with slope ``gain / leg_length``;
* above it the slope is multiplied by ``cliff_steepen``;
* the slope is further attenuated by ``1 - xpoint_rolloff * dz**4``.

With ``cliff_steepen = 1`` and ``xpoint_rolloff = 0`` the plant is exactly a
first-order-plus-dead-time system in DZ units, ``k = gain / leg_length``.

The camera view shifts the apparent blob height by
``view_slope * (r_x - view_r_edge) * leg_length``; the inverted-emissivity
view is geometry-true.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import DelayLine
from .core import Frame, GeometryState, PixelCalibration, physical_to_pixel, xpoint_column
from .errors import GeometryOffFrame, NonPositiveDt, ValidationError
from .preprocess import noise_stream

DZ_CEILING = 1.3
BLOB_CUTOFF = 4.0  # blob is truncated at this many sigmas


@dataclass(frozen=True)
class PlantParams:
    gas_dead_time: float = 0.2
    gas_tau: float = 0.3
    gain: float = 0.05             # m of front rise per command unit, linear region
    cliff_center: float = 0.5
    cliff_steepen: float = 1.5
    xpoint_rolloff: float = 0.1
    prad_coeff: float = 1.0
    prad_noise: float = 0.0        # absolute sigma of the proxy power
    noise_sigma: float = 0.5       # camera additive noise, counts
    # scene
    background: float = 5.0
    ring_amplitude: float = 40.0
    ring_z: float = -0.85
    ring_sigma: float = 0.015
    ring_r_max: float = 1.28       # ring occupies R < ring_r_max, independent of R_X
    blob_amplitude: float = 100.0
    blob_sigma_frac: float = 0.08  # vertical sigma as a fraction of leg length
    blob_sigma_r: float = 0.06
    leg_inset: float = 0.04        # leg radius at the X-point is r_x + leg_inset
    leg_dr: float = 0.0            # extra radius of the leg at the strike point
    view_slope: float = 2.1
    view_r_edge: float = 1.35
    bit_depth: int = 8             # camera digitisation; 0 keeps real-valued counts

    def __post_init__(self):
        if not self.gas_dead_time >= 0:
            raise ValidationError("gas_dead_time must be >= 0")
        if not self.gas_tau > 0:
            raise ValidationError("gas_tau must be > 0")
        if not self.cliff_steepen >= 1:
            raise ValidationError("cliff_steepen must be >= 1")
        if self.xpoint_rolloff < 0 or self.noise_sigma < 0 or self.prad_noise < 0:
            raise ValidationError("rolloff and noise levels must be >= 0")

    def linear(self) -> "PlantParams":
        """Copy with the cliff and X-point rolloff switched off."""
        return replace(self, cliff_steepen=1.0, xpoint_rolloff=0.0)


@dataclass
class PlantState:
    t: float
    dz_true: float
    geometry: GeometryState
    brightness: float = 1.0
    history: DelayLine = field(default=None, repr=False)

    @property
    def true_front_z(self) -> float:
        g = self.geometry
        return g.z_s + self.dz_true * (g.z_x - g.z_s)


def initial_state(params: PlantParams, geom: GeometryState, dz_true: float = 0.0, command: float = 0.0,
                  t: float = 0.0, brightness: float = 1.0) -> PlantState:
    line = DelayLine(params.gas_dead_time, initial=command)
    return PlantState(t, float(np.clip(dz_true, 0.0, DZ_CEILING)), geom, brightness, line)


def equilibrium_dz(params: PlantParams, geom: GeometryState, command: float) -> float:
    """Steady-state front fraction for a constant command."""
    x = params.gain * command / geom.leg_length
    c = params.cliff_center
    if x > c:
        x = c + params.cliff_steepen * (x - c)
    if x > 0 and params.xpoint_rolloff > 0:
        # past the knee the attenuated slope would turn negative: hold the peak
        knee = params.xpoint_rolloff ** -0.25
        x = min(x, knee)
        x = x - params.xpoint_rolloff * x ** 5 / 5.0
    return float(np.clip(x, 0.0, DZ_CEILING))


def plant_step(state: PlantState, params: PlantParams, command: float, dt: float,
               geometry: GeometryState | None = None) -> PlantState:
    """Advance ``dt`` seconds under ``command`` issued now; mutates and returns ``state``.

    The command acting on the plant is the one issued ``gas_dead_time`` ago.
    ``geometry`` (if given) is the equilibrium at the end of the step.
    """
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    if state.history is None:
        state.history = DelayLine(params.gas_dead_time)
    state.history.push(state.t, command)
    u_eff = state.history.at(state.t)
    target = equilibrium_dz(params, state.geometry, u_eff)
    decay = math.exp(-dt / params.gas_tau)
    dz = target + (state.dz_true - target) * decay
    state.dz_true = float(np.clip(dz, 0.0, DZ_CEILING))
    state.t = state.t + dt
    if geometry is not None:
        state.geometry = geometry
    return state


def proxy_prad(state: PlantState, params: PlantParams, seed: int = 0, tick: int = 0) -> float:
    """Quadratic-in-DZ stand-in for lower-divertor radiated power."""
    value = params.prad_coeff * state.dz_true ** 2
    if params.prad_noise > 0:
        value += params.prad_noise * float(noise_stream(seed, (1 << 40) + tick, 1)[0])
    return value


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _grid(cal: PixelCalibration, shape):
    h, w = shape
    rr = cal.r0 + np.arange(w) * cal.dr
    zz = cal.z0 + np.arange(h) * cal.dz
    return rr, zz


def leg_radius(params: PlantParams, geom: GeometryState, dz_true: float) -> float:
    return geom.r_x + params.leg_inset + params.leg_dr * float(np.clip(1.0 - dz_true, 0.0, 1.0))


def apparent_shift(params: PlantParams, geom: GeometryState) -> float:
    """Vertical offset of the blob in the camera view (meters)."""
    return params.view_slope * (geom.r_x - params.view_r_edge) * geom.leg_length


def _blob(params, rr, zz, r_c, z_c, leg):
    sz = params.blob_sigma_frac * leg
    sr = params.blob_sigma_r
    uz = (zz - z_c) / sz
    ur = (rr - r_c) / sr
    gz = np.where(np.abs(uz) <= BLOB_CUTOFF, np.exp(-0.5 * uz ** 2), 0.0)
    gr = np.where(np.abs(ur) <= BLOB_CUTOFF, np.exp(-0.5 * ur ** 2), 0.0)
    return params.blob_amplitude * np.outer(gz, gr)


def _ring(params, rr, zz):
    gz = np.exp(-0.5 * ((zz - params.ring_z) / params.ring_sigma) ** 2)
    gr = (rr < params.ring_r_max).astype(np.float64)
    return params.ring_amplitude * np.outer(gz, gr)


def _check_in_frame(cal, shape, geom, r_c, z_c):
    h, w = shape
    if not 0 <= xpoint_column(cal, geom.r_x) < w:
        raise GeometryOffFrame(f"X-point R={geom.r_x} outside the frame")
    row, col = physical_to_pixel(cal, r_c, z_c)
    if not (0 <= row <= h - 1 and 0 <= col <= w - 1):
        raise GeometryOffFrame(f"emission blob at R={r_c:.3f}, Z={z_c:.3f} outside the frame")


def render_scene(state: PlantState, params: PlantParams, cal: PixelCalibration, shape) -> np.ndarray:
    """Noise-free camera scene at unit brightness."""
    geom = state.geometry
    r_c = leg_radius(params, geom, state.dz_true)
    z_c = state.true_front_z + apparent_shift(params, geom)
    _check_in_frame(cal, shape, geom, r_c, z_c)
    rr, zz = _grid(cal, shape)
    return params.background + _ring(params, rr, zz) + _blob(params, rr, zz, r_c, z_c, geom.leg_length)


def render_camera_frame(state: PlantState, params: PlantParams, cal: PixelCalibration,
                        shape=(120, 180), seed: int = 0, tick: int = 0) -> Frame:
    img = state.brightness * render_scene(state, params, cal, shape)
    if params.noise_sigma > 0:
        img = img + params.noise_sigma * noise_stream(seed, tick, img.size).reshape(img.shape)
    return Frame(digitize(img, params.bit_depth), "raw_camera")


def digitize(values: np.ndarray, bit_depth: int) -> np.ndarray:
    """Round to integer counts and saturate; ``bit_depth=0`` only clamps at zero."""
    if bit_depth <= 0:
        return np.maximum(values, 0.0)
    return np.clip(np.rint(values), 0.0, float(2 ** bit_depth - 1))


def render_inverted_emissivity(state: PlantState, params: PlantParams, cal: PixelCalibration,
                               shape=(120, 180)) -> Frame:
    """Geometry-true emissivity: ring plus front blob centred at ``true_front_z``."""
    geom = state.geometry
    r_c = leg_radius(params, geom, state.dz_true)
    z_c = state.true_front_z
    _check_in_frame(cal, shape, geom, r_c, z_c)
    rr, zz = _grid(cal, shape)
    img = _ring(params, rr, zz) + _blob(params, rr, zz, r_c, z_c, geom.leg_length)
    return Frame(img, "inverted_emissivity")
