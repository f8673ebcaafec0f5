import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detachctl.control import FopdtParams
from detachctl.core import DEFAULT_GEOMETRY, GeometryState, PixelCalibration, physical_to_pixel, xpoint_column
from detachctl.errors import AllZeroOutboard, GeometryOffFrame, NonPositiveDt, ValidationError
from detachctl.labeling import emission_row, label_emission_height
from detachctl.plant import (DZ_CEILING, PlantParams, equilibrium_dz, initial_state, plant_step, proxy_prad,
                             render_camera_frame, render_inverted_emissivity, render_scene)

DT = 1.0 / 30.0
CAL = PixelCalibration.desk()
CLEAN = PlantParams(noise_sigma=0.0, bit_depth=0)


def test_zero_command_at_strike_point_is_a_fixed_point():
    s = initial_state(PlantParams(), DEFAULT_GEOMETRY, 0.0)
    for _ in range(100):
        plant_step(s, PlantParams(), 0.0, DT)
    assert s.dz_true == 0.0 and s.true_front_z == DEFAULT_GEOMETRY.z_s
    assert s.t == pytest.approx(100 * DT)


def test_linear_plant_is_exactly_fopdt():
    p = PlantParams().linear()
    u0, du = 1.0, 0.5
    s = initial_state(p, DEFAULT_GEOMETRY, equilibrium_dz(p, DEFAULT_GEOMETRY, u0), command=u0)
    t = np.arange(150) * DT
    u = np.where(t >= 1.0, u0 + du, u0)
    y = np.empty_like(t)
    for i in range(t.size):
        y[i] = s.dz_true
        plant_step(s, p, u[i], DT)
    k = p.gain / DEFAULT_GEOMETRY.leg_length
    ref = FopdtParams(k, p.gas_tau, p.gas_dead_time).step_response(t, t[np.argmax(u > u0)], du, k * u0)
    move = k * du
    assert np.sqrt(np.mean((y - ref) ** 2)) <= 0.02 * move
    assert y[0] == pytest.approx(k * u0)


def test_saturation_approaches_but_never_exceeds_ceiling():
    p = PlantParams()
    s = initial_state(p, DEFAULT_GEOMETRY, 0.5)
    for _ in range(600):
        plant_step(s, p, 1e6, DT)
        assert s.dz_true <= DZ_CEILING
    assert s.dz_true == pytest.approx(DZ_CEILING, abs=1e-6)
    assert s.true_front_z <= DEFAULT_GEOMETRY.z_x + 0.3 * DEFAULT_GEOMETRY.leg_length + 1e-15


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 60), b=st.floats(0, 60))
def test_equilibrium_is_monotone(a, b):
    p = PlantParams()
    lo, hi = min(a, b), max(a, b)
    assert equilibrium_dz(p, DEFAULT_GEOMETRY, lo) <= equilibrium_dz(p, DEFAULT_GEOMETRY, hi)


def test_cliff_steepens_the_static_gain():
    p = PlantParams(xpoint_rolloff=0.0)
    g = DEFAULT_GEOMETRY
    slope = lambda u: (equilibrium_dz(p, g, u + 1e-4) - equilibrium_dz(p, g, u)) / 1e-4
    assert slope(1.0) == pytest.approx(0.2, rel=1e-6)    # dz 0.2, below the cliff
    assert slope(4.0) == pytest.approx(0.2 * p.cliff_steepen, rel=1e-6)  # raw 0.8, above it


def test_plant_validation():
    with pytest.raises(ValidationError):
        PlantParams(gas_tau=0.0)
    with pytest.raises(ValidationError):
        PlantParams(gas_dead_time=-0.1)
    with pytest.raises(ValidationError):
        PlantParams(cliff_steepen=0.9)
    with pytest.raises(NonPositiveDt):
        plant_step(initial_state(PlantParams(), DEFAULT_GEOMETRY), PlantParams(), 1.0, 0.0)


def test_renders_are_deterministic_and_seeded():
    s = initial_state(PlantParams(), DEFAULT_GEOMETRY, 0.6)
    a = render_camera_frame(s, CLEAN, CAL)
    assert np.array_equal(a.intensities, render_camera_frame(s, CLEAN, CAL).intensities)
    n1 = render_camera_frame(s, PlantParams(), CAL, seed=3, tick=8)
    assert np.array_equal(n1.intensities, render_camera_frame(s, PlantParams(), CAL, seed=3, tick=8).intensities)
    assert not np.array_equal(n1.intensities, render_camera_frame(s, PlantParams(), CAL, seed=3, tick=9).intensities)
    assert n1.kind == "raw_camera" and np.all(n1.flat == np.rint(n1.flat)) and n1.flat.max() <= 255


def test_brightness_scales_every_pixel():
    s = initial_state(CLEAN, DEFAULT_GEOMETRY, 0.6)
    one = render_camera_frame(s, CLEAN, CAL).intensities
    s.brightness = 2.0
    assert np.array_equal(render_camera_frame(s, CLEAN, CAL).intensities, 2.0 * one)


def blob_row_centroid(frame, params, geom):
    jx = xpoint_column(CAL, geom.r_x)
    img = frame.intensities[:, jx:] - params.background
    rows = np.arange(frame.height)
    sums = img.sum(axis=1)
    return float(rows @ sums / sums.sum())


def test_front_travel_spans_the_leg_in_rows():
    g = DEFAULT_GEOMETRY
    lo = blob_row_centroid(render_camera_frame(initial_state(CLEAN, g, 0.0), CLEAN, CAL), CLEAN, g)
    hi = blob_row_centroid(render_camera_frame(initial_state(CLEAN, g, 1.0), CLEAN, CAL), CLEAN, g)
    assert lo - hi == pytest.approx(g.leg_length / abs(CAL.dz), abs=0.05)


def test_camera_and_inverted_agree_at_the_shelf_edge():
    g = DEFAULT_GEOMETRY  # r_x = view_r_edge: no apparent shift
    for dz in (0.1, 0.5, 0.9, 1.2):
        s = initial_state(CLEAN, g, dz)
        cam = blob_row_centroid(render_camera_frame(s, CLEAN, CAL), CLEAN, g)
        inv = emission_row(render_inverted_emissivity(s, CLEAN, CAL), xpoint_column(CAL, g.r_x), "mean")
        assert abs(cam - inv) <= 1.0


def test_camera_view_shifts_with_radius():
    g = GeometryState(1.45, -1.0, -1.25)
    s = initial_state(CLEAN, g, 0.5)
    cam = blob_row_centroid(render_camera_frame(s, CLEAN, CAL), CLEAN, g)
    _, z_expected = CAL.r0, s.true_front_z + CLEAN.view_slope * 0.1 * g.leg_length
    assert cam == pytest.approx(physical_to_pixel(CAL, 1.5, z_expected)[0], abs=0.05)


def test_inverted_label_closes_on_true_front():
    rng = np.random.default_rng(11)
    p = PlantParams()
    for _ in range(100):
        r_x = rng.uniform(1.30, 1.55)
        z_x = -1.0 + rng.uniform(-0.03, 0.03)
        g = GeometryState(r_x, z_x, z_x - rng.uniform(0.2, 0.3))
        s = initial_state(p, g, rng.uniform(0.0, 1.3))
        z = label_emission_height(render_inverted_emissivity(s, p, CAL), CAL, g)
        assert abs(z - s.true_front_z) <= abs(CAL.dz)


def test_blob_inboard_of_xpoint_has_nothing_to_label():
    p = replace(PlantParams(), leg_inset=-0.35)
    s = initial_state(p, DEFAULT_GEOMETRY, 0.5)
    with pytest.raises(AllZeroOutboard):
        label_emission_height(render_inverted_emissivity(s, p, CAL), CAL, DEFAULT_GEOMETRY)


def test_off_frame_geometry():
    s = initial_state(PlantParams(), GeometryState(2.5, -1.0, -1.25), 0.5)
    with pytest.raises(GeometryOffFrame):
        render_camera_frame(s, PlantParams(), CAL)
    with pytest.raises(GeometryOffFrame):
        render_inverted_emissivity(s, PlantParams(), CAL)


def test_proxy_power():
    p = PlantParams()
    s = initial_state(p, DEFAULT_GEOMETRY, 0.0)
    assert proxy_prad(s, p) == 0.0
    dz = np.linspace(0, 1.3, 14)
    vals = []
    for v in dz:
        s.dz_true = float(v)
        vals.append(proxy_prad(s, p))
    assert np.allclose(vals, p.prad_coeff * dz ** 2, rtol=0, atol=1e-15)
    assert np.corrcoef(dz ** 2, vals)[0, 1] == pytest.approx(1.0, abs=1e-12)
    noisy = replace(p, prad_noise=0.05)
    s.dz_true = 0.8
    assert proxy_prad(s, noisy, 1, 4) == proxy_prad(s, noisy, 1, 4) != proxy_prad(s, noisy, 1, 5)


def test_scene_is_background_ring_and_blob():
    s = initial_state(CLEAN, DEFAULT_GEOMETRY, 0.5)
    img = render_scene(s, CLEAN, CAL, (120, 180))
    assert img.min() == pytest.approx(CLEAN.background)
    ring_row = int(round(physical_to_pixel(CAL, 1.1, CLEAN.ring_z)[0]))
    assert img[ring_row, 10] == pytest.approx(CLEAN.background + CLEAN.ring_amplitude, rel=1e-3)
    assert img[ring_row, 170] == pytest.approx(CLEAN.background)
