import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestcell.calibration import calibrate_injection
from nestcell.config import default_config, load_coating
from nestcell.constants import C_MM_PER_NS
from nestcell.delays import (
    CoatingCurve,
    bandwidth_nm_to_thz,
    delay_table,
    delay_time,
    delay_time_ns,
    fiber_efficiency,
    fiber_length_m,
    geometric_increment_ns,
    reflectance_from_efficiency,
    time_bandwidth_product,
    transmission_efficiency,
)
from nestcell.errors import NoExit, OutOfBand
from nestcell.geometry import trace_cell

CFG = default_config()

# measured characterization of the reference cell: (reflections, efficiency,
# per-reflection reflectance)
MEASURED_ROWS = [
    (18, 0.99680, 0.99982),
    (42, 0.99370, 0.99985),
    (192, 0.98060, 0.99989),
    (204, 0.97480, 0.99988),
    (228, 0.96770, 0.99986),
    (378, 0.95390, 0.99988),
]


def flat_curve(r=0.9999):
    return CoatingCurve(np.array([400.0, 700.0]), np.array([r, r]))


# ------------------------------------------------------------- delay time

def test_delay_time_definition_of_c():
    from nestcell.geometry import EXITED_THROUGH_PUPIL, ExitEvent, TracePath
    path = TracePath([], ExitEvent(EXITED_THROUGH_PUPIL, 1), 299.792458)
    assert delay_time(path) * 1e9 == pytest.approx(1.0, rel=1e-12)


def test_delay_time_requires_exit():
    entry = CFG.injection.entry_ray(CFG.cell)
    path = trace_cell(replace(CFG.cell, pupil_azimuth_exit=None), entry,
                      max_passes=10)
    with pytest.raises(NoExit):
        delay_time(path)


def test_reference_max_delay_matches_naive_oracle():
    entry = CFG.injection.entry_ray(CFG.cell)
    path = trace_cell(CFG.cell, entry, max_passes=390)
    assert path.n_reflections == 378
    naive = 379 * CFG.cell.d / C_MM_PER_NS           # (N+1) d / c
    assert delay_time_ns(path) == pytest.approx(naive, rel=5e-3)
    # measured value for this setting is 687 ns; geometric model within 2%
    assert delay_time_ns(path) == pytest.approx(687.0, rel=0.02)


def test_shortest_measured_setting_delay():
    sol = calibrate_injection(CFG.cell, i_max=3)
    rows = delay_table(CFG.cell, sol, i_max=3)
    row = rows[3]
    assert row.n_spots == 18
    naive = 19 * CFG.cell.d / C_MM_PER_NS
    assert row.delay_ns == pytest.approx(naive, rel=5e-3)
    # measured 36 ns; geometric model within 6%
    assert row.delay_ns == pytest.approx(36.0, rel=0.06)


def test_delay_table_monotone_with_six_pass_steps():
    sol = calibrate_injection(CFG.cell, i_max=12)
    rows = delay_table(CFG.cell, sol, i_max=12)
    assert all(r.status == "ok" for r in rows)
    assert rows[0].delay_ns == pytest.approx(CFG.cell.d / C_MM_PER_NS, rel=5e-3)
    inc = geometric_increment_ns(CFG.cell)
    for a, b in zip(rows, rows[1:]):
        assert b.n_spots - a.n_spots == 6
        assert b.delay_ns > a.delay_ns
        assert b.delay_ns - a.delay_ns == pytest.approx(inc, abs=0.02)


# ------------------------------------------------------------- efficiency

def test_transmission_uniform_examples():
    assert transmission_efficiency(0, flat_curve(), 565.0) == pytest.approx(1.0)
    assert transmission_efficiency(0, flat_curve(), 565.0, 0.3) \
        == pytest.approx(0.7)
    # exp(378 ln 0.9999)
    assert transmission_efficiency(378, flat_curve(0.9999), 565.0) \
        == pytest.approx(math.exp(378 * math.log(0.9999)), rel=1e-12)
    assert transmission_efficiency(378, flat_curve(0.9999), 565.0) \
        == pytest.approx(0.96290, abs=5e-5)
    # measured-scale anchor: R = 0.999889 over 378 bounces
    eta = transmission_efficiency(378, flat_curve(0.999889), 565.0)
    assert eta == pytest.approx(0.9590, abs=2e-4)
    assert eta > 0.95390            # the measured value includes excess loss


def test_transmission_out_of_band():
    with pytest.raises(OutOfBand):
        transmission_efficiency(10, flat_curve(), 900.0)


def test_reflectance_inversion_examples():
    assert reflectance_from_efficiency(0.99680, 18) \
        == pytest.approx(0.999822, abs=1e-6)
    assert reflectance_from_efficiency(0.98060, 192) \
        == pytest.approx(0.999898, abs=1e-6)
    assert reflectance_from_efficiency(1.0, 77) == 1.0


def test_measured_rows_invert_within_2e5():
    for n, eta, r in MEASURED_ROWS:
        assert abs(reflectance_from_efficiency(eta, n) - r) <= 2e-5


def test_reflectance_invalid_inputs():
    with pytest.raises(ValueError):
        reflectance_from_efficiency(0.0, 10)
    with pytest.raises(ValueError):
        reflectance_from_efficiency(0.5, 0)


@given(st.integers(min_value=1, max_value=1000),
       st.floats(min_value=0.9, max_value=1.0))
@settings(max_examples=60, deadline=None)
def test_roundtrip_identity(n, r):
    eta = transmission_efficiency(n, flat_curve(r), 565.0)
    assert reflectance_from_efficiency(eta, n) == pytest.approx(r, abs=1e-12)


@given(st.integers(min_value=0, max_value=400),
       st.floats(min_value=0.9, max_value=0.99999))
@settings(max_examples=40, deadline=None)
def test_monotonicity(n, r):
    eta = transmission_efficiency(n, flat_curve(r), 565.0)
    assert transmission_efficiency(n + 7, flat_curve(r), 565.0) <= eta
    assert transmission_efficiency(n, flat_curve(min(r + 1e-4, 1.0)), 565.0) >= eta


# ------------------------------------------------------------- bandwidth/tbp

def test_bandwidth_reference_band():
    assert bandwidth_nm_to_thz(565.0, 60.0) == pytest.approx(56.4, rel=5e-3)
    assert bandwidth_nm_to_thz(565.0, 0.0) == 0.0
    # lambda^2 scaling: doubling the wavelength quarters the bandwidth
    assert bandwidth_nm_to_thz(1130.0, 60.0) \
        == pytest.approx(bandwidth_nm_to_thz(565.0, 60.0) / 4, rel=1e-12)


def test_tbp_values():
    assert time_bandwidth_product(1.0, 1.0) == pytest.approx(1000.0)
    assert time_bandwidth_product(56.4, 687.0) == pytest.approx(3.87e7, rel=0.01)
    assert time_bandwidth_product(56.4, 36.0) == pytest.approx(2.03e6, rel=0.01)


# ------------------------------------------------------------- fiber

def test_fiber_reference_point():
    eff = fiber_efficiency(687.0, 0.15, 0.2, 1.46)
    assert fiber_length_m(687.0, 1.46) == pytest.approx(141.0, abs=0.5)
    assert 0.94 <= eff <= 0.96


def test_fiber_zero_delay():
    assert fiber_efficiency(0.0, 0.15, 0.2) == pytest.approx(10 ** -0.02)


def test_fiber_visible_wavelength_class():
    # 460HP-class attenuation at the signal wavelength: ~60% loss at 687 ns
    eff = fiber_efficiency(687.0, 28.0, 0.2, 1.46)
    assert eff == pytest.approx(0.40, abs=0.05)


@given(st.floats(min_value=1.0, max_value=900.0),
       st.floats(min_value=1.0, max_value=900.0))
@settings(max_examples=40, deadline=None)
def test_fiber_log_linearity(d1, d2):
    # log10(eff) is affine in delay with slope -(attenuation c / n_g)/10
    a, c = 0.3, 0.2
    l1 = math.log10(fiber_efficiency(d1, a, c))
    l2 = math.log10(fiber_efficiency(d2, a, c))
    slope = -(a * (299792458.0 / 1.46) * 1e-9 / 1e3) / 10.0
    assert l2 - l1 == pytest.approx(slope * (d2 - d1), abs=1e-9)


# ------------------------------------------------------------- coating IO

def test_coating_roundtrip(tmp_path):
    curve = load_coating(CFG)
    p = tmp_path / "c.csv"
    curve.to_csv(p)
    back = CoatingCurve.from_csv(p)
    assert np.allclose(back.wavelengths_nm, curve.wavelengths_nm)
    assert np.allclose(back.reflectances, curve.reflectances, atol=1e-9)


def test_coating_validation():
    with pytest.raises(ValueError):
        CoatingCurve(np.array([500.0, 500.0]), np.array([0.9, 0.9]))
    with pytest.raises(ValueError):
        CoatingCurve(np.array([500.0, 600.0]), np.array([0.9, 1.1]))


def test_packaged_curve_band():
    curve = load_coating(CFG)
    assert curve.reflectance_at(565.0) == pytest.approx(0.99989, abs=1e-6)
    for w in (535.0, 595.0):
        assert curve.reflectance_at(w) > 0.9998
