import math
from dataclasses import replace

import numpy as np
import pytest

from nestcell.calibration import (
    EMBEDDED_PASS_OFFSET,
    calibrate_injection,
    paraxial_cycle,
    refine_rotating_orbit,
)
from nestcell.config import default_config
from nestcell.errors import NoValidInjection
from nestcell.geometry import CellConfig, EXITED_THROUGH_ENTRY_PUPIL, trace_cell

CFG = default_config()


def test_paraxial_cycle_minimum_at_embedded_offset():
    theta, states = paraxial_cycle(CFG.cell)
    radii = [abs(s[0]) for s in states]
    assert int(np.argmin(radii)) == EMBEDDED_PASS_OFFSET
    # symmetric profile about the kick: positions 3 and 5 share a radius
    assert radii[3] == pytest.approx(radii[5], rel=1e-9)
    assert radii[0] == pytest.approx(radii[2], rel=1e-9)
    assert math.degrees(theta) == pytest.approx(177.559, abs=1e-3)


def test_calibration_reproduces_shipped_reference():
    sol = calibrate_injection(CFG.cell)
    assert sol.entry_radius == pytest.approx(CFG.injection.entry_radius_mm,
                                             abs=1e-9)
    assert sol.tilt_x == pytest.approx(CFG.injection.tilt_x, abs=1e-12)
    assert sol.tilt_y == pytest.approx(CFG.injection.tilt_y, abs=1e-12)
    assert sol.pupil_radius_exit == pytest.approx(CFG.cell.pupil_radius_pos,
                                                  abs=1e-9)
    assert sol.max_clean_pass >= 6 * 63 + 1
    assert sol.diagnostics["embedded_periodic"]


def test_calibrated_orbit_rings_are_tight():
    sol = calibrate_injection(CFG.cell)
    spreads = sol.diagnostics["family_radius_spread_mm"]
    assert max(spreads.values()) < 1e-9


def test_refinement_residual_small():
    sol = calibrate_injection(CFG.cell)
    assert sol.diagnostics["refine_residual"] < 1e-10


def test_zone_clearances():
    sol = calibrate_injection(CFG.cell)
    rr = sol.ring_radii
    assert rr["embedded_ring"] < CFG.cell.r_inner - 0.8
    assert rr["mirror2_secondary"] > CFG.cell.r_inner + 0.8
    assert rr["exit_ring"] + CFG.cell.pupil_r <= CFG.cell.r_outer
    assert sol.diagnostics["min_exit_family_separation_mm"] > 1.5


def test_plain_cell_reentrant_single_ring():
    cell = CellConfig(r_outer=50.8, r_inner=50.8, R_outer=3355.0, R_inner=3355.0,
                      d=541.0, pupil_radius_pos=40.0, pupil_radius_entry=40.0,
                      pupil_azimuth_exit=None)
    sol = calibrate_injection(cell, exit_ring_radius=40.0)
    assert sol.ring_radii == {"ring": 40.0}
    # classic re-entrance: the orbit eventually returns to the entry pupil
    plugged = replace(cell, pupil_azimuth_exit=None)
    path = trace_cell(plugged, sol.entry_ray(plugged), max_passes=400)
    assert path.exit_event.kind == EXITED_THROUGH_ENTRY_PUPIL


def test_unstable_cell_no_valid_injection():
    cell = replace(CFG.cell, d=4500.0)
    with pytest.raises(NoValidInjection):
        calibrate_injection(cell)


def test_infeasible_ring_no_valid_injection():
    # an exit ring far too small cannot keep the annulus clear of the
    # embedded zone
    with pytest.raises(NoValidInjection):
        calibrate_injection(CFG.cell, exit_ring_radius=20.0)


def test_refine_rejects_garbage_seed():
    with pytest.raises(NoValidInjection):
        refine_rotating_orbit(CFG.cell, 41.7, complex(0.3, 0.3), 3.0)
