import json
from dataclasses import replace

import numpy as np
import pytest

from nestcell.cli import main
from nestcell.config import (default_config, load_coating, load_config,
                             packaged_coating_path, write_config)
from nestcell.errors import ConfigError


def test_config_roundtrip(tmp_path):
    cfg = default_config()
    p = tmp_path / "run.cfg"
    write_config(cfg, p)
    back = load_config(p)
    assert back == cfg                      # dataclass equality, floats exact


def test_config_roundtrip_with_overrides(tmp_path):
    cfg = default_config()
    cfg = replace(cfg, wavelength_nm=532.0, delay_setting_i=None,
                  cell=replace(cfg.cell, pupil_azimuth_exit=None,
                               inner_offset_z=1.25),
                  tomography=replace(cfg.tomography, n_settings=36, seed=7))
    p = tmp_path / "run.cfg"
    write_config(cfg, p)
    assert load_config(p) == cfg


def test_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/no/such/file.cfg")


def test_config_bad_float(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[cell]\nseparation_mm = not_a_number\n")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert "separation_mm" in str(err.value)


def test_config_unstable_geometry(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[cell]\nseparation_mm = 9000.0\n")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert "stability" in str(err.value)


def test_packaged_coating_exists():
    curve = load_coating(default_config())
    assert packaged_coating_path().exists()
    assert (curve.reflectances > 0).all() and (curve.reflectances <= 1).all()


# ------------------------------------------------------------------ CLI

def test_cli_trace_setting3(tmp_path):
    out = tmp_path / "t"
    rc = main(["trace", "--out", str(out), "--setting-i", "3"])
    assert rc == 0
    lines = (out / "spots.csv").read_text().splitlines()
    data = [ln for ln in lines if not ln.startswith("#")][1:]
    assert len(data) == 18
    svg = (out / "exit_mirror.svg").read_text()
    # 9 spots + aperture outline + embedded outline + pupil outline
    assert svg.count("<circle") == 12
    assert (out / "entry_mirror.svg").exists()
    assert (out / "spot_pattern.png").exists()
    assert "exited_through_pupil" in (out / "summary.txt").read_text()


def test_cli_trace_unstable_cell_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[cell]\nseparation_mm = 9000.0\n")
    rc = main(["trace", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "stability" in capsys.readouterr().err


def test_cli_missing_config_exit_code(tmp_path):
    rc = main(["delay-table", "--config", "/no/file.cfg",
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_delay_table_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["delay-table", "--out", str(out1), "--i-max", "4"]) == 0
    assert main(["delay-table", "--out", str(out2), "--i-max", "4"]) == 0
    assert (out1 / "delay_table.csv").read_bytes() \
        == (out2 / "delay_table.csv").read_bytes()


def test_cli_trace_svg_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["trace", "--out", str(out), "--setting-i", "7"]) == 0
    for name in ("entry_mirror.svg", "exit_mirror.svg", "spots.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_tomography_qst_noiseless(tmp_path):
    out = tmp_path / "q"
    rc = main(["tomography", "--mode", "qst", "--noiseless",
               "--out", str(out), "--setting-i", "3"])
    assert rc == 0
    report = json.loads((out / "qst_report.json").read_text())
    assert report["fidelity_to_input"] >= 1 - 1e-6
    assert (out / "counts.csv").exists()
    assert (out / "rho.png").exists()


def test_cli_tomography_qpt_noiseless(tmp_path):
    out = tmp_path / "q"
    rc = main(["tomography", "--mode", "qpt", "--noiseless",
               "--out", str(out), "--setting-i", "3"])
    assert rc == 0
    report = json.loads((out / "qpt_report.json").read_text())
    assert report["chi00"] >= 1 - 1e-6
    assert report["normalization"] == "trace-1"


def test_cli_tomography_json_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["tomography", "--mode", "qst", "--out", str(out),
                     "--seed", "77", "--ensemble", "2",
                     "--setting-i", "3"]) == 0
    assert (out1 / "qst_report.json").read_bytes() \
        == (out2 / "qst_report.json").read_bytes()
    assert (out1 / "counts.csv").read_bytes() == (out2 / "counts.csv").read_bytes()


def test_cli_histogram_overlay(tmp_path):
    out = tmp_path / "h"
    rc = main(["histogram", "--out", str(out), "--settings-i", "3,32,63"])
    assert rc == 0
    peaks = json.loads((out / "histogram_peaks.json").read_text())["peaks"]
    assert [p["i"] for p in peaks] == [3, 32, 63]
    assert (out / "histogram_overlay.csv").exists()
    assert (out / "histogram_overlay.png").exists()


def test_cli_calibrate_injection_roundtrip(tmp_path):
    out = tmp_path / "c"
    rc = main(["calibrate-injection", "--out", str(out)])
    assert rc == 0
    frag = load_config(out / "injection.cfg")
    ref = default_config()
    assert frag.injection.entry_radius_mm \
        == pytest.approx(ref.injection.entry_radius_mm, abs=1e-9)
    assert frag.injection.tilt_x == pytest.approx(ref.injection.tilt_x, abs=1e-12)
    assert frag.cell.pupil_radius_pos \
        == pytest.approx(ref.cell.pupil_radius_pos, abs=1e-9)


def test_cli_efficiency_and_tbp(tmp_path):
    out = tmp_path / "e"
    assert main(["efficiency", "--out", str(out), "--n-reflections", "378"]) == 0
    rep = json.loads((out / "efficiency.json").read_text())
    assert 0.95 < rep["efficiency"] < 0.97
    assert main(["tbp", "--out", str(out)]) == 0
    rep = json.loads((out / "tbp.json").read_text())
    assert rep["bandwidth_thz"] == pytest.approx(56.4, rel=5e-3)


def test_cli_fiber_compare(tmp_path):
    out = tmp_path / "f"
    assert main(["fiber-compare", "--out", str(out)]) == 0
    assert (out / "fiber_compare.csv").exists()
    assert (out / "fiber_compare.png").exists()


def test_cli_channel(tmp_path):
    out = tmp_path / "ch"
    assert main(["channel", "--out", str(out), "--n-reflections", "100"]) == 0
    rep = json.loads((out / "chi.json").read_text())
    assert rep["process_fidelity_to_identity"] == pytest.approx(1.0, abs=1e-9)
    chi = np.array([[complex(re, im) for re, im in row] for row in rep["chi"]])
    assert chi[0, 0].real == pytest.approx(1.0, abs=1e-9)
