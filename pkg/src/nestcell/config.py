"""Run configuration: flat key/value files with one section per module.

The format is INI (configparser), chosen for diffability in experiment
logs. Floats are written with ``repr`` so a write/read cycle reproduces
values bit-exactly. ``default_config()`` carries the calibrated
reference injection for the shipped cell geometry; regenerate it with
the ``calibrate-injection`` CLI command after changing the geometry.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geometry import CellConfig, Ray


@dataclass(frozen=True)
class InjectionSpec:
    """Reference injection in the rotatable (radius, azimuth, tilts) form.

    Tilts are the outgoing slope components in the azimuth-0 frame;
    rotating ``entry_azimuth_deg`` rotates the whole injection rigidly,
    matching the cell's rotational symmetry.
    """

    entry_radius_mm: float = 41.72996709882844
    entry_azimuth_deg: float = 0.0
    tilt_x: float = 0.008274080204535926
    tilt_y: float = -0.017997534691929166

    def entry_ray(self, cell: CellConfig) -> Ray:
        a = math.radians(self.entry_azimuth_deg)
        c, s = math.cos(a), math.sin(a)
        sag = cell.surface_sag(1, "outer", self.entry_radius_mm)
        origin = np.array([self.entry_radius_mm * c, self.entry_radius_mm * s, sag])
        v = np.array([self.tilt_x, self.tilt_y, 1.0])
        v = v / np.linalg.norm(v)
        direction = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])
        return Ray(origin, direction)


@dataclass(frozen=True)
class ChannelSpec:
    retardance_rad: float = 0.0
    diattenuation: float = 0.0
    axis_azimuth_rad: float = 0.0
    depolarizing_p: float = 0.0
    loss_tracking: bool = False


@dataclass(frozen=True)
class TomographySpec:
    pair_rate_hz: float = 5000.0
    integration_time_s: float = 2.0
    accidental_rate_hz: float = 0.0
    n_settings: int = 16
    seed: int = 20260809
    jitter_ps: float = 450.0
    bin_width_ps: float = 100.0
    n_events: int = 100_000
    systemic_offset_ns: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    cell: CellConfig = field(default_factory=CellConfig)
    injection: InjectionSpec = field(default_factory=InjectionSpec)
    coating_csv: str = ""               # empty = packaged reference curve
    excess_loss: float = 0.0
    wavelength_nm: float = 562.7
    beam_waist_mm: float = 0.44
    delay_setting_i: Optional[int] = 63
    delay_calibration_offset_ns: float = 0.0
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    tomography: TomographySpec = field(default_factory=TomographySpec)
    output_dir: str = "out"


def default_config() -> RunConfig:
    return RunConfig()


_CELL_KEYS = {
    "r_outer": "r_outer_mm",
    "r_inner": "r_inner_mm",
    "R_outer": "roc_outer_mm",
    "R_inner": "roc_inner_mm",
    "d": "separation_mm",
    "t": "substrate_thickness_mm",
    "pupil_diameter": "pupil_diameter_mm",
    "pupil_radius_pos": "pupil_radius_exit_mm",
    "pupil_radius_entry": "pupil_radius_entry_mm",
    "pupil_azimuth_entry": "pupil_azimuth_entry_deg",
    "pupil_azimuth_exit": "pupil_azimuth_exit_deg",
    "inner_offset_z": "inner_offset_z_mm",
}


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(section: str, key: str, text: str, optional: bool = False):
    text = text.strip()
    if text.lower() == "none":
        if optional:
            return None
        raise ConfigError(f"[{section}] {key}: value required")
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse float from {text!r}")


def _parse_int(section: str, key: str, text: str, optional: bool = False):
    text = text.strip()
    if text.lower() == "none":
        if optional:
            return None
        raise ConfigError(f"[{section}] {key}: value required")
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse integer from {text!r}")


def _parse_bool(section: str, key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: cannot parse boolean from {text!r}")


def write_config(cfg: RunConfig, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    cp["cell"] = {ini: _fmt(getattr(cfg.cell, attr))
                  for attr, ini in _CELL_KEYS.items()}
    cp["injection"] = {
        "entry_radius_mm": _fmt(cfg.injection.entry_radius_mm),
        "entry_azimuth_deg": _fmt(cfg.injection.entry_azimuth_deg),
        "tilt_x": _fmt(cfg.injection.tilt_x),
        "tilt_y": _fmt(cfg.injection.tilt_y),
    }
    cp["coating"] = {
        "csv": cfg.coating_csv,
        "excess_loss": _fmt(cfg.excess_loss),
    }
    cp["channel"] = {k: _fmt(v) for k, v in asdict(cfg.channel).items()}
    cp["tomography"] = {k: _fmt(v) for k, v in asdict(cfg.tomography).items()}
    cp["run"] = {
        "wavelength_nm": _fmt(cfg.wavelength_nm),
        "beam_waist_mm": _fmt(cfg.beam_waist_mm),
        "delay_setting_i": _fmt(cfg.delay_setting_i),
        "delay_calibration_offset_ns": _fmt(cfg.delay_calibration_offset_ns),
        "output_dir": cfg.output_dir,
    }
    with open(path, "w") as fh:
        cp.write(fh)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    base = default_config()

    cell_kwargs = {}
    if cp.has_section("cell"):
        sec = cp["cell"]
        for attr, ini in _CELL_KEYS.items():
            if ini in sec:
                optional = attr in ("pupil_azimuth_exit", "pupil_radius_entry")
                cell_kwargs[attr] = _parse_float("cell", ini, sec[ini], optional)
    cell = replace(base.cell, **cell_kwargs)

    inj_kwargs = {}
    if cp.has_section("injection"):
        sec = cp["injection"]
        for key, attr in (("entry_radius_mm", "entry_radius_mm"),
                          ("entry_azimuth_deg", "entry_azimuth_deg"),
                          ("tilt_x", "tilt_x"), ("tilt_y", "tilt_y")):
            if key in sec:
                inj_kwargs[attr] = _parse_float("injection", key, sec[key])
    injection = replace(base.injection, **inj_kwargs)

    coating_csv = base.coating_csv
    excess = base.excess_loss
    if cp.has_section("coating"):
        sec = cp["coating"]
        coating_csv = sec.get("csv", coating_csv).strip()
        if "excess_loss" in sec:
            excess = _parse_float("coating", "excess_loss", sec["excess_loss"])
            if not 0.0 <= excess < 1.0:
                raise ConfigError("[coating] excess_loss must lie in [0, 1)")

    ch_kwargs = {}
    if cp.has_section("channel"):
        sec = cp["channel"]
        for key in ("retardance_rad", "diattenuation", "axis_azimuth_rad",
                    "depolarizing_p"):
            if key in sec:
                ch_kwargs[key] = _parse_float("channel", key, sec[key])
        if "loss_tracking" in sec:
            ch_kwargs["loss_tracking"] = _parse_bool(
                "channel", "loss_tracking", sec["loss_tracking"])
    channel = replace(base.channel, **ch_kwargs)

    tomo_kwargs = {}
    if cp.has_section("tomography"):
        sec = cp["tomography"]
        floats = ("pair_rate_hz", "integration_time_s", "accidental_rate_hz",
                  "jitter_ps", "bin_width_ps", "systemic_offset_ns")
        ints = ("n_settings", "seed", "n_events")
        for key in floats:
            if key in sec:
                tomo_kwargs[key] = _parse_float("tomography", key, sec[key])
        for key in ints:
            if key in sec:
                tomo_kwargs[key] = _parse_int("tomography", key, sec[key])
    tomography = replace(base.tomography, **tomo_kwargs)
    if tomography.n_settings not in (16, 36):
        raise ConfigError("[tomography] n_settings must be 16 or 36")

    run_kwargs = {}
    if cp.has_section("run"):
        sec = cp["run"]
        if "wavelength_nm" in sec:
            run_kwargs["wavelength_nm"] = _parse_float(
                "run", "wavelength_nm", sec["wavelength_nm"])
        if "beam_waist_mm" in sec:
            run_kwargs["beam_waist_mm"] = _parse_float(
                "run", "beam_waist_mm", sec["beam_waist_mm"])
        if "delay_setting_i" in sec:
            run_kwargs["delay_setting_i"] = _parse_int(
                "run", "delay_setting_i", sec["delay_setting_i"], optional=True)
        if "delay_calibration_offset_ns" in sec:
            run_kwargs["delay_calibration_offset_ns"] = _parse_float(
                "run", "delay_calibration_offset_ns",
                sec["delay_calibration_offset_ns"])
        if "output_dir" in sec:
            run_kwargs["output_dir"] = sec["output_dir"].strip()

    cfg = RunConfig(cell=cell, injection=injection, coating_csv=coating_csv,
                    excess_loss=excess, channel=channel, tomography=tomography,
                    **run_kwargs)
    try:
        cfg.cell.validate()
    except Exception as exc:
        raise ConfigError(f"invalid cell geometry: {exc}") from exc
    return cfg


def packaged_coating_path() -> Path:
    return Path(__file__).parent / "data" / "coating_model.csv"


def load_coating(cfg: RunConfig):
    from .delays import CoatingCurve

    path = cfg.coating_csv or packaged_coating_path()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"coating CSV not found: {p}")
    try:
        return CoatingCurve.from_csv(p)
    except Exception as exc:
        raise ConfigError(f"cannot parse coating CSV {p}: {exc}") from exc
