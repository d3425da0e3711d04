"""Figures of merit of the delay line.

Delay times from traced paths, retrieval efficiency from the coating
reflectance, per-reflection reflectance inversion, spectral bandwidth,
time-bandwidth product, and the comparison against fiber delay lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibration import CYCLE_PERIOD, InjectionSolution
from .constants import C_MM_PER_NS, C_M_PER_S, SILICA_GROUP_INDEX
from .errors import NoExit, OutOfBand
from .geometry import EXITED_THROUGH_PUPIL, CellConfig, TracePath, trace_cell


@dataclass(frozen=True)
class CoatingCurve:
    """Mirror reflectance vs wavelength; linear interpolation, no extrapolation."""

    wavelengths_nm: np.ndarray
    reflectances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wavelengths_nm, dtype=float)
        r = np.asarray(self.reflectances, dtype=float)
        if w.ndim != 1 or w.shape != r.shape or w.size < 2:
            raise ValueError("coating curve needs matching 1D arrays, >= 2 samples")
        if not np.all(np.diff(w) > 0):
            raise ValueError("coating wavelengths must be strictly increasing")
        if np.any(r <= 0) or np.any(r > 1):
            raise ValueError("reflectances must lie in (0, 1]")
        object.__setattr__(self, "wavelengths_nm", w)
        object.__setattr__(self, "reflectances", r)

    def reflectance_at(self, wavelength_nm: float) -> float:
        w = self.wavelengths_nm
        if not w[0] <= wavelength_nm <= w[-1]:
            raise OutOfBand(
                f"{wavelength_nm} nm outside the coating data range "
                f"[{w[0]}, {w[-1]}] nm")
        return float(np.interp(wavelength_nm, w, self.reflectances))

    @staticmethod
    def from_csv(path: str | Path) -> "CoatingCurve":
        data = np.genfromtxt(path, delimiter=",", comments="#", names=True)
        return CoatingCurve(np.atleast_1d(data["wavelength_nm"]),
                            np.atleast_1d(data["reflectance"]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("wavelength_nm,reflectance\n")
            for w, r in zip(self.wavelengths_nm, self.reflectances):
                fh.write(f"{w:.3f},{r:.9f}\n")


@dataclass
class DelaySetting:
    """One row of the delay table."""

    i: int                      # ring-step index; exit on pass period*i + 1
    n_spots: int                # total reflections
    delay_ns: float
    exit_azimuth: float         # degrees
    status: str = "ok"


@dataclass
class EfficiencyReport:
    n_reflections: int
    wavelength_nm: float
    efficiency: float
    reflectance_per_bounce: float
    excess_loss: float


def delay_time(path: TracePath) -> float:
    """Delay in seconds for a trace that exited through the exit pupil."""
    if path.exit_event.kind != EXITED_THROUGH_PUPIL:
        raise NoExit(
            f"trace did not exit through the exit pupil ({path.exit_event.kind})")
    return path.total_path * 1e-3 / C_M_PER_S


def delay_time_ns(path: TracePath) -> float:
    return path.total_path / C_MM_PER_NS


def geometric_increment_ns(config: CellConfig, period: int = CYCLE_PERIOD) -> float:
    """Delay step between consecutive settings, period * d / c."""
    return period * config.d / C_MM_PER_NS


def delay_table(config: CellConfig, injection: InjectionSolution,
                i_max: int = 63) -> list[DelaySetting]:
    """Delays for settings i = 0..i_max of the calibrated cell.

    One pupil-free harvest trace finds the candidate exit spots (passes
    period*i + 1 on the exit ring); each setting then re-traces with the
    exit pupil rotated onto its spot. Rows whose trace fails carry the
    failure in ``status`` instead of aborting the table.
    """
    period = injection.period
    base = replace(config,
                   pupil_azimuth_entry=injection.entry_azimuth_deg,
                   pupil_radius_entry=injection.entry_radius,
                   pupil_radius_pos=injection.pupil_radius_exit)
    entry = injection.entry_ray(base)
    harvest = trace_cell(replace(base, pupil_azimuth_exit=None),
                         entry, max_passes=period * i_max + 1)
    spots = {s.pass_index: s for s in harvest.spots}

    rows: list[DelaySetting] = []
    for i in range(i_max + 1):
        exit_pass = period * i + 1
        spot = spots.get(exit_pass)
        if spot is None:
            rows.append(DelaySetting(i, period * i, math.nan, math.nan,
                                     status=f"no spot at pass {exit_pass}"))
            continue
        azim = math.degrees(math.atan2(spot.point[1], spot.point[0])) % 360.0
        cfg_i = replace(base, pupil_azimuth_exit=azim)
        path = trace_cell(cfg_i, entry, max_passes=exit_pass + period)
        if path.exit_event.kind != EXITED_THROUGH_PUPIL \
                or path.exit_event.pass_index != exit_pass:
            rows.append(DelaySetting(i, period * i, math.nan, azim,
                                     status=f"unexpected {path.exit_event.kind} "
                                            f"at pass {path.exit_event.pass_index}"))
            continue
        rows.append(DelaySetting(i, path.n_reflections, delay_time_ns(path), azim))
    return rows


def transmission_efficiency(n: int, curve: CoatingCurve, wavelength_nm: float,
                            excess_loss: float = 0.0) -> float:
    """Retrieval efficiency after n reflections: R(lambda)^n * (1 - excess_loss)."""
    if n < 0:
        raise ValueError("reflection count must be >= 0")
    if not 0.0 <= excess_loss < 1.0:
        raise ValueError("excess_loss must lie in [0, 1)")
    r = curve.reflectance_at(wavelength_nm)
    return r ** n * (1.0 - excess_loss)


def reflectance_from_efficiency(efficiency: float, n: int) -> float:
    """Per-reflection reflectance implied by a measured efficiency, eta^(1/n)."""
    if not 0.0 < efficiency <= 1.0:
        raise ValueError(f"efficiency must lie in (0, 1], got {efficiency}")
    if n < 1:
        raise ValueError(f"reflection count must be >= 1, got {n}")
    return efficiency ** (1.0 / n)


def bandwidth_nm_to_thz(center_nm: float, width_nm: float) -> float:
    """Spectral width around a center wavelength as a frequency bandwidth (THz)."""
    if center_nm <= 0 or width_nm < 0:
        raise ValueError("center must be positive and width non-negative")
    return C_M_PER_S * (width_nm * 1e-9) / (center_nm * 1e-9) ** 2 / 1e12


def time_bandwidth_product(delta_nu_thz: float, delta_t_ns: float) -> float:
    """Storage figure of merit, bandwidth times delay (dimensionless)."""
    if delta_nu_thz <= 0 or delta_t_ns <= 0:
        raise ValueError("bandwidth and delay must be positive")
    return delta_nu_thz * 1e12 * delta_t_ns * 1e-9


def fiber_efficiency(delay_ns: float, attenuation_db_per_km: float,
                     coupling_loss_db: float = 0.2,
                     group_index: float = SILICA_GROUP_INDEX) -> float:
    """Transmission of a fiber delay line providing the same delay.

    length = (c / n_g) * delay, loss = coupling + attenuation * length.
    """
    if delay_ns < 0 or attenuation_db_per_km < 0 or coupling_loss_db < 0 \
            or group_index <= 0:
        raise ValueError("fiber parameters must be non-negative, group index > 0")
    length_km = (C_M_PER_S / group_index) * delay_ns * 1e-9 / 1e3
    loss_db = coupling_loss_db + attenuation_db_per_km * length_km
    return 10.0 ** (-loss_db / 10.0)


def fiber_length_m(delay_ns: float, group_index: float = SILICA_GROUP_INDEX) -> float:
    return (C_M_PER_S / group_index) * delay_ns * 1e-9
