"""Paraxial Gaussian-beam propagation along a traced path (ABCD formalism)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonphysicalBeam, UnstableCell
from .geometry import CellConfig, TracePath


@dataclass(frozen=True)
class QParam:
    """Complex Gaussian beam parameter (mm) at a given wavelength (nm)."""

    q: complex
    wavelength_nm: float

    def __post_init__(self):
        if self.q.imag <= 0:
            raise NonphysicalBeam(f"Im(q) must be positive, got {self.q}")

    @property
    def wavelength_mm(self) -> float:
        return self.wavelength_nm * 1e-6

    def radius(self) -> float:
        """1/e^2 beam radius w (mm)."""
        inv_q = 1.0 / self.q
        return math.sqrt(-self.wavelength_mm / (math.pi * inv_q.imag))

    @staticmethod
    def from_waist(w0_mm: float, wavelength_nm: float, z_from_waist_mm: float = 0.0
                   ) -> "QParam":
        zr = math.pi * w0_mm ** 2 / (wavelength_nm * 1e-6)
        return QParam(complex(z_from_waist_mm, zr), wavelength_nm)


def apply_abcd(q: complex, m: np.ndarray) -> complex:
    a, b = m[0, 0], m[0, 1]
    c, d = m[1, 0], m[1, 1]
    return (a * q + b) / (c * q + d)


def free_space(length_mm: float) -> np.ndarray:
    return np.array([[1.0, length_mm], [0.0, 1.0]])


def mirror(roc_mm: float) -> np.ndarray:
    # focal length R/2
    return np.array([[1.0, 0.0], [-2.0 / roc_mm, 1.0]])


def propagate_q(q0: QParam, path: TracePath, config: CellConfig) -> list[float]:
    """Spot radius (mm) at every reflection of `path`.

    Free-space ABCD over each exact segment length, mirror ABCD with the
    focal length of the struck surface at each reflection. The radius is
    evaluated on arrival (a thin mirror does not change w).
    """
    lam = q0.wavelength_mm
    q = q0.q
    radii: list[float] = []
    prev = 0.0
    for spot in path.spots:
        seg = spot.cumulative_path - prev
        prev = spot.cumulative_path
        q = apply_abcd(q, free_space(seg))
        if q.imag <= 0:
            raise NonphysicalBeam(
                f"Im(q) <= 0 at pass {spot.pass_index}; beam is nonphysical")
        inv_q = 1.0 / q
        radii.append(math.sqrt(-lam / (math.pi * inv_q.imag)))
        roc = config.R_outer if spot.surface_id == "outer" else config.R_inner
        q = apply_abcd(q, mirror(roc))
    return radii


def cavity_mode_q(config: CellConfig, wavelength_nm: float) -> QParam:
    """Self-consistent Gaussian mode of the annulus-curvature cavity.

    Solves q = (Aq + B)/(Cq + D) for the single-pass matrix (propagate d,
    reflect off R_outer). Raises UnstableCell outside the stability
    region |A + D| >= 2.
    """
    m = mirror(config.R_outer) @ free_space(config.d)
    a, b = m[0, 0], m[0, 1]
    c, d = m[1, 0], m[1, 1]
    disc = (a + d) ** 2 - 4.0
    if disc >= 0:
        raise UnstableCell("cell has no confined Gaussian mode (|A+D| >= 2)")
    q = complex((a - d) / (2 * c), -math.sqrt(-disc) / (2 * c))
    if q.imag < 0:
        q = q.conjugate()
    return QParam(q, wavelength_nm)


def attach_spot_radii(path: TracePath, q0: QParam, config: CellConfig) -> None:
    """Fill SpotRecord.spot_radius in place from a Gaussian propagation."""
    for spot, w in zip(path.spots, propagate_q(q0, path, config)):
        spot.spot_radius = w
