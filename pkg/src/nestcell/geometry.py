"""Exact 3D ray tracing of the nested two-mirror multipass cell.

Geometry and conventions
------------------------
The optical axis is z. Mirror 1 has its vertex at z = 0 and is concave
toward +z; mirror 2 has its vertex at z = d and is concave toward -z.
Each end mirror is a nested assembly: a small concave mirror (aperture
radius ``r_inner``, radius of curvature ``R_inner``) embedded coaxially
in a larger annular mirror (``r_outer``, ``R_outer``). Which curvature a
reflection sees is decided by the transverse radial distance at the
mirror plane; the sag difference between the two spheres is ignored for
classification (it is far smaller than the mirror separation).

The beam enters through a circular pupil in mirror 1 and exits through a
pupil in mirror 2. A hit inside the exit-pupil disk leaves the cell; a
hit inside the entry-pupil disk after the first pass is a premature exit
and is reported as a distinct event.

Numerical stability
-------------------
After every reflection the hit point is re-seated exactly on the struck
sphere and the direction renormalized. Without this constraint
projection, floating-point drift excites a spurious expanding mode of
the raw (point, direction) iteration and long traces (hundreds of
passes) decay; with it, periodic orbits hold their ring radii to ~1e-12
mm over >1000 passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np

from .errors import (
    DegeneratePattern,
    GeometryError,
    NoIntersection,
    UnstableCell,
)

_ROOT_TOL_MM = 1e-9     # reject intersection roots behind the origin beyond this
_DIR_TOL = 1e-12        # |direction| unity tolerance

SurfaceId = Literal["outer", "inner"]

EXITED_THROUGH_PUPIL = "exited_through_pupil"
EXITED_THROUGH_ENTRY_PUPIL = "exited_through_entry_pupil"
ESCAPED_APERTURE = "escaped_aperture"
MAX_PASSES_REACHED = "max_passes_reached"


@dataclass(frozen=True)
class CellConfig:
    """Geometric and optical description of the nested two-mirror cell.

    ``pupil_radius_pos`` is the radial position of the exit pupil on
    mirror 2 (the delay-control pupil). The entry pupil on mirror 1 may
    sit on a different ring; ``pupil_radius_entry`` overrides its radial
    position and defaults to ``pupil_radius_pos`` when None.
    ``pupil_azimuth_exit = None`` models a plugged exit hole, used when
    harvesting candidate exit spots for the delay table.
    ``inner_offset_z > 0`` displaces both embedded-mirror vertices toward
    the cell interior.
    """

    r_outer: float = 50.8
    r_inner: float = 25.4
    R_outer: float = 4000.0
    R_inner: float = 3355.0
    d: float = 541.0
    t: float = 12.7                      # substrate thickness, metadata only
    pupil_diameter: float = 3.0
    pupil_radius_pos: float = 47.215106894287445
    pupil_radius_entry: Optional[float] = 41.72996709882844
    pupil_azimuth_entry: float = 0.0     # degrees
    pupil_azimuth_exit: Optional[float] = 14.974945471125714
    inner_offset_z: float = 0.0

    def validate(self) -> None:
        if self.d <= 0:
            raise UnstableCell(f"mirror separation must be positive, got d={self.d}")
        for name, R in (("R_outer", self.R_outer), ("R_inner", self.R_inner)):
            if not 0 < self.d < R:
                raise UnstableCell(
                    f"stability requires 0 < d < {name} (d={self.d}, {name}={R})"
                )
        if self.pupil_diameter <= 0:
            raise GeometryError("pupil_diameter must be positive")
        aperture = max(self.r_outer, self.r_inner)
        for label, rpos in (("exit", self.pupil_radius_pos),
                            ("entry", self.entry_pupil_radius)):
            if rpos + self.pupil_diameter / 2 > aperture:
                raise GeometryError(
                    f"{label} pupil (radius position {rpos} mm) does not fit inside "
                    f"the {aperture} mm aperture"
                )

    @property
    def entry_pupil_radius(self) -> float:
        return (self.pupil_radius_pos if self.pupil_radius_entry is None
                else self.pupil_radius_entry)

    @property
    def pupil_r(self) -> float:
        return self.pupil_diameter / 2.0

    def entry_pupil_center(self) -> np.ndarray:
        a = math.radians(self.pupil_azimuth_entry)
        r = self.entry_pupil_radius
        return np.array([r * math.cos(a), r * math.sin(a)])

    def exit_pupil_center(self) -> Optional[np.ndarray]:
        if self.pupil_azimuth_exit is None:
            return None
        a = math.radians(self.pupil_azimuth_exit)
        r = self.pupil_radius_pos
        return np.array([r * math.cos(a), r * math.sin(a)])

    def sphere(self, mirror_id: int, surface: SurfaceId) -> tuple[np.ndarray, float]:
        """Center and radius of the requested surface sphere."""
        R = self.R_outer if surface == "outer" else self.R_inner
        off = 0.0 if surface == "outer" else self.inner_offset_z
        if mirror_id == 1:
            return np.array([0.0, 0.0, off + R]), R
        return np.array([0.0, 0.0, self.d - off - R]), R

    def surface_sag(self, mirror_id: int, surface: SurfaceId, r: float) -> float:
        """z of the surface at transverse radius r (mirror-1 sign convention)."""
        R = self.R_outer if surface == "outer" else self.R_inner
        off = 0.0 if surface == "outer" else self.inner_offset_z
        s = R - math.sqrt(R * R - r * r)
        return off + s if mirror_id == 1 else self.d - off - s


@dataclass(frozen=True)
class Ray:
    """Origin (mm) plus unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        v = np.asarray(self.direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(v))
        if n == 0.0:
            raise GeometryError("ray direction must be nonzero")
        if abs(n - 1.0) > _DIR_TOL:
            v = v / n
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", v)


@dataclass
class SpotRecord:
    """One reflection event along a trace."""

    pass_index: int
    mirror_id: int
    surface_id: SurfaceId
    point: np.ndarray              # 3D, mm
    radial_dist: float             # transverse distance from the axis, mm
    cumulative_path: float         # optical path from entry up to this point, mm
    spot_radius: Optional[float] = None   # Gaussian 1/e^2 radius, filled by beam module


@dataclass
class ExitEvent:
    kind: str
    pass_index: Optional[int] = None
    point: Optional[np.ndarray] = None


@dataclass
class TracePath:
    spots: list[SpotRecord]
    exit_event: ExitEvent
    total_path: float

    @property
    def n_reflections(self) -> int:
        return len(self.spots)


@dataclass
class Ring:
    mean_radius: float
    count: int
    spread: float


@dataclass
class RingSummary:
    mirrors: dict[int, list[Ring]]
    inner_surface: list[Ring]

    def ring_count(self, mirror_id: int) -> int:
        return len(self.mirrors.get(mirror_id, []))


def classify_hit(config: CellConfig, point_transverse) -> str:
    """Classify a transverse point on a mirror plane: 'inner', 'outer' or 'escape'.

    Total function; pupil membership is tested separately against the
    pupil disks.
    """
    p = np.asarray(point_transverse, dtype=float)
    r = float(np.hypot(p[0], p[1]))
    if r <= config.r_inner:
        return "inner"
    if r <= config.r_outer:
        return "outer"
    return "escape"


def _sphere_intersection(origin: np.ndarray, direction: np.ndarray,
                         center: np.ndarray, radius: float) -> Optional[float]:
    """Smallest intersection parameter t > _ROOT_TOL_MM, or None.

    Uses the half-b quadratic with the numerically stable root ordering;
    the nearer forward root is the concave-side hit for rays inside the
    cell.
    """
    oc = origin - center
    b = float(direction @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    # roots of t^2 + 2bt + c: -b -/+ sq
    t_near, t_far = -b - sq, -b + sq
    if t_near > _ROOT_TOL_MM:
        return t_near
    if t_far > _ROOT_TOL_MM:
        return t_far
    return None


def reflect_ray(ray: Ray, center, radius: float) -> Ray:
    """Specular reflection of `ray` off the concave sphere (center, radius).

    The returned ray starts at the intersection point (re-seated exactly
    on the sphere) with direction v - 2(v.n)n, renormalized.
    """
    center = np.asarray(center, dtype=float)
    t = _sphere_intersection(ray.origin, ray.direction, center, radius)
    if t is None:
        raise NoIntersection("ray misses the mirror sphere")
    p = ray.origin + t * ray.direction
    u = p - center
    p = center + radius * (u / np.linalg.norm(u))
    n = (p - center) / radius
    v = ray.direction - 2.0 * float(ray.direction @ n) * n
    return Ray(p, v / np.linalg.norm(v))


def _entry_plane_point(entry: Ray) -> np.ndarray:
    """Transverse coordinates where the entry line crosses the z=0 plane."""
    if entry.direction[2] <= 0:
        raise GeometryError("entry ray must travel toward +z, into the cell")
    t = (0.0 - entry.origin[2]) / entry.direction[2]
    p = entry.origin + t * entry.direction
    return p[:2]


def trace_cell(config: CellConfig, entry: Ray, max_passes: int = 500) -> TracePath:
    """Trace one transit of the cell.

    Alternates propagation between mirror 2 (odd passes) and mirror 1
    (even passes). Each arrival is classified at the mirror plane; the
    ray reflects off the corresponding sphere. Terminates on an
    exit-pupil hit, an entry-pupil re-hit (premature exit, distinct
    event), an aperture escape, or ``max_passes``.
    """
    config.validate()
    entry_xy = _entry_plane_point(entry)
    pupil_r = config.pupil_r
    entry_center = config.entry_pupil_center()
    if np.hypot(*(entry_xy - entry_center)) > pupil_r:
        raise GeometryError(
            f"entry ray crosses the mirror-1 plane at {entry_xy.round(3)} mm, "
            f"outside the entry pupil at {entry_center.round(3)} mm"
        )
    exit_center = config.exit_pupil_center()

    o = entry.origin.copy()
    v = entry.direction.copy()
    spots: list[SpotRecord] = []
    path = 0.0

    for pass_index in range(1, max_passes + 1):
        mirror_id = 2 if pass_index % 2 == 1 else 1
        zplane = config.d if mirror_id == 2 else 0.0
        vz = v[2] if mirror_id == 2 else -v[2]
        if vz <= 1e-9:
            return TracePath(spots, ExitEvent(ESCAPED_APERTURE, pass_index), path)
        t_plane = (zplane - o[2]) / v[2]
        hit_xy = (o + t_plane * v)[:2]

        if mirror_id == 2 and exit_center is not None \
                and np.hypot(*(hit_xy - exit_center)) <= pupil_r:
            exit_point = np.array([hit_xy[0], hit_xy[1], zplane])
            path += float(np.linalg.norm(exit_point - o))
            return TracePath(
                spots, ExitEvent(EXITED_THROUGH_PUPIL, pass_index, exit_point), path)
        if mirror_id == 1 and pass_index > 1 \
                and np.hypot(*(hit_xy - entry_center)) <= pupil_r:
            exit_point = np.array([hit_xy[0], hit_xy[1], zplane])
            path += float(np.linalg.norm(exit_point - o))
            return TracePath(
                spots,
                ExitEvent(EXITED_THROUGH_ENTRY_PUPIL, pass_index, exit_point), path)

        zone = classify_hit(config, hit_xy)
        if zone == "escape":
            return TracePath(spots, ExitEvent(ESCAPED_APERTURE, pass_index), path)
        surface: SurfaceId = "inner" if zone == "inner" else "outer"
        center, radius = config.sphere(mirror_id, surface)
        t = _sphere_intersection(o, v, center, radius)
        if t is None:
            return TracePath(spots, ExitEvent(ESCAPED_APERTURE, pass_index), path)
        p = o + t * v
        u = p - center
        p = center + radius * (u / np.linalg.norm(u))   # constraint projection
        path += float(np.linalg.norm(p - o))
        n = (p - center) / radius
        v = v - 2.0 * float(v @ n) * n
        v = v / np.linalg.norm(v)
        spots.append(SpotRecord(
            pass_index=pass_index,
            mirror_id=mirror_id,
            surface_id=surface,
            point=p,
            radial_dist=float(np.hypot(p[0], p[1])),
            cumulative_path=path,
        ))
        o = p

    return TracePath(spots, ExitEvent(MAX_PASSES_REACHED, max_passes), path)


def advance_angles(config: CellConfig) -> tuple[float, float]:
    """Per-pass azimuthal advance angles (degrees) for the two curvatures.

    theta = arccos(1 - d/R), valid on the stability interval 0 < d < R.
    """
    out = []
    for R in (config.R_outer, config.R_inner):
        if not 0 < config.d < R:
            raise UnstableCell(f"d={config.d} outside (0, {R})")
        out.append(math.degrees(math.acos(1.0 - config.d / R)))
    return out[0], out[1]


def _cluster_radii(radii: np.ndarray, tol: float) -> list[Ring]:
    order = np.sort(radii)
    gaps = np.where(np.diff(order) > tol)[0]
    groups = np.split(order, gaps + 1)
    return [Ring(float(g.mean()), int(g.size), float(g.max() - g.min()))
            for g in groups]


def ring_analysis(path: TracePath, tol: float = 0.5) -> RingSummary:
    """Cluster reflection spots into concentric rings, per mirror.

    1D clustering on radial distance: spots within ``tol`` mm of their
    neighbours share a ring. Raises DegeneratePattern when two cluster
    centres sit closer than 2*tol (ambiguous at this tolerance).
    """
    if len(path.spots) < 12:
        raise GeometryError("ring analysis needs at least 12 spots")
    mirrors: dict[int, list[Ring]] = {}
    for mirror_id in (1, 2):
        radii = np.array([s.radial_dist for s in path.spots
                          if s.mirror_id == mirror_id])
        if radii.size == 0:
            mirrors[mirror_id] = []
            continue
        rings = _cluster_radii(radii, tol)
        means = sorted(r.mean_radius for r in rings)
        for a, b in zip(means, means[1:]):
            if b - a < 2 * tol:
                raise DegeneratePattern(
                    f"mirror {mirror_id}: ring centres {a:.3f} and {b:.3f} mm "
                    f"are closer than twice the {tol} mm tolerance")
        mirrors[mirror_id] = rings
    inner_radii = np.array([s.radial_dist for s in path.spots
                            if s.surface_id == "inner"])
    inner = _cluster_radii(inner_radii, tol) if inner_radii.size else []
    return RingSummary(mirrors=mirrors, inner_surface=inner)


def rotate_ray(ray: Ray, angle_deg: float) -> Ray:
    """Rotate a ray about the optical axis (used for equivariance checks)."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Ray(R @ ray.origin, R @ ray.direction)


def rotate_config(config: CellConfig, angle_deg: float) -> CellConfig:
    """Rotate both pupils about the optical axis."""
    exit_az = (None if config.pupil_azimuth_exit is None
               else config.pupil_azimuth_exit + angle_deg)
    return replace(config,
                   pupil_azimuth_entry=config.pupil_azimuth_entry + angle_deg,
                   pupil_azimuth_exit=exit_az)
