"""Reference-injection calibration for the nested cell.

The delay line only behaves as designed when the injected beam sits on a
periodic orbit of the 6-pass cycle: five annulus reflections plus one
embedded-mirror reflection per cycle, with the whole 6-spot block
rotating rigidly about the axis by a fixed angle each cycle. This module
finds that orbit for a given cell geometry:

1. Paraxial seed. Each pass is a 2x2 ray matrix acting on the complex
   transverse state (zeta, sigma) = (x + iy, slope_x + i slope_y). The
   6-pass cycle matrix (five annulus passes, one embedded kick) has
   eigenvalues exp(+-i Theta); its eigenvector, scaled so the largest
   intra-cycle radius equals the target exit-ring radius, is a rigidly
   rotating orbit of the linearized cell.

2. Exact refinement. Solve for a rotating fixed point of the exact 3D
   cycle map: a post-bounce state s at the entry ring and an angle Theta
   with cycle(s) = Rz(Theta) s. Gauss-Newton over (two slope components,
   Theta) with the entry radius pinned and the entry azimuth as gauge;
   converges to ~1e-14 from the paraxial seed.

3. Validation. Trace the refined injection through the full pass budget
   and check the embedded-bounce periodicity, ring tightness, and pupil
   clearances the delay table relies on.

For a plain cell (equal curvatures) the orbit degenerates to the classic
circular re-entrant pattern and no embedded bounce is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import NoValidInjection
from .geometry import CellConfig, Ray, trace_cell

CYCLE_PERIOD = 6
EMBEDDED_PASS_OFFSET = 4          # embedded bounce at passes = 4 (mod 6) after entry


@dataclass
class InjectionSolution:
    """Calibrated reference injection and the cell layout it implies."""

    entry_radius: float            # mm, on mirror 1
    entry_azimuth_deg: float
    tilt_x: float                  # outgoing slopes in the azimuth-0 frame
    tilt_y: float
    cycle_rotation_deg: float      # rigid pattern rotation per cycle
    period: int
    ring_radii: dict[str, float]
    pupil_radius_entry: float
    pupil_radius_exit: float
    exit_ring_pass_offset: int     # exit-family passes = this (mod period)
    max_clean_pass: int
    diagnostics: dict

    def entry_ray(self, config: CellConfig) -> Ray:
        """Entry ray, rotated to the solution's azimuth."""
        a = math.radians(self.entry_azimuth_deg)
        c, s = math.cos(a), math.sin(a)
        sag = config.surface_sag(1, "outer", self.entry_radius)
        origin = np.array([self.entry_radius * c, self.entry_radius * s, sag])
        v0 = np.array([self.tilt_x, self.tilt_y, 1.0])
        v0 = v0 / np.linalg.norm(v0)
        direction = np.array([c * v0[0] - s * v0[1], s * v0[0] + c * v0[1], v0[2]])
        return Ray(origin, direction)


def _pass_matrix(roc: float, d: float) -> np.ndarray:
    kick = np.array([[1.0, 0.0], [-2.0 / roc, 1.0]])
    prop = np.array([[1.0, d], [0.0, 1.0]])
    return prop @ kick


def paraxial_cycle(config: CellConfig, kick_offset: int = EMBEDDED_PASS_OFFSET,
                   period: int = CYCLE_PERIOD):
    """Paraxial cycle rotation and intra-cycle states of the nested orbit.

    The cycle starts at the entry arrival (pass 0); matrix k maps the
    arrival state of pass k to pass k+1, applying the embedded-curvature
    kick at pass ``kick_offset``. Returns (theta_rad, states) with
    states[k] the complex (zeta, sigma) arrival state at pass k,
    normalized to max |zeta| = 1 and entry azimuth 0.
    """
    mats = [
        _pass_matrix(config.R_inner if k == kick_offset % period else config.R_outer,
                     config.d)
        for k in range(period)
    ]
    cyc = np.eye(2)
    for m in mats:
        cyc = m @ cyc
    half_trace = float(np.trace(cyc)) / 2.0
    if abs(half_trace) >= 1.0:
        raise NoValidInjection(
            f"paraxial {period}-pass cycle is unstable (|tr|/2 = {abs(half_trace):.4f})")
    theta = math.acos(half_trace)
    lam, vec = np.linalg.eig(cyc)
    idx = int(np.argmin(np.abs(lam - np.exp(1j * theta))))
    state = vec[:, idx]
    states = [state]
    for m in mats:
        states.append(m @ states[-1])
    states = states[:-1]
    scale = 1.0 / max(abs(s[0]) for s in states)
    gauge = np.exp(-1j * np.angle(states[0][0]))
    return theta, [s * scale * gauge for s in states]


def _exact_cycle(x4: np.ndarray, config: CellConfig, period: int) -> np.ndarray:
    """Exact cycle map on the reduced state (x, y, slope_x, slope_y).

    The state is the post-bounce ray leaving mirror 1; the point is
    embedded on the annulus sphere at its exact sag. Pupils are ignored.
    """
    from .geometry import _sphere_intersection, classify_hit

    x, y, sx, sy = x4
    sag = config.surface_sag(1, "outer", math.hypot(x, y))
    o = np.array([x, y, sag])
    v = np.array([sx, sy, 1.0])
    v = v / np.linalg.norm(v)
    for pass_index in range(1, period + 1):
        mirror_id = 2 if pass_index % 2 == 1 else 1
        zplane = config.d if mirror_id == 2 else 0.0
        t_plane = (zplane - o[2]) / v[2]
        hit_xy = o + t_plane * v
        zone = classify_hit(config, hit_xy[:2])
        if zone == "escape":
            raise NoValidInjection(f"cycle escaped the aperture at pass {pass_index}")
        surface = "inner" if zone == "inner" else "outer"
        center, radius = config.sphere(mirror_id, surface)
        t = _sphere_intersection(o, v, center, radius)
        if t is None:
            raise NoValidInjection(f"cycle missed the sphere at pass {pass_index}")
        p = o + t * v
        u = p - center
        p = center + radius * (u / np.linalg.norm(u))
        n = (p - center) / radius
        v = v - 2.0 * float(v @ n) * n
        v = v / np.linalg.norm(v)
        o = p
    return np.array([o[0], o[1], v[0] / v[2], v[1] / v[2]])


def _rotate4(x4: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * x4[0] - s * x4[1], s * x4[0] + c * x4[1],
                     c * x4[2] - s * x4[3], s * x4[2] + c * x4[3]])


def refine_rotating_orbit(config: CellConfig, entry_radius: float,
                          seed_slopes: complex, seed_theta: float,
                          period: int = CYCLE_PERIOD):
    """Gauss-Newton solve of cycle(s) = Rz(Theta) s at pinned entry radius.

    Returns (slopes complex, theta rad, residual norm).
    """
    d = config.d

    def resid(p):
        sx, sy, theta = p
        out = _exact_cycle(np.array([entry_radius, 0.0, sx, sy]), config, period)
        rot = _rotate4(out, -theta)
        return [rot[0] - entry_radius, rot[1], (rot[2] - sx) * d, (rot[3] - sy) * d]

    sol = least_squares(resid, [seed_slopes.real, seed_slopes.imag, seed_theta],
                        xtol=3e-16, ftol=3e-16, gtol=3e-16)
    res_norm = float(np.linalg.norm(sol.fun))
    if res_norm > 1e-8:
        raise NoValidInjection(
            f"rotating-orbit refinement did not converge (residual {res_norm:.2e})")
    sx, sy, theta = sol.x
    return complex(sx, sy), float(theta), res_norm


def _validate_orbit(config: CellConfig, solution: InjectionSolution,
                    max_passes: int) -> dict:
    """Trace the refined injection and measure what the delay table needs."""
    plugged = replace(config,
                      pupil_azimuth_entry=solution.entry_azimuth_deg,
                      pupil_radius_entry=solution.entry_radius,
                      pupil_azimuth_exit=None)
    entry = solution.entry_ray(plugged)
    path = trace_cell(plugged, entry, max_passes=max_passes)
    if path.exit_event.kind == "max_passes_reached":
        max_clean = path.spots[-1].pass_index if path.spots else 0
    else:
        max_clean = (path.exit_event.pass_index or 1) - 1

    emb = [s.pass_index for s in path.spots if s.surface_id == "inner"]
    periodic = bool(emb) and emb[0] == EMBEDDED_PASS_OFFSET and \
        all(b - a == solution.period for a, b in zip(emb, emb[1:]))

    fam_spread = {}
    for k in range(solution.period):
        rr = [s.radial_dist for s in path.spots if s.pass_index % solution.period == k]
        if rr:
            fam_spread[k] = max(rr) - min(rr)
    return {
        "exit_event": path.exit_event.kind,
        "max_clean_pass": max_clean,
        "embedded_periodic": periodic,
        "family_radius_spread_mm": fam_spread,
        "n_embedded_hits": len(emb),
    }


def calibrate_injection(config: CellConfig, exit_ring_radius: float | None = None,
                        i_max: int = 63, period: int = CYCLE_PERIOD,
                        clearance_mm: float = 1.5) -> InjectionSolution:
    """Find the reference injection for ``config``.

    ``exit_ring_radius`` pins the outermost ring; when None a
    deterministic scan from large to small radii picks the first value
    that keeps the embedded bounce inside the embedded aperture, every
    annulus ring clear of the zone boundary, and the exit ring clear of
    the aperture edge. Raises NoValidInjection when no consistent orbit
    exists (for instance in geometrically unstable cells).
    """
    from .errors import GeometryError

    try:
        config.validate()
    except GeometryError as exc:
        raise NoValidInjection(f"no injection for this geometry: {exc}") from exc
    if math.isclose(config.R_inner, config.R_outer, rel_tol=0.0, abs_tol=1e-12):
        return _calibrate_plain(config, exit_ring_radius)

    theta_seed, states = paraxial_cycle(config, period=period)
    radii_rel = np.array([abs(s[0]) for s in states])
    emb_pos = EMBEDDED_PASS_OFFSET % period
    if int(np.argmin(radii_rel)) != emb_pos:
        raise NoValidInjection(
            "paraxial cycle puts the embedded bounce away from the orbit minimum; "
            "this cell cannot hold the nested ring pattern")

    candidates = ([exit_ring_radius] if exit_ring_radius is not None else
                  list(np.arange(0.930, 0.699, -0.005) * config.r_outer))
    margin = 0.8  # mm clearance from the zone boundary and aperture edge
    chosen = None
    for ring in candidates:
        radii = radii_rel * ring          # max relative radius is 1
        emb_r = radii[emb_pos]
        ann = np.delete(radii, emb_pos)
        if emb_r < config.r_inner - margin and ann.min() > config.r_inner + margin \
                and ring + config.pupil_r + margin / 4 <= config.r_outer:
            chosen = float(ring)
            break
    if chosen is None:
        raise NoValidInjection(
            "no exit-ring radius keeps the orbit clear of the zone boundaries")

    # paraxial post-bounce slopes at the entry position (pass 0, annulus bounce)
    zeta0, sigma0_in = states[0]
    entry_radius = float(abs(zeta0) * chosen)
    sigma_out = (sigma0_in - 2.0 * zeta0 / config.R_outer) * chosen

    slopes, theta, res = refine_rotating_orbit(
        config, entry_radius, sigma_out, theta_seed, period)

    # exact intra-cycle layout from one refined cycle (azimuth-0 gauge)
    probe = replace(config, pupil_azimuth_exit=None,
                    pupil_azimuth_entry=0.0, pupil_radius_entry=entry_radius)
    entry = Ray(
        np.array([entry_radius, 0.0, probe.surface_sag(1, "outer", entry_radius)]),
        np.array([slopes.real, slopes.imag, 1.0]))
    one_cycle = trace_cell(probe, entry, max_passes=period)
    by_pass = {s.pass_index: s for s in one_cycle.spots}
    exit_offset = (EMBEDDED_PASS_OFFSET + period // 2) % period   # opposite the kick
    first_exit = by_pass[exit_offset]
    ring_radii = {
        "exit_ring": float(first_exit.radial_dist),
        "entry_ring": entry_radius,
        "mirror2_secondary": float(by_pass[(exit_offset + 2) % period].radial_dist),
        "embedded_ring": float(by_pass[EMBEDDED_PASS_OFFSET].radial_dist),
    }

    solution = InjectionSolution(
        entry_radius=entry_radius,
        entry_azimuth_deg=config.pupil_azimuth_entry,
        tilt_x=slopes.real,
        tilt_y=slopes.imag,
        cycle_rotation_deg=math.degrees(theta),
        period=period,
        ring_radii=ring_radii,
        pupil_radius_entry=entry_radius,
        pupil_radius_exit=ring_radii["exit_ring"],
        exit_ring_pass_offset=exit_offset,
        max_clean_pass=0,
        diagnostics={
            "refine_residual": res,
            "paraxial_theta_deg": math.degrees(theta_seed),
            "exit_azimuth_first_deg": (
                math.degrees(math.atan2(first_exit.point[1], first_exit.point[0]))
                + config.pupil_azimuth_entry) % 360.0,
        },
    )

    checks = _validate_orbit(config, solution, max_passes=period * (i_max + 1) + 1)
    solution.diagnostics.update(checks)
    solution.max_clean_pass = checks["max_clean_pass"]
    if not checks["embedded_periodic"]:
        raise NoValidInjection(
            f"refined orbit lost the {period}-pass embedded periodicity: {checks}")
    if checks["max_clean_pass"] < period * i_max + 1:
        raise NoValidInjection(
            f"orbit survives only {checks['max_clean_pass']} passes, "
            f"need {period * i_max + 1}")
    _check_pupil_clearances(solution, i_max, clearance_mm)
    return solution


def _check_pupil_clearances(sol: InjectionSolution, i_max: int,
                            clearance_mm: float) -> None:
    """Exit-ring spots of different settings must not share a pupil disk."""
    step = math.radians(sol.cycle_rotation_deg)
    r_exit = sol.pupil_radius_exit
    min_sep = min(
        2.0 * r_exit * abs(math.sin(k * step / 2.0)) for k in range(1, i_max + 1))
    if min_sep <= clearance_mm:
        raise NoValidInjection(
            f"exit-ring spots approach within {min_sep:.2f} mm of a pupil "
            f"position; settings up to i={i_max} are not separable")
    sol.diagnostics["min_exit_family_separation_mm"] = min_sep


def _calibrate_plain(config: CellConfig,
                     ring_radius: float | None) -> InjectionSolution:
    """Classic circular re-entrant orbit for a plain (single-curvature) cell."""
    ring = ring_radius if ring_radius is not None else 0.8 * config.r_outer
    if ring + config.pupil_r > config.r_outer:
        raise NoValidInjection("requested ring does not fit inside the aperture")
    # single-pass eigenvector: circular orbit advancing theta per pass
    m = _pass_matrix(config.R_outer, config.d)
    half_trace = float(np.trace(m)) / 2.0
    theta = math.acos(half_trace)
    lam, vec = np.linalg.eig(m)
    idx = int(np.argmin(np.abs(lam - np.exp(1j * theta))))
    state = vec[:, idx]
    state = state * (ring / abs(state[0]))
    state = state * np.exp(-1j * np.angle(state[0]))
    zeta0, sigma_in = state
    sigma_out = sigma_in - 2.0 * zeta0 / config.R_outer

    slopes, theta2, res = refine_rotating_orbit(
        config, ring, sigma_out, 2.0 * theta, period=2)

    solution = InjectionSolution(
        entry_radius=ring,
        entry_azimuth_deg=config.pupil_azimuth_entry,
        tilt_x=slopes.real,
        tilt_y=slopes.imag,
        cycle_rotation_deg=math.degrees(theta2),
        period=2,
        ring_radii={"ring": ring},
        pupil_radius_entry=ring,
        pupil_radius_exit=ring,
        exit_ring_pass_offset=1,
        max_clean_pass=0,
        diagnostics={"refine_residual": res,
                     "advance_per_pass_deg": math.degrees(theta2) / 2.0},
    )
    checks = _validate_orbit(config, solution, max_passes=400)
    solution.diagnostics.update(checks)
    solution.max_clean_pass = checks["max_clean_pass"]
    return solution
