"""Command-line interface.

Subcommands: trace, delay-table, efficiency, tbp, fiber-compare,
channel, tomography, histogram, calibrate-injection. Exit codes:
0 success, 2 configuration error, 3 physics/trace error, 4 estimator
error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import beam, calibration, channel as chan, delays, reports, tomography as tomo
from .config import (RunConfig, default_config, load_coating, load_config,
                     write_config)
from .constants import C_MM_PER_NS
from .errors import (ConfigError, EstimatorError, GeometryError, NestcellError,
                     OutOfBand)
from .geometry import EXITED_THROUGH_PUPIL, ring_analysis, trace_cell

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_ESTIMATOR = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (INI); defaults "
                                    "to the packaged reference configuration")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="random seed override")
    p.add_argument("--wavelength-nm", type=float, help="wavelength override")
    p.add_argument("--setting-i", type=int, help="delay setting index override")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nestcell",
        description="Nested multipass optical delay cell simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="ray trace one transit; spots CSV, "
                                     "mirror SVGs, pattern figure, summary")
    _add_common(p)

    p = sub.add_parser("delay-table", help="delay/efficiency table over settings")
    _add_common(p)
    p.add_argument("--i-max", type=int, default=63)

    p = sub.add_parser("efficiency", help="retrieval efficiency from the coating")
    _add_common(p)
    p.add_argument("--n-reflections", type=int,
                   help="reflection count (default: from the delay setting)")

    p = sub.add_parser("tbp", help="bandwidth and time-bandwidth product")
    _add_common(p)
    p.add_argument("--center-nm", type=float, default=565.0)
    p.add_argument("--width-nm", type=float, default=60.0)
    p.add_argument("--delay-ns", type=float,
                   help="storage time (default: geometric delay of the setting)")

    p = sub.add_parser("fiber-compare", help="cell vs fiber delay-line efficiency")
    _add_common(p)

    p = sub.add_parser("channel", help="polarization channel process matrix")
    _add_common(p)
    p.add_argument("--n-reflections", type=int)

    p = sub.add_parser("tomography", help="simulated tomography experiments")
    _add_common(p)
    p.add_argument("--mode", choices=("qst", "qpt", "histogram"), default="qst")
    p.add_argument("--ensemble", type=int, default=10,
                   help="seeds for the uncertainty estimate (qst/qpt)")
    p.add_argument("--noiseless", action="store_true",
                   help="use expected counts instead of Poisson draws")
    p.add_argument("--delay-ns", type=float,
                   help="true delay for histogram mode")

    p = sub.add_parser("histogram", help="multi-setting delay histogram overlay")
    _add_common(p)
    p.add_argument("--settings-i", default="3,32,63",
                   help="comma-separated setting indices")

    p = sub.add_parser("calibrate-injection",
                       help="search the reference injection for the cell geometry")
    _add_common(p)
    p.add_argument("--exit-ring-mm", type=float,
                   help="pin the exit-ring radius instead of scanning")
    p.add_argument("--i-max", type=int, default=63,
                   help="pass budget to validate (exit at pass 6*i_max + 1)")
    return ap


def _load(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else default_config()
    if args.wavelength_nm is not None:
        cfg = replace(cfg, wavelength_nm=args.wavelength_nm)
    if args.setting_i is not None:
        cfg = replace(cfg, delay_setting_i=args.setting_i)
    if args.seed is not None:
        cfg = replace(cfg, tomography=replace(cfg.tomography, seed=args.seed))
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _resolve_exit_azimuth(cfg: RunConfig) -> tuple[RunConfig, int | None]:
    """Point the exit pupil at the configured delay setting's spot."""
    i = cfg.delay_setting_i
    if i is None:
        return cfg, None
    period = calibration.CYCLE_PERIOD
    base = replace(cfg.cell, pupil_azimuth_exit=None,
                   pupil_azimuth_entry=cfg.injection.entry_azimuth_deg)
    entry = cfg.injection.entry_ray(base)
    harvest = trace_cell(base, entry, max_passes=period * i + 1)
    spot = next((s for s in harvest.spots if s.pass_index == period * i + 1), None)
    if spot is None:
        raise GeometryError(
            f"no candidate exit spot at pass {period * i + 1} "
            f"({harvest.exit_event.kind})")
    azim = math.degrees(math.atan2(spot.point[1], spot.point[0])) % 360.0
    cell = replace(cfg.cell, pupil_azimuth_exit=azim)
    return replace(cfg, cell=cell), i


def _spot_rows(path, radii):
    for s, w in zip(path.spots, radii):
        yield (s.pass_index, s.mirror_id, s.surface_id,
               float(s.point[0]), float(s.point[1]),
               s.radial_dist, s.cumulative_path,
               w if w is not None else "")


def cmd_trace(args) -> int:
    cfg, out = _load(args)
    cfg, setting = _resolve_exit_azimuth(cfg)
    entry = cfg.injection.entry_ray(cfg.cell)
    budget = calibration.CYCLE_PERIOD * ((setting if setting is not None else 63) + 3)
    path = trace_cell(cfg.cell, entry, max_passes=max(budget, 60))
    q0 = beam.QParam.from_waist(cfg.beam_waist_mm, cfg.wavelength_nm)
    try:
        beam.attach_spot_radii(path, q0, cfg.cell)
        radii = [s.spot_radius for s in path.spots]
    except NestcellError:
        radii = [None] * len(path.spots)

    reports.write_csv(
        out / "spots.csv",
        ["pass_index", "mirror_id", "surface_id", "x", "y", "radial_dist",
         "cumulative_path", "spot_radius"],
        _spot_rows(path, radii),
        header_comments=["reproduces: reflection spot patterns of the reference "
                         "delay line",
                         f"wavelength_nm = {cfg.wavelength_nm}",
                         f"delay_setting_i = {setting}"])
    for mirror_id, name in ((1, "entry_mirror.svg"), (2, "exit_mirror.svg")):
        (out / name).write_text(
            reports.spot_scene_svg(path, cfg.cell, mirror_id))
    reports.fig_spot_pattern(out / "spot_pattern.png", path, cfg.cell)

    lines = [
        "reproduces: spot patterns and delay of one transit",
        f"exit_event = {path.exit_event.kind}",
        f"exit_pass = {path.exit_event.pass_index}",
        f"n_reflections = {path.n_reflections}",
        f"total_path_mm = {path.total_path!r}",
        f"delay_ns = {path.total_path / C_MM_PER_NS!r}",
    ]
    try:
        rings = ring_analysis(path)
        for mid in (1, 2):
            desc = ", ".join(f"{r.mean_radius:.3f} mm (n={r.count})"
                             for r in rings.mirrors[mid])
            lines.append(f"mirror_{mid}_rings = {len(rings.mirrors[mid])}: {desc}")
        lines.append(f"inner_surface_rings = {len(rings.inner_surface)}")
    except NestcellError as exc:
        lines.append(f"ring_analysis = n/a ({exc})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if path.exit_event.kind == EXITED_THROUGH_PUPIL else EXIT_PHYSICS


def _delay_rows_with_efficiency(cfg: RunConfig, i_max: int):
    sol = _injection_solution(cfg)
    rows = delays.delay_table(cfg.cell, sol, i_max=i_max)
    curve = load_coating(cfg)
    effs = []
    for r in rows:
        if r.status != "ok":
            effs.append(None)
            continue
        try:
            effs.append(delays.transmission_efficiency(
                r.n_spots, curve, cfg.wavelength_nm, cfg.excess_loss))
        except OutOfBand:
            effs.append(None)
    return rows, effs


def _injection_solution(cfg: RunConfig) -> calibration.InjectionSolution:
    """Wrap the configured injection in the solution interface delay_table uses."""
    return calibration.InjectionSolution(
        entry_radius=cfg.injection.entry_radius_mm,
        entry_azimuth_deg=cfg.injection.entry_azimuth_deg,
        tilt_x=cfg.injection.tilt_x,
        tilt_y=cfg.injection.tilt_y,
        cycle_rotation_deg=0.0,
        period=calibration.CYCLE_PERIOD,
        ring_radii={},
        pupil_radius_entry=(cfg.cell.entry_pupil_radius),
        pupil_radius_exit=cfg.cell.pupil_radius_pos,
        exit_ring_pass_offset=1,
        max_clean_pass=0,
        diagnostics={},
    )


def cmd_delay_table(args) -> int:
    cfg, out = _load(args)
    rows, effs = _delay_rows_with_efficiency(cfg, args.i_max)
    inc = delays.geometric_increment_ns(cfg.cell)
    reports.write_csv(
        out / "delay_table.csv",
        ["i", "n_spots", "delay_ns", "exit_azimuth_deg", "efficiency", "status"],
        [(r.i, r.n_spots, r.delay_ns, r.exit_azimuth,
          e if e is not None else "", r.status) for r, e in zip(rows, effs)],
        header_comments=[
            "reproduces: delay/efficiency characterization of the reference cell",
            f"wavelength_nm = {cfg.wavelength_nm}",
            f"geometric_increment_ns = {inc!r}",
            f"calibration_offset_ns = {cfg.delay_calibration_offset_ns!r} "
            f"(reported for reconciliation with measured steps, never applied)",
        ])
    reports.fig_delay_table(out / "delay_table.png", rows, effs)
    n_ok = sum(1 for r in rows if r.status == "ok")
    print(f"delay table: {n_ok}/{len(rows)} settings traced, "
          f"increment {inc:.3f} ns, wrote {out / 'delay_table.csv'}")
    return EXIT_OK if n_ok > 0 else EXIT_PHYSICS


def cmd_efficiency(args) -> int:
    cfg, out = _load(args)
    curve = load_coating(cfg)
    n = args.n_reflections
    if n is None:
        i = cfg.delay_setting_i if cfg.delay_setting_i is not None else 63
        n = calibration.CYCLE_PERIOD * i
    eff = delays.transmission_efficiency(n, curve, cfg.wavelength_nm,
                                         cfg.excess_loss)
    report = delays.EfficiencyReport(
        n_reflections=n, wavelength_nm=cfg.wavelength_nm, efficiency=eff,
        reflectance_per_bounce=curve.reflectance_at(cfg.wavelength_nm),
        excess_loss=cfg.excess_loss)
    reports.write_json(out / "efficiency.json", {
        "reproduces": "retrieval efficiency vs reflection count and wavelength",
        "n_reflections": report.n_reflections,
        "wavelength_nm": report.wavelength_nm,
        "efficiency": report.efficiency,
        "reflectance_per_bounce": report.reflectance_per_bounce,
        "excess_loss": report.excess_loss,
        "implied_reflectance_from_efficiency":
            delays.reflectance_from_efficiency(eff, n) if n >= 1 else None,
    })
    sweep = []
    for w in curve.wavelengths_nm:
        sweep.append((float(w), curve.reflectance_at(float(w)),
                      delays.transmission_efficiency(n, curve, float(w),
                                                     cfg.excess_loss)))
    reports.write_csv(out / "efficiency_vs_wavelength.csv",
                      ["wavelength_nm", "reflectance", "efficiency"], sweep,
                      header_comments=["reproduces: broadband coating "
                                       "reflectance and retrieval efficiency",
                                       f"n_reflections = {n}"])
    reports.fig_coating(out / "coating.png", curve)
    print(f"efficiency({n} reflections, {cfg.wavelength_nm} nm) = {eff:.6f}")
    return EXIT_OK


def cmd_tbp(args) -> int:
    cfg, out = _load(args)
    delay_ns = args.delay_ns
    if delay_ns is None:
        i = cfg.delay_setting_i if cfg.delay_setting_i is not None else 63
        delay_ns = (calibration.CYCLE_PERIOD * i + 1) * cfg.cell.d / C_MM_PER_NS
    dnu = delays.bandwidth_nm_to_thz(args.center_nm, args.width_nm)
    tbp = delays.time_bandwidth_product(dnu, delay_ns)
    reports.write_json(out / "tbp.json", {
        "reproduces": "spectral bandwidth and time-bandwidth product",
        "center_nm": args.center_nm,
        "width_nm": args.width_nm,
        "bandwidth_thz": dnu,
        "delay_ns": delay_ns,
        "time_bandwidth_product": tbp,
    })
    print(f"bandwidth = {dnu:.3f} THz, delay = {delay_ns:.3f} ns, "
          f"TBP = {tbp:.4g}")
    return EXIT_OK


def cmd_fiber_compare(args) -> int:
    cfg, out = _load(args)
    grid = np.geomspace(1.0, 1000.0, 121)
    curves = {
        "ULL fiber (0.15 dB/km + 0.2 dB coupling)":
            [delays.fiber_efficiency(d, 0.15, 0.2) for d in grid],
        "460HP-class fiber (28 dB/km + 0.2 dB coupling)":
            [delays.fiber_efficiency(d, 28.0, 0.2) for d in grid],
    }
    rows, effs = _delay_rows_with_efficiency(cfg, 63)
    cell_points = [(r.delay_ns, e) for r, e in zip(rows, effs)
                   if r.status == "ok" and e is not None and r.i > 0]
    reports.write_csv(
        out / "fiber_compare.csv",
        ["delay_ns", "ull_efficiency", "fiber460hp_efficiency"],
        [(float(d), float(curves["ULL fiber (0.15 dB/km + 0.2 dB coupling)"][k]),
          float(curves["460HP-class fiber (28 dB/km + 0.2 dB coupling)"][k]))
         for k, d in enumerate(grid)],
        header_comments=["reproduces: storage efficiency vs delay, cell vs fiber"])
    reports.fig_fiber_compare(out / "fiber_compare.png", grid, curves, cell_points)
    ref = delays.fiber_efficiency(687.0, 0.15, 0.2)
    print(f"ULL fiber at 687 ns: {ref:.4f}; "
          f"460HP at 687 ns: {delays.fiber_efficiency(687.0, 28.0, 0.2):.4f}")
    return EXIT_OK


def _channel_kraus(cfg: RunConfig, n: int):
    params = chan.BounceParams(cfg.channel.retardance_rad,
                               cfg.channel.diattenuation,
                               cfg.channel.axis_azimuth_rad)
    reflectance = None
    if cfg.channel.loss_tracking:
        curve = load_coating(cfg)
        reflectance = curve.reflectance_at(cfg.wavelength_nm)
    return chan.channel_from_path(n, params, cfg.channel.depolarizing_p,
                                  reflectance)


def _setting_n(cfg: RunConfig, override: int | None) -> int:
    if override is not None:
        return override
    i = cfg.delay_setting_i if cfg.delay_setting_i is not None else 63
    return calibration.CYCLE_PERIOD * i


def cmd_channel(args) -> int:
    cfg, out = _load(args)
    n = _setting_n(cfg, args.n_reflections)
    kraus = _channel_kraus(cfg, n)
    chi = chan.chi_from_kraus(kraus)
    tr = float(np.trace(chi).real)
    pf = chan.process_fidelity(chi / tr, chan.identity_chi())
    reports.write_json(out / "chi.json", {
        "reproduces": "process matrix of the delay-line polarization channel",
        "normalization": "trace-1 (trace-preserving channels have unit trace)",
        "n_reflections": n,
        "chi": reports.complex_matrix_to_json(chi),
        "chi_trace": tr,
        "process_fidelity_to_identity": pf,
        "survival_scale": tr,
    })
    reports.write_csv(out / "chi_bars.csv",
                      ["row", "col", "real", "imag"],
                      reports.matrix_bar_rows(chi, reports.PAULI_LABELS),
                      header_comments=["reproduces: process-matrix bar data",
                                       "normalization = trace-1"])
    reports.fig_matrix_bars(out / "chi.png", chi, reports.PAULI_LABELS,
                            "process matrix")
    print(f"chi trace = {tr:.6f}, process fidelity to identity = {pf:.6f}")
    return EXIT_OK


def _fringe_samples(rho_out, rng_seed: int, pair_rate, time_s, n_angles=13):
    """Coincidence fringes vs signal analyzer angle in the H/V and D/A bases."""
    fringes = {}
    rng = np.random.default_rng(rng_seed)
    angles = np.linspace(0.0, 180.0, n_angles)
    for basis, idler_label in (("HV", "H"), ("DA", "D")):
        samples = []
        for th in angles:
            k = np.array([math.cos(math.radians(th)),
                          math.sin(math.radians(th))], dtype=complex)
            proj = np.kron(np.outer(k, k.conj()), tomo.projector(idler_label))
            mean = pair_rate * time_s * float(np.trace(proj @ rho_out).real)
            samples.append((float(th), float(rng.poisson(max(mean, 0.0)))))
        fringes[basis] = samples
    return fringes


def cmd_tomography(args) -> int:
    cfg, out = _load(args)
    ts = cfg.tomography
    if args.mode == "histogram":
        i = cfg.delay_setting_i if cfg.delay_setting_i is not None else 63
        delay_ns = args.delay_ns if args.delay_ns is not None else \
            (calibration.CYCLE_PERIOD * i + 1) * cfg.cell.d / C_MM_PER_NS
        res = tomo.coincidence_histogram(
            delay_ns, ts.jitter_ps, ts.n_events, ts.bin_width_ps,
            ts.systemic_offset_ns, seed=ts.seed)
        h = res.histogram
        reports.write_csv(out / "histogram.csv", ["bin_start_ns", "count"],
                          [(h.origin_ns + k * h.bin_width_ps * 1e-3, int(c))
                           for k, c in enumerate(h.bins)],
                          header_comments=["reproduces: delay histogram",
                                           f"true_delay_ns = {delay_ns!r}"])
        reports.write_json(out / "histogram_peak.json", {
            "reproduces": "delay histogram peak estimate",
            "true_delay_ns": delay_ns,
            "delay_estimate_ns": res.delay_estimate_ns,
            "delay_se_ns": res.delay_se_ns,
            "fit_ok": res.fit_ok,
            "n_events": ts.n_events,
            "jitter_ps": ts.jitter_ps,
            "systemic_offset_ns": ts.systemic_offset_ns,
        })
        reports.fig_histogram_overlay(out / "histogram.png", [res],
                                      [f"{delay_ns:.1f} ns"])
        print(f"peak estimate {res.delay_estimate_ns:.4f} ns "
              f"(se {res.delay_se_ns * 1e3:.2f} ps)")
        return EXIT_OK

    n = _setting_n(cfg, None)
    kraus = _channel_kraus(cfg, n)
    settings = tomo.default_settings(ts.n_settings)
    noise = not args.noiseless

    if args.mode == "qst":
        rho_in = chan.bell_phi_plus()
        rho_out, survival = chan.apply_channel_signal(rho_in, kraus)
        fids, vis_avgs = [], []
        first = None
        n_runs = max(1, args.ensemble if noise else 1)
        for k in range(n_runs):
            recs = tomo.simulate_counts(rho_out, settings, ts.pair_rate_hz,
                                        ts.integration_time_s,
                                        ts.accidental_rate_hz,
                                        seed=ts.seed + k, noise=noise)
            mle = tomo.mle_qst(recs, accidental_rate=ts.accidental_rate_hz)
            fids.append(chan.state_fidelity(rho_in, mle.rho))
            fr = _fringe_samples(rho_out, ts.seed + 1000 + k,
                                 ts.pair_rate_hz, ts.integration_time_s) \
                if noise else None
            if fr is not None:
                per, avg = chan.average_visibility(fr)
                vis_avgs.append(avg)
            if first is None:
                first = (recs, mle, fr)
        recs, mle, fringes = first
        fid = float(np.mean(fids))
        fid_se = float(np.std(fids) / math.sqrt(len(fids))) if len(fids) > 1 else 0.0
        report = {
            "reproduces": "two-photon state tomography through the delay line",
            "mode": "qst",
            "n_settings": ts.n_settings,
            "delay_setting_i": cfg.delay_setting_i,
            "n_reflections": n,
            "noise": noise,
            "survival_probability": survival,
            "fidelity_to_input": fid,
            "fidelity_to_input_se": fid_se,
            "fidelity_formatted": reports.format_uncertainty(fid, fid_se),
            "fidelity_to_true_output": chan.state_fidelity(rho_out, mle.rho),
            "converged": mle.converged,
            "iterations": mle.iterations,
            "grad_norm": mle.grad_norm,
            "rho_reconstructed": reports.complex_matrix_to_json(mle.rho),
            "rho_eigenvalues": sorted(
                float(x) for x in np.linalg.eigvalsh(mle.rho)),
        }
        if fringes is not None:
            per, avg = chan.average_visibility(fringes)
            report["visibility"] = {b: r.visibility for b, r in per.items()}
            report["visibility_average"] = avg
            if len(vis_avgs) > 1:
                v_se = float(np.std(vis_avgs) / math.sqrt(len(vis_avgs)))
                report["visibility_formatted"] = \
                    reports.format_uncertainty(avg, v_se)
            reports.fig_fringes(out / "fringes.png", fringes, per)
        reports.write_json(out / "qst_report.json", report)
        tomo.write_counts_csv(
            out / "counts.csv", recs,
            header_comments=["reproduces: coincidence counts across "
                             "polarization settings"])
        reports.fig_matrix_bars(out / "rho.png", mle.rho,
                                reports.TWO_PHOTON_LABELS,
                                "reconstructed density matrix")
        print(f"QST fidelity to input = {report['fidelity_formatted']}")
        return EXIT_OK

    # qpt
    fids = []
    first_result = None
    n_runs = max(1, args.ensemble if noise else 1)
    for k in range(n_runs):
        datasets = {}
        for j, label in enumerate(tomo.EIGENSTATE_LABELS):
            rho_in = tomo.projector(label)
            rho_out, _ = chan.apply_channel(rho_in, kraus)
            datasets[label] = tomo.simulate_counts(
                rho_out, tomo.single_qubit_settings(), ts.pair_rate_hz,
                ts.integration_time_s, ts.accidental_rate_hz,
                seed=ts.seed + 100 * k + j, noise=noise)
        result = tomo.process_tomography(datasets,
                                         accidental_rate=ts.accidental_rate_hz)
        fids.append(chan.process_fidelity(result.chi, chan.identity_chi()))
        if first_result is None:
            first_result = result
    pf = float(np.mean(fids))
    pf_se = float(np.std(fids) / math.sqrt(len(fids))) if len(fids) > 1 else 0.0
    result = first_result
    reports.write_json(out / "qpt_report.json", {
        "reproduces": "process tomography of the delay-line channel",
        "mode": "qpt",
        "normalization": "trace-1",
        "n_reflections": n,
        "delay_setting_i": cfg.delay_setting_i,
        "noise": noise,
        "process_fidelity_to_identity": pf,
        "process_fidelity_se": pf_se,
        "process_fidelity_formatted": reports.format_uncertainty(pf, pf_se),
        "chi_reconstructed": reports.complex_matrix_to_json(result.chi),
        "chi00": float(result.chi[0, 0].real),
        "pre_projection_residual": result.residual,
        "raw_eigenvalues": [float(x) for x in result.raw_eigenvalues],
    })
    reports.write_csv(out / "chi_bars.csv",
                      ["row", "col", "real", "imag"],
                      reports.matrix_bar_rows(result.chi, reports.PAULI_LABELS),
                      header_comments=["reproduces: reconstructed process matrix",
                                       "normalization = trace-1"])
    reports.fig_matrix_bars(out / "chi_reconstructed.png", result.chi,
                            reports.PAULI_LABELS, "reconstructed process matrix")
    print(f"QPT process fidelity to identity = "
          f"{reports.format_uncertainty(pf, pf_se)}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    cfg, out = _load(args)
    ts = cfg.tomography
    try:
        indices = [int(x) for x in args.settings_i.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --settings-i {args.settings_i!r}")
    if not indices:
        raise ConfigError("--settings-i must list at least one index")
    sol = _injection_solution(cfg)
    rows = delays.delay_table(cfg.cell, sol, i_max=max(indices))
    by_i = {r.i: r for r in rows}
    results, labels, peaks = [], [], []
    long_rows = []
    for k, i in enumerate(indices):
        row = by_i.get(i)
        if row is None or row.status != "ok":
            raise GeometryError(f"setting i={i} unavailable: "
                                f"{row.status if row else 'missing'}")
        res = tomo.coincidence_histogram(
            row.delay_ns, ts.jitter_ps, ts.n_events, ts.bin_width_ps,
            ts.systemic_offset_ns, seed=ts.seed + k)
        results.append(res)
        labels.append(f"i={i} ({row.delay_ns:.1f} ns)")
        peaks.append({"i": i, "true_delay_ns": row.delay_ns,
                      "peak_ns": res.delay_estimate_ns,
                      "se_ns": res.delay_se_ns})
        h = res.histogram
        for b, c in enumerate(h.bins):
            long_rows.append((i, h.origin_ns + b * h.bin_width_ps * 1e-3, int(c)))
    reports.write_csv(out / "histogram_overlay.csv",
                      ["setting_i", "bin_start_ns", "count"], long_rows,
                      header_comments=["reproduces: delay histograms of several "
                                       "settings in one overlay"])
    reports.write_json(out / "histogram_peaks.json",
                       {"reproduces": "delay histogram peaks", "peaks": peaks})
    reports.fig_histogram_overlay(out / "histogram_overlay.png", results, labels)
    print("histogram peaks:",
          ", ".join(f"i={p['i']}: {p['peak_ns']:.2f} ns" for p in peaks))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg, out = _load(args)
    sol = calibration.calibrate_injection(cfg.cell,
                                          exit_ring_radius=args.exit_ring_mm,
                                          i_max=args.i_max)
    frag = out / "injection.cfg"
    new_cfg = replace(
        cfg,
        injection=replace(cfg.injection,
                          entry_radius_mm=sol.entry_radius,
                          entry_azimuth_deg=sol.entry_azimuth_deg,
                          tilt_x=sol.tilt_x, tilt_y=sol.tilt_y),
        cell=replace(cfg.cell,
                     pupil_radius_pos=sol.pupil_radius_exit,
                     pupil_radius_entry=sol.pupil_radius_entry))
    write_config(new_cfg, frag)
    lines = [
        f"calibrated injection written to {frag}",
        f"entry_radius_mm = {sol.entry_radius!r}",
        f"tilt_x = {sol.tilt_x!r}",
        f"tilt_y = {sol.tilt_y!r}",
        f"cycle_rotation_deg = {sol.cycle_rotation_deg!r}",
        f"ring_radii = { {k: round(v, 4) for k, v in sol.ring_radii.items()} }",
        f"validated_passes = {sol.max_clean_pass}",
    ]
    print("\n".join(lines))
    return EXIT_OK


_COMMANDS = {
    "trace": cmd_trace,
    "delay-table": cmd_delay_table,
    "efficiency": cmd_efficiency,
    "tbp": cmd_tbp,
    "fiber-compare": cmd_fiber_compare,
    "channel": cmd_channel,
    "tomography": cmd_tomography,
    "histogram": cmd_histogram,
    "calibrate-injection": cmd_calibrate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"geometry/trace error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OutOfBand as exc:
        print(f"out of band: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except EstimatorError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
