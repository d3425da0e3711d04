"""Report rendering: delimited outputs, JSON, SVG spot scenes, figures.

CSV and JSON writers are deterministic (stable key order, repr floats)
so identical runs produce byte-identical files. SVG scenes carry no
timestamps. Matplotlib figures are rendered with the Agg backend.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .geometry import CellConfig, TracePath  # noqa: E402

TWO_PHOTON_LABELS = ("HH", "HV", "VH", "VV")
PAULI_LABELS = ("I", "X", "Y", "Z")


def format_uncertainty(value: float, sigma: float) -> str:
    """Parenthesis notation: format_uncertainty(0.9964, 0.0087) -> '0.996(9)'."""
    if sigma <= 0 or not math.isfinite(sigma):
        return f"{value:.6f}"
    exponent = math.floor(math.log10(sigma))
    digit = round(sigma / 10 ** exponent)
    if digit >= 10:
        digit = 1
        exponent += 1
    decimals = max(-exponent, 0)
    return f"{value:.{decimals}f}({digit})"


def _fmt_cell(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence],
              header_comments: Sequence[str] = ()) -> None:
    lines = [f"# {c}" for c in header_comments]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt_cell(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def complex_matrix_to_json(m: np.ndarray) -> list:
    """Nested arrays of [re, im] pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def complex_matrix_from_json(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data])


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def matrix_bar_rows(m: np.ndarray, labels: Sequence[str]):
    rows = []
    for i, ri in enumerate(labels):
        for j, rj in enumerate(labels):
            rows.append((ri, rj, float(m[i, j].real), float(m[i, j].imag)))
    return rows


# ---------------------------------------------------------------------------
# SVG spot scenes

def _gradient_color(fraction: float) -> str:
    """Blue (first spots) to green (last spots)."""
    f = min(max(fraction, 0.0), 1.0)
    r = int(round(31 + (44 - 31) * f))
    g = int(round(119 + (160 - 119) * f))
    b = int(round(180 + (44 - 180) * f))
    return f"#{r:02x}{g:02x}{b:02x}"


def spot_scene_svg(path: TracePath, config: CellConfig, mirror_id: int,
                   size_px: int = 640, default_spot_radius_mm: float = 0.45) -> str:
    """SVG rendering of the spot pattern on one mirror.

    One circle per reflection on that mirror, colored blue-to-green in
    temporal order, radius taken from the Gaussian spot size when
    available. Aperture and pupil outlines are drawn for orientation.
    """
    margin = 1.04
    scale = size_px / (2 * config.r_outer * margin)

    def xy(px, py):
        return (size_px / 2 + px * scale, size_px / 2 - py * scale)

    el = []
    cx, cy = size_px / 2, size_px / 2
    el.append(f'<circle cx="{cx}" cy="{cy}" r="{config.r_outer * scale:.2f}" '
              f'fill="none" stroke="#444" stroke-width="1.5"/>')
    el.append(f'<circle cx="{cx}" cy="{cy}" r="{config.r_inner * scale:.2f}" '
              f'fill="none" stroke="#999" stroke-width="1" '
              f'stroke-dasharray="6 4"/>')
    if mirror_id == 1:
        pc = config.entry_pupil_center()
        px, py = xy(pc[0], pc[1])
        el.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" '
                  f'r="{config.pupil_r * scale:.2f}" fill="none" '
                  f'stroke="#cc3333" stroke-width="1.5"/>')
    elif config.exit_pupil_center() is not None:
        pc = config.exit_pupil_center()
        px, py = xy(pc[0], pc[1])
        el.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" '
                  f'r="{config.pupil_r * scale:.2f}" fill="none" '
                  f'stroke="#cc3333" stroke-width="1.5"/>')

    spots = [s for s in path.spots if s.mirror_id == mirror_id]
    n = max(len(path.spots) - 1, 1)
    for s in spots:
        px, py = xy(s.point[0], s.point[1])
        w = s.spot_radius if s.spot_radius is not None else default_spot_radius_mm
        color = _gradient_color(s.pass_index / n)
        el.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{w * scale:.2f}" '
                  f'fill="{color}" fill-opacity="0.85"/>')
    body = "\n  ".join(el)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size_px}" '
            f'height="{size_px}" viewBox="0 0 {size_px} {size_px}">\n'
            f'  <rect width="{size_px}" height="{size_px}" fill="white"/>\n'
            f'  {body}\n</svg>\n')


# ---------------------------------------------------------------------------
# Matplotlib figures

def fig_spot_pattern(path_png: str | Path, trace: TracePath,
                     config: CellConfig) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10.5, 5.2))
    for ax, mirror_id, name in ((axes[0], 1, "entry mirror"),
                                (axes[1], 2, "exit mirror")):
        spots = [s for s in trace.spots if s.mirror_id == mirror_id]
        if spots:
            x = [s.point[0] for s in spots]
            y = [s.point[1] for s in spots]
            order = [s.pass_index for s in spots]
            sc = ax.scatter(x, y, c=order, cmap="winter", s=18, zorder=3)
            fig.colorbar(sc, ax=ax, label="pass index", shrink=0.8)
        for r, style in ((config.r_outer, "-"), (config.r_inner, "--")):
            th = np.linspace(0, 2 * np.pi, 256)
            ax.plot(r * np.cos(th), r * np.sin(th), style, color="0.4", lw=1)
        pc = config.entry_pupil_center() if mirror_id == 1 \
            else config.exit_pupil_center()
        if pc is not None:
            th = np.linspace(0, 2 * np.pi, 64)
            ax.plot(pc[0] + config.pupil_r * np.cos(th),
                    pc[1] + config.pupil_r * np.sin(th), color="crimson", lw=1.2)
        ax.set_aspect("equal")
        ax.set_title(f"{name} ({len(spots)} spots)")
        ax.set_xlabel("x (mm)")
        ax.set_ylabel("y (mm)")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_delay_table(path_png: str | Path, rows, efficiencies) -> None:
    ok = [(r, e) for r, e in zip(rows, efficiencies)
          if r.status == "ok" and e is not None]
    if not ok:
        return
    fig, axes = plt.subplots(1, 2, figsize=(10.5, 4.2))
    i_vals = [r.i for r, _ in ok]
    delays = [r.delay_ns for r, _ in ok]
    effs = [e for _, e in ok]
    axes[0].plot(i_vals, delays, "o-", ms=3)
    axes[0].set_xlabel("setting index i")
    axes[0].set_ylabel("delay (ns)")
    axes[0].set_title("delay vs setting")
    axes[1].plot(delays, effs, "s-", ms=3, color="seagreen")
    axes[1].set_xlabel("delay (ns)")
    axes[1].set_ylabel("predicted retrieval efficiency")
    axes[1].set_title("efficiency vs delay")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_matrix_bars(path_png: str | Path, m: np.ndarray, labels: Sequence[str],
                    title: str) -> None:
    m = np.asarray(m, dtype=complex)
    n = len(labels)
    fig = plt.figure(figsize=(11, 4.6))
    for panel, part, name in ((1, m.real, "real"), (2, m.imag, "imaginary")):
        ax = fig.add_subplot(1, 2, panel, projection="3d")
        xs, ys = np.meshgrid(range(n), range(n), indexing="ij")
        xs, ys = xs.ravel(), ys.ravel()
        vals = part.ravel()
        ax.bar3d(xs - 0.35, ys - 0.35, np.zeros_like(vals), 0.7, 0.7, vals,
                 color=plt.cm.coolwarm((vals + 1) / 2), shade=True)
        ax.set_xticks(range(n))
        ax.set_xticklabels(labels)
        ax.set_yticks(range(n))
        ax.set_yticklabels(labels)
        ax.set_zlim(min(-0.05, vals.min() * 1.1), max(0.55, vals.max() * 1.1))
        ax.set_title(f"{title} ({name})")
    fig.subplots_adjust(left=0.02, right=0.98, wspace=0.08)
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_histogram_overlay(path_png: str | Path, results, labels) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.2))
    for res, label in zip(results, labels):
        h = res.histogram
        ax.step(h.bin_centers_ns, h.bins, where="mid", label=label)
    ax.set_xlabel("arrival-time difference (ns)")
    ax.set_ylabel("coincidences per bin")
    ax.legend()
    ax.set_title("delay histograms")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_fringes(path_png: str | Path, fringes: dict, fits: dict) -> None:
    fig, ax = plt.subplots(figsize=(8.5, 4.2))
    for basis, samples in fringes.items():
        data = np.asarray(samples, dtype=float)
        ax.plot(data[:, 0], data[:, 1], "o", ms=4, label=f"{basis} data")
        r = fits[basis]
        th = np.linspace(data[:, 0].min(), data[:, 0].max(), 200)
        ax.plot(th, r.offset + r.amplitude
                * np.cos(2 * np.radians(th - r.phase_deg)), "-", lw=1)
    ax.set_xlabel("signal analyzer angle (deg)")
    ax.set_ylabel("coincidences")
    ax.legend()
    ax.set_title("polarization correlation fringes")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_fiber_compare(path_png: str | Path, delays_ns, curves: dict,
                      cell_points) -> None:
    fig, ax = plt.subplots(figsize=(8.5, 4.6))
    for label, eff in curves.items():
        ax.plot(delays_ns, eff, lw=1.6, label=label)
    if cell_points:
        d, e = zip(*cell_points)
        ax.plot(d, e, "k*", ms=11, label="this delay line")
    ax.set_xscale("log")
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("efficiency")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("storage efficiency vs delay")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def fig_coating(path_png: str | Path, curve, points=None,
                band: tuple[float, float] | None = (535.0, 595.0)) -> None:
    fig, ax = plt.subplots(figsize=(8.5, 4.2))
    ax.plot(curve.wavelengths_nm, 100 * curve.reflectances, lw=1.6,
            label="coating model")
    if points:
        w, r = zip(*points)
        ax.plot(w, [100 * v for v in r], "o", ms=5, label="estimated from efficiency")
    if band:
        ax.axvline(band[0], color="0.6", ls="--", lw=1)
        ax.axvline(band[1], color="0.6", ls="--", lw=1)
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("reflectance (%)")
    ax.set_ylim(97.5, 100.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)
