"""Polarization quantum channel model of the delay line.

Basis conventions, fixed package-wide: single qubit (H, V); photon pairs
(HH, HV, VH, VV) with the signal as the first factor; Pauli operator
order (I, X, Y, Z); circular states R = (|H> + i|V>)/sqrt(2). Process
matrices use the trace-1 normalization (a trace-preserving qubit channel
has unit-trace chi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    FitFailure,
    NormalizationMismatch,
    ZeroTrace,
)
from .geometry import TracePath

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, PAULI_X, PAULI_Y, PAULI_Z)

HERMITICITY_ATOL = 1e-10
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-10


def validate_density_matrix(rho: np.ndarray, atol: float = HERMITICITY_ATOL) -> None:
    """Raise if rho is not Hermitian, unit trace, positive semidefinite."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatch(f"density matrix must be square, got {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > TRACE_ATOL:
        raise ValueError(f"density matrix trace {np.trace(rho)} != 1")
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    if w.min() < -PSD_ATOL:
        raise ValueError(f"density matrix has negative eigenvalue {w.min()}")


def validate_chi_matrix(chi: np.ndarray, atol: float = HERMITICITY_ATOL) -> None:
    chi = np.asarray(chi)
    if chi.shape != (4, 4):
        raise DimensionMismatch(f"chi matrix must be 4x4, got {chi.shape}")
    if not np.allclose(chi, chi.conj().T, atol=atol, rtol=0):
        raise ValueError("chi matrix is not Hermitian")
    w = np.linalg.eigvalsh((chi + chi.conj().T) / 2)
    if w.min() < -PSD_ATOL:
        raise ValueError(f"chi matrix has negative eigenvalue {w.min()}")


def bell_phi_plus() -> np.ndarray:
    """Density matrix of (|HH> + |VV>)/sqrt(2) in the HH, HV, VH, VV basis."""
    psi = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
    return np.outer(psi, psi.conj())


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=complex)


def bounce_jones(retardance: float, diattenuation: float = 0.0,
                 axis_azimuth: float = 0.0) -> np.ndarray:
    """Jones matrix of one mirror reflection, as a rotated retarder-attenuator.

    Rot(-theta) @ diag(1, sqrt(1 - diattenuation) e^{i delta}) @ Rot(theta);
    all angles in radians.
    """
    if not 0.0 <= diattenuation < 1.0:
        raise ValueError("diattenuation must lie in [0, 1)")
    core = np.array([[1.0, 0.0],
                     [0.0, math.sqrt(1.0 - diattenuation) * np.exp(1j * retardance)]],
                    dtype=complex)
    return _rot(-axis_azimuth) @ core @ _rot(axis_azimuth)


@dataclass(frozen=True)
class BounceParams:
    retardance: float = 0.0        # radians per reflection
    diattenuation: float = 0.0
    axis_azimuth: float = 0.0      # radians

    def jones(self) -> np.ndarray:
        return bounce_jones(self.retardance, self.diattenuation, self.axis_azimuth)


def channel_from_path(path: TracePath | int,
                      bounce_params: BounceParams | Sequence[BounceParams],
                      depolarizing_p: float = 0.0,
                      reflectance: float | None = None) -> list[np.ndarray]:
    """Kraus operators of the polarization channel for one transit.

    The coherent part is the ordered product of per-reflection Jones
    matrices (first bounce applied first), scaled by sqrt(reflectance)
    per bounce when loss tracking is requested. A depolarizing admixture
    p in [0, 1] mixes in white noise, Lambda(rho) = (1-p) J rho J^+ +
    p tr(rho) I/2, which is fully depolarizing at p = 1; it expands the
    single operator into four.
    """
    if not 0.0 <= depolarizing_p <= 1.0:
        raise ValueError("depolarizing admixture must lie in [0, 1]")
    n = path.n_reflections if isinstance(path, TracePath) else int(path)
    if isinstance(bounce_params, BounceParams):
        seq = [bounce_params] * n
    else:
        seq = list(bounce_params)
        if len(seq) != n:
            raise ValueError(f"got {len(seq)} bounce parameters for {n} reflections")
    j = I2.copy()
    for bp in seq:
        j = bp.jones() @ j
    if reflectance is not None:
        if not 0.0 < reflectance <= 1.0:
            raise ValueError("per-bounce reflectance must lie in (0, 1]")
        j = j * reflectance ** (n / 2.0)
    if depolarizing_p == 0.0:
        return [j]
    p = depolarizing_p
    return [math.sqrt(1.0 - 0.75 * p) * j,
            math.sqrt(p / 4.0) * (PAULI_X @ j),
            math.sqrt(p / 4.0) * (PAULI_Y @ j),
            math.sqrt(p / 4.0) * (PAULI_Z @ j)]


def apply_channel_signal(rho: np.ndarray, kraus: Sequence[np.ndarray]
                         ) -> tuple[np.ndarray, float]:
    """Apply a single-qubit channel to the signal factor of a two-photon state.

    Returns (renormalized output, survival probability). The survival
    probability is the pre-normalization trace; trace-preserving
    channels give 1 up to roundoff.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise DimensionMismatch(f"expected a 4x4 two-photon state, got {rho.shape}")
    out = np.zeros_like(rho)
    for k in kraus:
        big = np.kron(k, I2)
        out += big @ rho @ big.conj().T
    survival = float(np.trace(out).real)
    if survival <= 1e-12:
        raise ZeroTrace("channel output trace underflowed")
    return out / survival, survival


def apply_channel(rho: np.ndarray, kraus: Sequence[np.ndarray]
                  ) -> tuple[np.ndarray, float]:
    """Single-qubit version of apply_channel_signal."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise DimensionMismatch(f"expected a 2x2 state, got {rho.shape}")
    out = np.zeros_like(rho)
    for k in kraus:
        out += k @ rho @ k.conj().T
    survival = float(np.trace(out).real)
    if survival <= 1e-12:
        raise ZeroTrace("channel output trace underflowed")
    return out / survival, survival


def chi_from_kraus(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Process matrix over the Pauli basis: K_i = sum_m c_im E_m, chi = c^dag-sum.

    Hermitian and positive semidefinite by construction; unit trace for
    trace-preserving channels.
    """
    coeffs = np.array([[np.trace(E.conj().T @ k) / 2.0 for E in PAULIS]
                       for k in kraus])
    return coeffs.T @ coeffs.conj()


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh((m + m.conj().T) / 2)
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def state_fidelity(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(a) b sqrt(a)))^2, via eigendecomposition."""
    rho_a = np.asarray(rho_a, dtype=complex)
    rho_b = np.asarray(rho_b, dtype=complex)
    if rho_a.shape != rho_b.shape:
        raise DimensionMismatch(
            f"dimension mismatch: {rho_a.shape} vs {rho_b.shape}")
    sa = _psd_sqrt(rho_a)
    inner = sa @ rho_b @ sa
    f = float(np.trace(_psd_sqrt(inner)).real) ** 2
    return min(max(f, 0.0), 1.0)


def process_fidelity(chi: np.ndarray, target: np.ndarray) -> float:
    """Fidelity between two process matrices treated as density operators.

    Both must share the trace-1 normalization; for the identity target
    this reduces to chi[0, 0].
    """
    chi = np.asarray(chi, dtype=complex)
    target = np.asarray(target, dtype=complex)
    ta, tb = float(np.trace(chi).real), float(np.trace(target).real)
    if abs(ta - tb) > 1e-6:
        raise NormalizationMismatch(
            f"chi traces differ ({ta} vs {tb}); same normalization required")
    return state_fidelity(chi / ta, target / tb)


def identity_chi() -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1.0
    return chi


@dataclass
class VisibilityResult:
    visibility: float
    offset: float
    amplitude: float
    phase_deg: float
    residual: float


def visibility(coincidences: Sequence[tuple[float, float]]) -> VisibilityResult:
    """Fringe visibility from (analyzer angle deg, counts) samples.

    Least-squares fit of C(theta) = A + B cos(2(theta - theta0));
    visibility is B/A clipped to [0, 1]. Needs >= 4 samples spanning at
    least half a fringe period (90 degrees).
    """
    data = np.asarray(coincidences, dtype=float)
    if data.ndim != 2 or data.shape[0] < 4:
        raise FitFailure("need at least 4 (angle, count) samples")
    th = np.radians(data[:, 0])
    counts = data[:, 1]
    span = data[:, 0].max() - data[:, 0].min()
    if span < 90.0 - 1e-9:
        raise FitFailure(f"samples span only {span} degrees, need >= 90")
    design = np.column_stack([np.ones_like(th), np.cos(2 * th), np.sin(2 * th)])
    coef, res, rank, _ = np.linalg.lstsq(design, counts, rcond=None)
    if rank < 3:
        raise FitFailure("degenerate fringe fit (rank-deficient design)")
    a0, a1, a2 = coef
    amplitude = math.hypot(a1, a2)
    if a0 <= 0:
        raise FitFailure("non-positive fringe offset")
    v = min(max(amplitude / a0, 0.0), 1.0)
    phase = math.degrees(math.atan2(a2, a1)) / 2.0
    resid = float(np.sqrt(res[0])) if res.size else 0.0
    return VisibilityResult(v, float(a0), float(amplitude), phase, resid)


def average_visibility(fringes: dict[str, Sequence[tuple[float, float]]]
                       ) -> tuple[dict[str, VisibilityResult], float]:
    """Per-basis visibility plus the average over bases."""
    per = {basis: visibility(samples) for basis, samples in fringes.items()}
    avg = float(np.mean([r.visibility for r in per.values()]))
    return per, avg
