"""Comparison of the four-level model with the full two-mode model."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .._validation import ValidationError
from ..model import KHZ, SimplifiedParams, build_simplified
from ..spectra import TransitionTable, render, synthesize
from .peaks import find_peaks
from .scan import DeltaScan

LINE_LABELS = ("g->1", "g->2", "g->3", "1->2")


def simplified_lines(p):
    """Transition frequencies (rad/s) of the four-level model.

    The ground state ``g`` is uncoupled, so the three others are the
    eigenvalues ``E_1 <= E_2 <= E_3`` of the ``(e, x, y)`` block. Returned in
    the order ``g->1, g->2, g->3, 1->2``.
    """
    E = np.linalg.eigvalsh(build_simplified(p)[1:, 1:])
    return np.array([E[0], E[1], E[2], E[1] - E[0]])


def simplified_spectrum(p, grid_khz, linewidth_khz=2.0, eta_x=0.1, eta_y=0.15, spin_weight=0.01):
    """Spectrum of the four-level model from its ground state.

    Line ``g -> k`` has weight ``spin_weight |<e|k>|^2 + eta_x^2 |<x|k>|^2 +
    eta_y^2 |<y|k>|^2``; no thermal population, no carrier.
    """
    E, U = np.linalg.eigh(build_simplified(p)[1:, 1:])
    amp = spin_weight * U[0] ** 2 + eta_x**2 * U[1] ** 2 + eta_y**2 * U[2] ** 2
    n = E.size
    table = TransitionTable(
        omega=E,
        amplitude=amp,
        initial=np.zeros(n, dtype=int),
        final=np.arange(1, n + 1),
        z_change=np.zeros(n, dtype=int),
        initial_label=np.zeros(n, dtype=int),
        final_label=np.arange(1, n + 1),
    )
    return render(table, grid_khz, linewidth_khz)


def simplified_scan(p, deltas, grid_khz, linewidth_khz=2.0, **weights):
    """:class:`DeltaScan` of :func:`simplified_spectrum` over ``deltas`` (rad/s)."""
    deltas = np.sort(np.asarray(deltas, dtype=float).ravel())
    if deltas.size == 0:
        raise ValidationError("deltas is empty")
    rows = [
        simplified_spectrum(SimplifiedParams(d, p.omega_x, p.omega_y, p.Omega_x, p.Omega_y), grid_khz,
                            linewidth_khz, **weights).psd
        for d in deltas
    ]
    grid = np.asarray(grid_khz, dtype=float)
    return DeltaScan(deltas=deltas, freq_khz=grid, psd=np.vstack(rows), linewidth_khz=float(linewidth_khz),
                     metadata={"include_carrier": False})


@dataclass(frozen=True)
class ComparisonResult:
    """Full-model peak matched to each four-level line (kHz).

    ``full_khz`` is NaN where no peak lay within the gate; those
    ``(delta_khz, label)`` pairs are listed in ``failures``.
    """

    deltas_khz: np.ndarray
    simplified_khz: np.ndarray
    full_khz: np.ndarray
    gate_khz: float
    failures: list

    @property
    def deviation_khz(self):
        return np.abs(self.full_khz - self.simplified_khz)

    @property
    def max_deviation_khz(self):
        d = self.deviation_khz
        return float(np.nanmax(d)) if np.any(np.isfinite(d)) else float("nan")

    def max_deviation_per_line(self):
        return {lab: float(np.nanmax(self.deviation_khz[:, j])) if np.any(np.isfinite(self.deviation_khz[:, j])) else float("nan")
                for j, lab in enumerate(LINE_LABELS)}


def match_ridges(predicted_khz, peak_lists, gate_khz=10.0):
    """Associate predicted lines with observed peaks along a scan.

    At each scan point lines and peaks are paired one-to-one so that the
    summed distance is smallest; pairs farther apart than ``gate_khz`` are
    dropped and reported. Equal distances are broken toward the peak closest
    to the line's match at the previous scan point.
    """
    predicted_khz = np.asarray(predicted_khz, dtype=float)
    n, m = predicted_khz.shape
    out = np.full((n, m), np.nan)
    prev = np.full(m, np.nan)
    failures = []
    for k in range(n):
        centers = np.asarray(peak_lists[k], dtype=float)
        if centers.size:
            d = np.abs(centers[None, :] - predicted_khz[k][:, None])
            cont = np.where(np.isfinite(prev)[:, None], np.abs(centers[None, :] - prev[:, None]), 0.0)
            # the continuity term stays below the 1e-9 kHz rounding of d
            cost = np.round(d, 9) + 1e-10 * cont / (1.0 + cont)
            cost[d > gate_khz] = _NO_MATCH
            rows, cols = optimize.linear_sum_assignment(cost)
            for j, c in zip(rows, cols):
                if d[j, c] <= gate_khz:
                    out[k, j] = centers[c]
                    prev[j] = centers[c]
        failures.extend((k, j) for j in range(m) if np.isnan(out[k, j]))
    return out, failures


_NO_MATCH = 1e12


def compare_models(params, deltas, thermal, emission, grid_khz, linewidth_khz=2.0, gate_khz=10.0,
                   min_height_fraction=0.01, min_separation_khz=3.0):
    """Track the four-level lines through full-model spectra over ``deltas`` (rad/s).

    The carrier is left out of the full spectra so it cannot be matched.
    """
    deltas = np.asarray(deltas, dtype=float).ravel()
    if deltas.size == 0:
        raise ValidationError("deltas is empty")
    deltas = np.sort(deltas)
    simple, peaks = [], []
    for d in deltas:
        p = params.with_delta(d)
        simple.append(simplified_lines(SimplifiedParams.from_model(p)) / KHZ)
        sp = synthesize(p, thermal, emission, grid_khz, linewidth_khz, include_carrier=False)
        peaks.append([pk.center_khz for pk in find_peaks(sp, min_height_fraction, min_separation_khz)])
    simple = np.asarray(simple)
    full, fails = match_ridges(simple, peaks, gate_khz)
    failures = [(float(deltas[k] / KHZ), LINE_LABELS[j]) for k, j in fails]
    return ComparisonResult(deltas / KHZ, simple, full, float(gate_khz), failures)
