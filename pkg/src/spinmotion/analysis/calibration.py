"""Calibration pipeline: trap frequencies from far-detuned sidebands, the
Zeeman splitting from the spin line, couplings from the dressed-state
splitting at resonance, and avoided-crossing gap measurement.

Each stage measures peak positions directly from spectra. Those raw
estimates are biased by the dressing shifts of the coupled model (a few kHz
for ultra-strong coupling), so :class:`DickeCalibrator` finishes with a
forward-model correction: it re-runs the identical measurements on noiseless
spectra synthesized from trial parameters and solves for the parameters whose
predicted statistics equal the measured ones (Newton steps with a
finite-difference Jacobian). The same Jacobian carries the measurement
covariance over to the parameters.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import ValidationError
from ..model import CESIUM, KHZ, ModelParams, SimplifiedParams, build_simplified
from ..spectra import ThermalState, emission_operator, synthesize
from .peaks import find_peaks, locate_peak, matched_filter, noise_level
from .scan import DeltaScan
from .tuneout import fit_line


class CalibrationError(RuntimeError):
    """A fit did not converge or a required spectral feature was not found."""


class PeakNotFoundError(CalibrationError):
    pass


class WindowError(ValidationError):
    """The scan does not contain a usable Delta window for a stage."""


def _mean_and_error(values, errors):
    """Unweighted mean with its standard error from the scatter.

    Per-point fit errors are not used as weights: on noiseless model spectra
    they reflect line-shape misfit rather than noise, and the forward-model
    correction needs the statistic to be computed identically on both.
    """
    values = np.asarray(values, dtype=float)
    mean = float(np.mean(values))
    if values.size > 1:
        return mean, float(np.std(values, ddof=1) / np.sqrt(values.size))
    return mean, float(np.asarray(errors, dtype=float)[0])


def _window_indices(deltas_khz, window):
    lo, hi = window
    hi = np.inf if hi is None else hi
    return np.flatnonzero((deltas_khz >= lo) & (deltas_khz <= hi))


# --------------------------------------------------------------------------
# Trap frequencies


@dataclass(frozen=True)
class TrapCalibration:
    """Trap frequencies in rad/s with 1σ scatter; ``omega_z`` is None when no
    axial sideband was seen. ``centers_khz`` keeps the per-Delta fits."""

    omega_x: float
    omega_y: float
    omega_z: float | None
    omega_x_err: float
    omega_y_err: float
    omega_z_err: float | None
    indices: np.ndarray
    centers_khz: dict = field(default_factory=dict)


TRAP_MODES = ("y", "x", "z")  # ascending frequency order of the sidebands


def calibrate_traps(
    scan,
    delta_window_khz=(250.0, 330.0),
    n_modes=None,
    crossing_margin_khz=40.0,
    min_height_fraction=0.2,
    indices=None,
):
    """Trap frequencies from the blue motional sidebands far from resonance.

    In every spectrum with Delta inside the window, the tallest positive
    sidebands (the spin line near ``+Delta`` excluded) are fitted and assigned
    to ``y, x, z`` in ascending frequency order. Each frequency is the
    plain mean over the window with 1σ from the scatter.

    Raises:
        WindowError: the window holds no spectra, or it lies within
            ``crossing_margin_khz`` of a fitted radial trap frequency.
        PeakNotFoundError: no spectrum shows the expected sidebands.
    """
    deltas_khz = scan.deltas_khz
    if indices is None:
        indices = _window_indices(deltas_khz, delta_window_khz)
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        raise WindowError(f"scan has no spectra with Delta/2pi in {delta_window_khz} kHz")
    lw = scan.linewidth_khz

    per_delta = []
    for k in indices:
        sp = scan.spectrum(k)
        pos = sp.freq_khz > 3 * lw
        if not np.any(pos):
            continue
        noise = noise_level(sp.psd)
        top = float(np.max(sp.psd[pos]))
        if not top > 0:
            continue
        floor = max(min_height_fraction * top, 3 * noise)
        # half the floor keeps the smoothed search from fitting noise bumps
        search = min(max(1e-3, 0.5 * floor / max(float(np.max(sp.psd)), top)), 1.0)
        peaks = [
            p
            for p in find_peaks(sp, search, 3 * lw, smooth=True)
            if p.center_khz > 3 * lw
            and abs(p.center_khz - deltas_khz[k]) > 3 * lw
            and np.isfinite(p.center_err_khz)
            and p.height > floor
        ]
        if not peaks:
            continue
        per_delta.append(sorted(peaks, key=lambda p: -p.height))

    if not per_delta:
        raise PeakNotFoundError("no motional sidebands found in the far-detuned window")
    if n_modes is None:
        counts = [min(len(p), 3) for p in per_delta]
        n_modes = int(np.bincount(counts).argmax())
    if n_modes < 2:
        raise PeakNotFoundError("fewer than two motional sidebands found in the far-detuned window")

    centers = {m: [] for m in TRAP_MODES[:n_modes]}
    errors = {m: [] for m in TRAP_MODES[:n_modes]}
    for peaks in per_delta:
        if len(peaks) < n_modes:
            continue
        chosen = sorted(peaks[:n_modes], key=lambda p: p.center_khz)
        for mode, p in zip(TRAP_MODES, chosen):
            centers[mode].append(p.center_khz)
            errors[mode].append(p.center_err_khz)

    if not centers["y"]:
        raise PeakNotFoundError("sideband assignment failed in every spectrum")
    est = {m: _mean_and_error(centers[m], errors[m]) for m in centers}
    for mode in ("x", "y"):
        w = est[mode][0]
        closest = float(np.min(np.abs(deltas_khz[indices] - w)))
        if closest < crossing_margin_khz:
            raise WindowError(
                f"Delta window comes within {closest:.1f} kHz of the {mode} resonance at {w:.1f} kHz"
            )
    z = est.get("z")
    return TrapCalibration(
        omega_x=est["x"][0] * KHZ,
        omega_y=est["y"][0] * KHZ,
        omega_z=None if z is None else z[0] * KHZ,
        omega_x_err=est["x"][1] * KHZ,
        omega_y_err=est["y"][1] * KHZ,
        omega_z_err=None if z is None else z[1] * KHZ,
        indices=indices,
        centers_khz={m: np.asarray(v) for m, v in centers.items()},
    )


# --------------------------------------------------------------------------
# Zeeman splitting


@dataclass(frozen=True)
class ZeemanCalibration:
    """``Delta = scale * B_0 + offset`` with ``scale`` in rad/s per gauss and
    ``offset`` in rad/s."""

    scale: float
    offset: float
    scale_err: float
    offset_err: float
    indices: np.ndarray
    b0: np.ndarray
    centers_khz: np.ndarray

    def delta(self, b0):
        return self.scale * np.asarray(b0, dtype=float) + self.offset


def scan_b0_values(scan, consts=CESIUM):
    if scan.b0 is not None:
        return np.asarray(scan.b0, dtype=float)
    return scan.deltas / consts.zeeman_rate


def calibrate_zeeman(
    scan,
    b0=None,
    delta_window_khz=(270.0, None),
    search_khz=10.0,
    min_snr=5.0,
    consts=CESIUM,
    indices=None,
):
    """Fit the ``|g> -> |e>`` line position against ``B_0``.

    The line is searched within ``±search_khz`` of the nominal splitting in
    each spectrum of the window. ``b0`` defaults to ``scan.b0`` or, failing
    that, to the axis divided by the nominal ``g_F mu_B / hbar``.

    Raises:
        CalibrationError: fewer than three spectra show the line.
    """
    deltas_khz = scan.deltas_khz
    b0 = scan_b0_values(scan, consts) if b0 is None else np.asarray(b0, dtype=float)
    if indices is None:
        indices = _window_indices(deltas_khz, delta_window_khz)
    used, centers, errs = [], [], []
    for k in np.asarray(indices, dtype=int):
        pk = locate_peak(scan.spectrum(k), deltas_khz[k] - search_khz, deltas_khz[k] + search_khz, min_snr)
        if pk is None:
            continue
        used.append(k)
        centers.append(pk.center_khz)
        errs.append(pk.center_err_khz)
    if len(used) < 3:
        raise CalibrationError(f"spin line found in {len(used)} spectra; at least 3 are needed")
    used = np.asarray(used)
    line = fit_line(b0[used], np.asarray(centers))
    return ZeemanCalibration(
        scale=line.slope * KHZ,
        offset=line.intercept * KHZ,
        scale_err=line.slope_err * KHZ,
        offset_err=line.intercept_err * KHZ,
        indices=used,
        b0=b0[used],
        centers_khz=np.asarray(centers),
    )


# --------------------------------------------------------------------------
# Avoided-crossing gap


@dataclass(frozen=True)
class GapResult:
    """``resolved`` is False when the branches merged into one line at the
    minimum; ``gap`` is then 0, meaning below the spectral resolution."""

    delta_star: float
    gap: float
    deltas: np.ndarray
    gaps: np.ndarray
    resolved: bool = True


def branch_pair(spectrum, lo_khz, hi_khz, min_height_fraction=0.03, min_snr=3.0):
    """Two strongest fitted peaks inside the window, or None."""
    sel = (spectrum.freq_khz >= lo_khz) & (spectrum.freq_khz <= hi_khz)
    if np.count_nonzero(sel) < 5:
        return None
    lw = spectrum.linewidth_khz
    smoothed, gain = matched_filter(spectrum.psd, spectrum.step_khz, lw)
    floor = max(min_snr * noise_level(spectrum.psd) * gain, min_height_fraction * float(np.max(smoothed[sel])))
    idx, _ = signal.find_peaks(np.where(sel, smoothed, -np.inf), height=floor, distance=max(1, int(1.5 * lw / spectrum.step_khz)))
    idx = sorted(idx, key=lambda i: -smoothed[i])
    peaks = []
    for i in idx:
        pk = locate_peak(spectrum, spectrum.freq_khz[i] - lw, spectrum.freq_khz[i] + lw, min_snr)
        if pk is not None and lo_khz <= pk.center_khz <= hi_khz and all(abs(pk.center_khz - q.center_khz) > lw for q in peaks):
            peaks.append(pk)
        if len(peaks) == 2:
            break
    if len(peaks) < 2:
        return None
    a, b = sorted(peaks, key=lambda p: p.center_khz)
    return a, b


def min_gap(scan, window_khz, delta_range_khz=None, min_snr=3.0):
    """Minimum splitting between two dressed branches across a Delta scan.

    For each spectrum the two tallest peaks in the frequency window
    ``window_khz`` are taken as the branches; the minimum of their distance
    over Delta is found by a parabola through the three smallest samples.
    If the two smallest resolved gaps flank spectra where the branches merge
    into a single line, the gap is reported as 0 (``resolved=False``) at the
    midpoint of that run.

    Returns:
        GapResult with ``delta_star`` and ``gap`` in rad/s.

    Raises:
        PeakNotFoundError: fewer than three spectra resolve both branches.
    """
    lo, hi = window_khz
    deltas_khz = scan.deltas_khz
    idx = np.arange(len(scan)) if delta_range_khz is None else _window_indices(deltas_khz, delta_range_khz)
    ds, gaps, merged = [], [], []
    for k in idx:
        sp = scan.spectrum(k)
        pair = branch_pair(sp, lo, hi, min_snr=min_snr)
        if pair is None:
            if locate_peak(sp, lo, hi, min_snr) is not None:
                merged.append(deltas_khz[k])
            continue
        ds.append(deltas_khz[k])
        gaps.append(pair[1].center_khz - pair[0].center_khz)
    if len(ds) < 3:
        raise PeakNotFoundError(f"both branches resolved in only {len(ds)} spectra within {window_khz} kHz")
    ds, gaps = np.asarray(ds), np.asarray(gaps)
    two = np.sort(np.argsort(gaps, kind="stable")[:2])
    between = [d for d in merged if ds[two[0]] < d < ds[two[1]]]
    if two[1] == two[0] + 1 and between:
        # single merged line where the branches come closest
        d_star = 0.5 * (ds[two[0]] + ds[two[1]])
        return GapResult(delta_star=float(d_star) * KHZ, gap=0.0, deltas=ds * KHZ, gaps=gaps * KHZ, resolved=False)
    three = np.sort(np.argsort(gaps, kind="stable")[:3])
    x, y = ds[three], gaps[three]
    a, b, c = np.polyfit(x, y, 2)
    if a > 0 and x.min() <= -b / (2 * a) <= x.max():
        d_star = -b / (2 * a)
        g_star = max(c - b * b / (4 * a), 0.0)
    else:
        j = three[np.argmin(y)]
        d_star, g_star = ds[j], gaps[j]
    return GapResult(delta_star=float(d_star) * KHZ, gap=float(g_star) * KHZ, deltas=ds * KHZ, gaps=gaps * KHZ)


# --------------------------------------------------------------------------
# Couplings


@dataclass(frozen=True)
class CouplingCalibration:
    """Couplings ``g = Omega / 2`` in rad/s from the dressed-state line at
    ``±Omega`` measured in the spectrum closest to resonance."""

    g_x: float
    g_y: float
    g_x_err: float
    g_y_err: float
    indices: dict
    guesses_khz: dict
    sides: dict


def _dressed_guess(spectrum, omega_khz, half_khz=30.0, min_snr=3.0):
    pair = branch_pair(spectrum, omega_khz - half_khz, omega_khz + half_khz, min_snr=min_snr)
    if pair is not None:
        return pair[1].center_khz - pair[0].center_khz
    strong = locate_peak(spectrum, omega_khz - half_khz, omega_khz + half_khz, min_snr)
    if strong is None:
        return None
    return 2 * abs(strong.center_khz - omega_khz)


def measure_splitting(spectrum, guess_khz, search_khz=12.0, min_snr=3.0, sides=None):
    """Mean ``|center|`` of the ``±Omega`` pair near ``±guess_khz``.

    Returns ``(Omega_khz, err_khz, sides)`` with the signs actually used, or
    None. When ``sides`` is given every listed side must be found.
    """
    lw = spectrum.linewidth_khz
    lo = max(guess_khz - search_khz, 3 * lw)
    hi = guess_khz + search_khz
    found = {}
    for sign in (+1, -1) if sides is None else sides:
        a, b = (lo, hi) if sign > 0 else (-hi, -lo)
        pk = locate_peak(spectrum, a, b, min_snr)
        if pk is not None:
            found[sign] = pk
        elif sides is not None:
            return None
    if not found:
        return None
    vals = np.array([abs(pk.center_khz) for pk in found.values()])
    errs = np.array([pk.center_err_khz for pk in found.values()])
    return float(vals.mean()), float(np.sqrt(np.sum(errs**2)) / errs.size), tuple(found)


def fit_couplings(
    scan,
    omega_x,
    omega_y,
    effective_deltas=None,
    search_khz=12.0,
    min_snr=3.0,
    indices=None,
    guesses_khz=None,
    sides=None,
):
    """Couplings from the transition between dressed states at resonance.

    For each radial mode the spectrum whose Zeeman splitting is closest to
    the trap frequency is used. The splitting between the two sideband
    branches seeds the search for the ``±Omega`` line, and ``g = Omega/2``.

    Args:
        effective_deltas: Zeeman splittings (rad/s) of the spectra, e.g.
            after a Zeeman calibration; defaults to the scan axis.

    Raises:
        WindowError: the scan does not reach a resonance.
        PeakNotFoundError: the dressed-state line is not found.
    """
    deltas = scan.deltas if effective_deltas is None else np.asarray(effective_deltas, dtype=float)
    step = float(np.max(np.diff(deltas))) if len(deltas) > 1 else np.inf
    out, errs, used, guesses, used_sides = {}, {}, {}, {}, {}
    for mode, omega in (("x", omega_x), ("y", omega_y)):
        if indices is not None:
            k = indices[mode]
        else:
            k = int(np.argmin(np.abs(deltas - omega)))
            if abs(deltas[k] - omega) > max(step, 5 * KHZ):
                raise WindowError(f"scan does not reach the {mode} resonance at {omega / KHZ:.1f} kHz")
        sp = scan.spectrum(k)
        guess = None if guesses_khz is None else guesses_khz[mode]
        if guess is None:
            guess = _dressed_guess(sp, omega / KHZ, min_snr=min_snr)
        if guess is None or guess < 2 * sp.linewidth_khz:
            raise PeakNotFoundError(f"no split {mode} sideband near resonance")
        res = measure_splitting(sp, guess, search_khz, min_snr, None if sides is None else sides[mode])
        if res is None:
            raise PeakNotFoundError(f"dressed-state line of the {mode} mode not found near ±{guess:.1f} kHz")
        out[mode] = res[0] * KHZ / 2
        errs[mode] = res[1] * KHZ / 2
        used[mode] = k
        guesses[mode] = guess
        used_sides[mode] = res[2]
    return CouplingCalibration(
        g_x=out["x"],
        g_y=out["y"],
        g_x_err=errs["x"],
        g_y_err=errs["y"],
        indices=used,
        guesses_khz=guesses,
        sides=used_sides,
    )


# --------------------------------------------------------------------------
# Combined result and estimator


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated model parameters (rad/s, gauss) with 1σ uncertainties.

    Ratios are derived on access and never stored.
    """

    omega_x: float
    omega_y: float
    omega_z: float | None
    omega_x_err: float
    omega_y_err: float
    omega_z_err: float | None
    g_x: float
    g_y: float
    g_x_err: float
    g_y_err: float
    zeeman_scale: float | None = None
    zeeman_offset: float | None = None
    zeeman_scale_err: float | None = None
    zeeman_offset_err: float | None = None
    refine_iterations: int = 0
    refined: bool = False

    @property
    def g_over_omega_x(self):
        return self.g_x / self.omega_x

    @property
    def g_over_omega_y(self):
        return self.g_y / self.omega_y

    @property
    def Omega_x(self):
        return 2 * self.g_x

    @property
    def Omega_y(self):
        return 2 * self.g_y

    @property
    def Omega_over_omega_x(self):
        return self.Omega_x / self.omega_x

    @property
    def Omega_over_omega_y(self):
        return self.Omega_y / self.omega_y

    def ratio_errors(self):
        """1σ of ``g/omega`` for x and y by first-order propagation."""
        ex = self.g_over_omega_x * np.hypot(self.g_x_err / self.g_x, self.omega_x_err / self.omega_x)
        ey = self.g_over_omega_y * np.hypot(self.g_y_err / self.g_y, self.omega_y_err / self.omega_y)
        return float(ex), float(ey)

    def to_dict(self):
        """Plain-number summary in kHz (frequencies / 2pi) and gauss."""

        def k(v):
            return None if v is None else float(v) / KHZ

        ex, ey = self.ratio_errors()
        out = {
            "omega_x_khz": k(self.omega_x),
            "omega_x_err_khz": k(self.omega_x_err),
            "omega_y_khz": k(self.omega_y),
            "omega_y_err_khz": k(self.omega_y_err),
            "omega_z_khz": k(self.omega_z),
            "omega_z_err_khz": k(self.omega_z_err),
            "g_x_khz": k(self.g_x),
            "g_x_err_khz": k(self.g_x_err),
            "g_y_khz": k(self.g_y),
            "g_y_err_khz": k(self.g_y_err),
            "g_over_omega_x": self.g_over_omega_x,
            "g_over_omega_x_err": ex,
            "g_over_omega_y": self.g_over_omega_y,
            "g_over_omega_y_err": ey,
            "Omega_over_omega_x": self.Omega_over_omega_x,
            "Omega_over_omega_y": self.Omega_over_omega_y,
            "zeeman_scale_khz_per_gauss": k(self.zeeman_scale),
            "zeeman_scale_err_khz_per_gauss": k(self.zeeman_scale_err),
            "zeeman_offset_khz": k(self.zeeman_offset),
            "zeeman_offset_err_khz": k(self.zeeman_offset_err),
            "refined": self.refined,
            "refine_iterations": self.refine_iterations,
        }
        return {key: float(v) if isinstance(v, np.floating) else v for key, v in out.items()}


def _statistics(trap, zee, coup):
    """Measured statistics in kHz, in the order used for the correction loop."""
    s = {
        "omega_x": trap.omega_x / KHZ,
        "omega_y": trap.omega_y / KHZ,
        "Omega_x": 2 * coup.g_x / KHZ,
        "Omega_y": 2 * coup.g_y / KHZ,
    }
    if trap.omega_z is not None:
        s["omega_z"] = trap.omega_z / KHZ
    if zee is not None:
        s["scale"] = zee.scale / KHZ
        s["offset"] = zee.offset / KHZ
    return s


# finite-difference steps (kHz, kHz/G) for the correction Jacobian
_FD_STEP_KHZ = {
    "omega_x": 0.2,
    "omega_y": 0.2,
    "omega_z": 0.2,
    "Omega_x": 0.2,
    "Omega_y": 0.2,
    "scale": 1.0,
    "offset": 0.2,
}
# re-evaluate the Jacobian at the solution when it was taken farther away


def _measurement_covariance(keys, stages, model):
    """Covariance (kHz^2) of the measured statistics.

    With a fitted ``model`` the trap and Zeeman terms come from the scatter of
    data minus model, which leaves noise and drops the dressing curvature
    that a straight-line or constant fit would count as error.
    """
    trap, zee, coup = stages
    var = {
        "omega_x": (trap.omega_x_err / KHZ) ** 2,
        "omega_y": (trap.omega_y_err / KHZ) ** 2,
        "Omega_x": (2 * coup.g_x_err / KHZ) ** 2,
        "Omega_y": (2 * coup.g_y_err / KHZ) ** 2,
    }
    if trap.omega_z is not None:
        var["omega_z"] = (trap.omega_z_err / KHZ) ** 2
    cov = np.diag([var.get(k, 0.0) for k in keys])
    pos = {k: i for i, k in enumerate(keys)}
    if model is not None:
        m_trap, m_zee, _ = model
        for mode in trap.centers_khz:
            d = trap.centers_khz[mode]
            mc = m_trap.centers_khz.get(mode)
            if mc is not None and len(mc) == len(d) and len(d) > 1:
                cov[pos["omega_" + mode], pos["omega_" + mode]] = np.var(d - mc, ddof=1) / len(d)
    if zee is not None:
        if model is not None and model[1] is not None:
            common, i_d, i_m = np.intersect1d(zee.indices, model[1].indices, return_indices=True)
            resid = zee.centers_khz[i_d] - model[1].centers_khz[i_m]
            line = fit_line(zee.b0[i_d], resid) if common.size >= 3 else None
        else:
            line = fit_line(zee.b0, zee.centers_khz)
        block = [pos["scale"], pos["offset"]]
        if line is not None:
            cov[np.ix_(block, block)] = line.covariance
        else:
            cov[np.ix_(block, block)] = np.diag([(zee.scale_err / KHZ) ** 2, (zee.offset_err / KHZ) ** 2])
    return cov


class DickeCalibrator(BaseEstimator):
    """Three-stage calibration of a Delta scan with forward-model correction.

    ``fit(scan)`` runs trap, Zeeman (when ``zeeman=True``, the scan carries
    ``b0`` values and the spin line is found) and coupling stages, then, if
    ``refine``, corrects dressing-shift biases against noiseless spectra of
    the calibrated model. The emission, thermal and truncation settings
    describe that forward model. Results land in ``calibration_``; ``raw_``
    keeps the uncorrected estimates and ``covariance_`` (kHz units, ordered
    as ``covariance_keys_``) the propagated parameter covariance.
    """

    def __init__(
        self,
        trap_window_khz=(250.0, 330.0),
        zeeman_window_khz=(270.0, None),
        zeeman=True,
        crossing_margin_khz=40.0,
        refine=True,
        max_refine_iter=8,
        refine_tol_khz=2e-3,
        F=4.0,
        n_max=5,
        mean_n_x=0.5,
        mean_n_y=0.5,
        mean_n_z=0.5,
        eta_x=0.1,
        eta_y=0.15,
        eta_z=None,
        min_snr=3.0,
        zeeman_min_snr=5.0,
        n_jobs=1,
    ):
        self.trap_window_khz = trap_window_khz
        self.zeeman_window_khz = zeeman_window_khz
        self.zeeman = zeeman
        self.crossing_margin_khz = crossing_margin_khz
        self.refine = refine
        self.max_refine_iter = max_refine_iter
        self.refine_tol_khz = refine_tol_khz
        self.F = F
        self.n_max = n_max
        self.mean_n_x = mean_n_x
        self.mean_n_y = mean_n_y
        self.mean_n_z = mean_n_z
        self.eta_x = eta_x
        self.eta_y = eta_y
        self.eta_z = eta_z
        self.min_snr = min_snr
        self.zeeman_min_snr = zeeman_min_snr
        self.n_jobs = n_jobs

    def _measure(self, scan, frozen=None):
        frozen = frozen or {}
        trap = calibrate_traps(
            scan,
            self.trap_window_khz,
            n_modes=frozen.get("n_modes"),
            crossing_margin_khz=self.crossing_margin_khz,
            indices=frozen.get("trap_indices"),
        )
        zee = None
        want_zeeman = frozen.get("zeeman", self.zeeman and scan.b0 is not None)
        if want_zeeman:
            try:
                zee = calibrate_zeeman(
                    scan,
                    delta_window_khz=self.zeeman_window_khz,
                    min_snr=self.zeeman_min_snr,
                    indices=frozen.get("zeeman_indices"),
                )
            except CalibrationError:
                if "zeeman" in frozen:
                    raise
                zee = None
        eff = None if zee is None else zee.delta(scan_b0_values(scan))
        coup = fit_couplings(
            scan,
            trap.omega_x,
            trap.omega_y,
            effective_deltas=eff,
            min_snr=self.min_snr,
            indices=frozen.get("coupling_indices"),
            guesses_khz=frozen.get("guesses_khz"),
            sides=frozen.get("sides"),
        )
        return trap, zee, coup

    def _forward_scan(self, scan, theta, used):
        """Noiseless spectra of the model ``theta`` at the scan indices ``used``."""
        params = ModelParams(
            F=self.F,
            omega_x=theta["omega_x"] * KHZ,
            omega_y=theta["omega_y"] * KHZ,
            omega_z=theta.get("omega_z", 0.0) * KHZ,
            g_x=theta["Omega_x"] * KHZ / 2,
            g_y=theta["Omega_y"] * KHZ / 2,
            n_max=self.n_max,
        )
        thermal = ThermalState.for_params(
            params, mean_n_x=self.mean_n_x, mean_n_y=self.mean_n_y, mean_n_z=self.mean_n_z
        )
        emission = emission_operator(self.eta_x, self.eta_y, self.eta_z, F=self.F, n_max=self.n_max)
        if "scale" in theta:
            true_deltas = (theta["scale"] * scan_b0_values(scan) + theta["offset"]) * KHZ
        else:
            true_deltas = np.asarray(scan.deltas, dtype=float)
        include_carrier = scan.metadata.get("include_carrier", True)
        psd = np.zeros_like(scan.psd)

        def one(k):
            p = params.with_delta(max(true_deltas[k], 0.0))
            return synthesize(p, thermal, emission, scan.freq_khz, scan.linewidth_khz, include_carrier).psd

        used = sorted(used)
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                rows = list(pool.map(one, used))
        else:
            rows = [one(k) for k in used]
        for k, row in zip(used, rows):
            psd[k] = row
        return replace(scan, psd=psd)

    def fit(self, X, y=None):
        scan = X
        if not isinstance(scan, DeltaScan):
            raise ValidationError("DickeCalibrator.fit expects a DeltaScan")
        trap, zee, coup = self._measure(scan)
        self.raw_ = (trap, zee, coup)
        measured = _statistics(trap, zee, coup)
        theta = dict(measured)
        iterations = 0
        if self.refine:
            frozen = {
                "n_modes": 3 if trap.omega_z is not None else 2,
                "trap_indices": trap.indices,
                "zeeman": zee is not None,
                "zeeman_indices": None if zee is None else zee.indices,
                "coupling_indices": coup.indices,
                "guesses_khz": coup.guesses_khz,
                "sides": coup.sides,
            }
            used = set(trap.indices.tolist()) | set(coup.indices.values())
            if zee is not None:
                used |= set(zee.indices.tolist())
            keys = list(measured)
            m = np.array([measured[k] for k in keys])

            def forward(t):
                try:
                    stages = self._measure(self._forward_scan(scan, dict(zip(keys, t)), used), frozen)
                except (CalibrationError, ValidationError) as exc:
                    raise CalibrationError(f"forward-model correction failed: {exc}") from exc
                stats = _statistics(*stages)
                return np.array([stats[k] for k in keys]), stages

            def jacobian(t, pred):
                jac = np.eye(len(keys))
                for j, key in enumerate(keys):
                    if key == "omega_z":
                        continue  # only shifts the closed-form axial sidebands
                    h = _FD_STEP_KHZ[key]
                    shifted = t.copy()
                    shifted[j] += h
                    jac[:, j] = (forward(shifted)[0] - pred) / h
                return jac

            t = m.copy()
            pred, model = forward(t)
            jac, t_jac = np.eye(len(keys)), None
            converged = False
            for iterations in range(1, self.max_refine_iter + 1):
                step = np.linalg.solve(jac, m - pred)
                t = t + step
                new_pred, model = forward(t)
                # Broyden update keeps the slope current between full evaluations
                jac += np.outer(new_pred - pred - jac @ step, step) / (step @ step)
                pred = new_pred
                if np.max(np.abs(m - pred)) < self.refine_tol_khz:
                    converged = True
                    break
            if not converged:
                raise CalibrationError(
                    f"forward-model correction did not converge in {self.max_refine_iter} iterations"
                )
            # the response is nonlinear over the raw bias; propagate with the local slope
            jac = jacobian(t, pred)
            theta = dict(zip(keys, t))
            self.jacobian_ = jac
            jinv = np.linalg.inv(jac)
            cov = jinv @ _measurement_covariance(keys, (trap, zee, coup), model) @ jinv.T
        else:
            keys = list(measured)
            cov = _measurement_covariance(keys, (trap, zee, coup), None)
        err = dict(zip(keys, np.sqrt(np.clip(np.diag(cov), 0.0, None))))
        self.n_iter_ = iterations
        self.covariance_ = cov
        self.covariance_keys_ = tuple(keys)
        self.calibration_ = CalibrationResult(
            omega_x=theta["omega_x"] * KHZ,
            omega_y=theta["omega_y"] * KHZ,
            omega_z=theta["omega_z"] * KHZ if "omega_z" in theta else None,
            omega_x_err=err["omega_x"] * KHZ,
            omega_y_err=err["omega_y"] * KHZ,
            omega_z_err=err["omega_z"] * KHZ if "omega_z" in err else None,
            g_x=theta["Omega_x"] * KHZ / 2,
            g_y=theta["Omega_y"] * KHZ / 2,
            g_x_err=err["Omega_x"] * KHZ / 2,
            g_y_err=err["Omega_y"] * KHZ / 2,
            zeeman_scale=theta["scale"] * KHZ if "scale" in theta else None,
            zeeman_offset=theta["offset"] * KHZ if "offset" in theta else None,
            zeeman_scale_err=err["scale"] * KHZ if "scale" in err else None,
            zeeman_offset_err=err["offset"] * KHZ if "offset" in err else None,
            refine_iterations=iterations,
            refined=bool(self.refine),
        )
        return self

    def predict(self, X):
        """Transition frequencies (kHz) from the ground state to the three
        coupled levels of the four-level model, one row per Delta (kHz)."""
        check_is_fitted(self, "calibration_")
        cal = self.calibration_
        rows = []
        for d in np.asarray(X, dtype=float).ravel():
            sp = SimplifiedParams(d * KHZ, cal.omega_x, cal.omega_y, 2 * abs(cal.g_x), 2 * abs(cal.g_y))
            rows.append(np.linalg.eigvalsh(build_simplified(sp)[1:, 1:]) / KHZ)
        return np.asarray(rows)
