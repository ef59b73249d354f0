"""Peak detection and least-squares fitting of Gaussian sums."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize, signal
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import ValidationError, check_grid, check_positive
from ..spectra import Spectrum

FTOL = 1e-10
XTOL = 1e-12
GTOL = 1e-15
MAX_NFEV = 2000


@dataclass(frozen=True)
class Peak:
    center_khz: float
    height: float
    width_khz: float
    center_err_khz: float


@dataclass(frozen=True)
class FitResult:
    """Outcome of a Gaussian-sum fit.

    ``params`` is laid out ``[c1, h1, w1, c2, h2, w2, ...]`` (kHz, PSD units,
    kHz). ``errors`` holds 1σ uncertainties from the residual-scaled
    Gauss-Newton covariance and is NaN when the fit did not converge.
    """

    params: np.ndarray
    errors: np.ndarray
    residual_norm: float
    converged: bool
    n_iter: int
    covariance: np.ndarray | None = None

    @property
    def centers(self):
        return self.params[0::3]

    @property
    def heights(self):
        return self.params[1::3]

    @property
    def widths(self):
        return np.abs(self.params[2::3])

    @property
    def center_errors(self):
        return self.errors[0::3]

    def peaks(self):
        return [
            Peak(float(c), float(h), float(w), float(e))
            for c, h, w, e in zip(self.centers, self.heights, self.widths, self.center_errors)
        ]


def gaussian_sum(freq, params):
    p = np.asarray(params, dtype=float).reshape(-1, 3)
    f = np.asarray(freq, dtype=float)
    out = np.zeros_like(f)
    for c, h, w in p:
        out += h * np.exp(-0.5 * ((f - c) / w) ** 2)
    return out


def _jacobian(freq, params):
    p = np.asarray(params, dtype=float).reshape(-1, 3)
    J = np.empty((freq.size, p.size))
    for k, (c, h, w) in enumerate(p):
        u = (freq - c) / w
        g = np.exp(-0.5 * u**2)
        J[:, 3 * k] = h * g * u / w
        J[:, 3 * k + 1] = g
        J[:, 3 * k + 2] = h * g * u**2 / w
    return J


def _as_arrays(spectrum, psd=None):
    if isinstance(spectrum, Spectrum):
        return spectrum.freq_khz, np.asarray(spectrum.psd, dtype=float), spectrum.linewidth_khz
    freq = check_grid(spectrum, "freq")
    psd = np.asarray(psd, dtype=float)
    if psd.shape != freq.shape:
        raise ValidationError("psd must have the same shape as freq")
    return freq, psd, None


def fit_gaussians(spectrum, initial, psd=None):
    """Least-squares fit of a sum of Gaussians.

    Args:
        spectrum: a :class:`Spectrum`, or the frequency grid when ``psd`` is given.
        initial: sequence of :class:`Peak` or ``(center, height, width)`` triples.
        psd: PSD samples when ``spectrum`` is a bare grid.

    Returns:
        FitResult. A fit that fails to converge is returned with
        ``converged=False`` and NaN uncertainties.
    """
    freq, y, _ = _as_arrays(spectrum, psd)
    p0 = []
    for pk in initial:
        if isinstance(pk, Peak):
            p0.extend([pk.center_khz, pk.height, pk.width_khz])
        else:
            p0.extend(float(v) for v in pk)
    if not p0:
        raise ValidationError("fit_gaussians needs at least one initial peak")
    p0 = np.asarray(p0, dtype=float)

    res = optimize.least_squares(
        lambda p: gaussian_sum(freq, p) - y,
        p0,
        jac=lambda p: _jacobian(freq, p),
        method="lm",
        ftol=FTOL,
        xtol=XTOL,
        gtol=GTOL,
        max_nfev=MAX_NFEV,
    )
    params = res.x.copy()
    params[2::3] = np.abs(params[2::3])
    rss = float(np.sum(res.fun**2))
    dof = freq.size - params.size
    converged = bool(res.status > 0) and np.all(np.isfinite(params))
    errors = np.full(params.size, np.nan)
    cov = None
    if converged and dof > 0:
        J = _jacobian(freq, params)
        _, s, VT = np.linalg.svd(J, full_matrices=False)
        keep = (s > s[0] * np.finfo(float).eps * max(J.shape)) & (s**2 > 0)
        with np.errstate(over="ignore", invalid="ignore"):
            cov = (VT[keep].T / s[keep] ** 2) @ VT[keep] * (rss / dof)
        if np.all(np.isfinite(cov)):
            errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        else:
            cov = None
    return FitResult(
        params=params,
        errors=errors,
        residual_norm=float(np.sqrt(rss)),
        converged=converged,
        n_iter=int(res.nfev),
        covariance=cov,
    )


def noise_level(psd):
    """Robust estimate of white noise on a smooth PSD from its first differences."""
    d = np.diff(np.asarray(psd, dtype=float))
    if d.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(d - np.median(d))) / np.sqrt(2))


def matched_filter(psd, step_khz, linewidth_khz):
    """PSD smoothed with a unit-area Gaussian of the line width, and the
    factor by which white noise is reduced."""
    sigma_pts = linewidth_khz / step_khz
    smoothed = ndimage.gaussian_filter1d(np.asarray(psd, dtype=float), sigma_pts, mode="nearest")
    return smoothed, float(np.sqrt(1.0 / (2.0 * np.sqrt(np.pi) * sigma_pts)))


def _refine(freq, psd, index, width_guess, half_window):
    c0 = freq[index]
    sel = (freq >= c0 - half_window) & (freq <= c0 + half_window)
    if np.count_nonzero(sel) < 4:
        return None
    fit = fit_gaussians(freq[sel], [(c0, psd[index], width_guess)], psd=psd[sel])
    c, h, w = fit.params
    if not fit.converged or h <= 0 or not (freq[0] <= c <= freq[-1]) or abs(c - c0) > half_window:
        return None
    if not 0.3 * width_guess <= abs(w) <= 4.0 * width_guess:
        return None
    return Peak(float(c), float(h), float(abs(w)), float(fit.errors[0]))


def find_peaks(spectrum, min_height_fraction=0.05, min_separation_khz=3.0, psd=None, linewidth_khz=None, smooth=False):
    """Local maxima above ``min_height_fraction * max(psd)``, at least
    ``min_separation_khz`` apart, each refined by a local single-Gaussian fit
    over ``±2.5`` linewidths.

    With ``smooth`` the maxima are searched in the matched-filtered PSD, which
    suppresses single-sample noise spikes. Peaks whose refinement fails (or
    whose fitted width is implausible) keep their grid position with NaN
    uncertainty. The list is sorted by center.
    """
    if not 0 < min_height_fraction <= 1:
        raise ValidationError("min_height_fraction must lie in (0, 1]")
    check_positive(min_separation_khz, "min_separation_khz")
    freq, y, width = _as_arrays(spectrum, psd)
    width = linewidth_khz or width or 2.0
    if y.size < 3 or np.max(y) <= 0:
        return []
    step = float(np.mean(np.diff(freq)))
    ys = matched_filter(y, step, width)[0] if smooth else y
    distance = max(1, int(np.floor(min_separation_khz / step)))
    idx, _ = signal.find_peaks(ys, height=min_height_fraction * np.max(ys), distance=distance)
    peaks = []
    for i in idx:
        pk = _refine(freq, y, i, width, 2.5 * width)
        if pk is None:
            pk = Peak(float(freq[i]), float(y[i]), float(width), float("nan"))
        peaks.append(pk)
    return sorted(peaks, key=lambda p: p.center_khz)


def locate_peak(spectrum, lo_khz, hi_khz, min_snr=3.0, psd=None, linewidth_khz=None, noise=None):
    """Strongest feature inside ``[lo_khz, hi_khz]``, refined by a Gaussian fit.

    The feature is picked in the matched-filtered PSD and must exceed
    ``min_snr`` times the filtered noise. Returns None when the window is
    empty, the feature is not significant, or the refinement fails.
    """
    freq, y, width = _as_arrays(spectrum, psd)
    width = linewidth_khz or width or 2.0
    sel = np.flatnonzero((freq >= lo_khz) & (freq <= hi_khz))
    if sel.size < 3:
        return None
    step = float(np.mean(np.diff(freq)))
    ys, gain = matched_filter(y, step, width)
    i = sel[np.argmax(ys[sel])]
    if i in (0, freq.size - 1):
        return None
    sigma = noise_level(y) if noise is None else noise
    if ys[i] <= 0 or ys[i] <= min_snr * sigma * gain:
        return None
    pk = _refine(freq, y, i, width, 2.5 * width)
    if pk is None or not np.isfinite(pk.center_err_khz) or abs(pk.center_khz - freq[i]) > width:
        return None
    if not (lo_khz - width <= pk.center_khz <= hi_khz + width):
        return None
    return pk


class GaussianPeakFitter(RegressorMixin, BaseEstimator):
    """Detect peaks in a 1D spectrum and fit them jointly as a Gaussian sum.

    ``fit(freq, psd)`` stores ``centers_``, ``heights_``, ``widths_`` and
    ``center_errors_``; ``predict(freq)`` evaluates the fitted profile.
    """

    def __init__(self, min_height_fraction=0.05, min_separation_khz=3.0, linewidth_khz=2.0, initial_centers=None):
        self.min_height_fraction = min_height_fraction
        self.min_separation_khz = min_separation_khz
        self.linewidth_khz = linewidth_khz
        self.initial_centers = initial_centers

    def fit(self, X, y):
        freq = check_grid(np.ravel(X), "X")
        psd = np.asarray(y, dtype=float).ravel()
        if self.initial_centers is None:
            initial = find_peaks(
                freq,
                self.min_height_fraction,
                self.min_separation_khz,
                psd=psd,
                linewidth_khz=self.linewidth_khz,
            )
        else:
            initial = [
                (c, float(np.interp(c, freq, psd)), self.linewidth_khz) for c in self.initial_centers
            ]
        if not initial:
            raise ValidationError("no peaks above threshold")
        self.result_ = fit_gaussians(freq, initial, psd=psd)
        self.centers_ = self.result_.centers
        self.heights_ = self.result_.heights
        self.widths_ = self.result_.widths
        self.center_errors_ = self.result_.center_errors
        self.converged_ = self.result_.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return gaussian_sum(np.ravel(X), self.result_.params)
