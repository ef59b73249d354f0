"""Weighted straight-line fits, used for the coupling-versus-power slope and
the Zeeman calibration line."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import ValidationError


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    covariance: np.ndarray
    chi2: float
    dof: int


def fit_line(x, y, sigma=None, absolute_sigma=None):
    """Weighted linear least squares ``y = slope * x + intercept``.

    With ``sigma`` given, the covariance uses those uncertainties as absolute
    (``absolute_sigma`` defaults to True). Otherwise it is scaled by
    ``chi2 / dof``; with exactly two points ``dof = 0`` and the uncertainties
    are reported as infinite rather than divided by zero.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValidationError("x and y must have the same length")
    if x.size < 2:
        raise ValidationError("a line fit needs at least two points")
    if sigma is None:
        w = np.ones_like(x)
        if absolute_sigma is None:
            absolute_sigma = False
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ValidationError("sigma must be finite and > 0")
        w = 1.0 / sigma**2
        if absolute_sigma is None:
            absolute_sigma = True

    S = w.sum()
    Sx = (w * x).sum()
    xm = Sx / S
    Sxx = (w * (x - xm) ** 2).sum()
    if np.ptp(x) == 0:
        raise ValidationError("degenerate abscissae: all x values coincide")
    slope = float((w * (x - xm) * y).sum() / Sxx)
    intercept = float((w * y).sum() / S - slope * xm)

    var_slope = 1.0 / Sxx
    var_int = 1.0 / S + xm**2 / Sxx
    cov_si = -xm / Sxx
    cov = np.array([[var_slope, cov_si], [cov_si, var_int]])
    resid = y - (slope * x + intercept)
    chi2 = float((w * resid**2).sum())
    dof = x.size - 2
    if not absolute_sigma:
        cov = cov * (chi2 / dof) if dof > 0 else np.full((2, 2), np.inf)
    return LineFit(
        slope=slope,
        intercept=intercept,
        slope_err=float(np.sqrt(cov[0, 0])),
        intercept_err=float(np.sqrt(cov[1, 1])),
        covariance=cov,
        chi2=chi2,
        dof=dof,
    )


class LinearTuningFit(RegressorMixin, BaseEstimator):
    """Linear dependence of the Rabi splitting on tune-out laser power.

    ``fit(P_uw, Omega_khz, sigma=...)`` drops points above ``max_power_uw``
    (the splitting approaches the carrier there) and stores ``slope_``
    (kHz/µW), ``intercept_`` (kHz) and their 1σ errors.
    """

    def __init__(self, max_power_uw=None, absolute_sigma=True):
        self.max_power_uw = max_power_uw
        self.absolute_sigma = absolute_sigma

    def fit(self, X, y, sigma=None):
        P = np.asarray(X, dtype=float).ravel()
        Om = np.asarray(y, dtype=float).ravel()
        if P.shape != Om.shape:
            raise ValidationError("X and y must have the same length")
        keep = np.ones(P.shape, dtype=bool) if self.max_power_uw is None else P <= self.max_power_uw
        s = None if sigma is None else np.broadcast_to(np.asarray(sigma, dtype=float), P.shape)[keep]
        self.line_ = fit_line(P[keep], Om[keep], s, absolute_sigma=self.absolute_sigma if s is not None else None)
        self.n_used_ = int(keep.sum())
        self.slope_ = self.line_.slope
        self.intercept_ = self.line_.intercept
        self.slope_err_ = self.line_.slope_err
        self.intercept_err_ = self.line_.intercept_err
        return self

    def predict(self, X):
        check_is_fitted(self, "line_")
        return self.slope_ * np.asarray(X, dtype=float).ravel() + self.intercept_


def synthetic_tuneout(powers_uw, slope_khz_per_uw=-0.120, intercept_khz=35.0, noise_khz=0.3, seed=0):
    """Noisy splitting-versus-power points on a straight line."""
    P = np.asarray(powers_uw, dtype=float).ravel()
    rng = np.random.default_rng(np.uint64(seed))
    Om = intercept_khz + slope_khz_per_uw * P + noise_khz * rng.standard_normal(P.shape)
    sigma = np.full(P.shape, float(noise_khz)) if noise_khz > 0 else None
    return P, Om, sigma
