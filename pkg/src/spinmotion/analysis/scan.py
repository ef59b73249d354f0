"""Spectra as a function of the Zeeman splitting, and seeded synthetic noise."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .._validation import ValidationError, check_grid
from ..model import CESIUM, KHZ, ModelParams, reference_params
from ..spectra import Spectrum, ThermalState, emission_operator, frequency_grid, synthesize


@dataclass(frozen=True)
class DeltaScan:
    """Spectra on a shared grid for ascending Zeeman splittings.

    ``deltas`` is the scan axis in rad/s. When the scan was generated with a
    Zeeman offset, the spectra were computed at ``deltas + offset`` while the
    axis keeps the nominal values (``metadata['zeeman_offset']``). ``b0`` holds
    the offset field in gauss when known.
    """

    deltas: np.ndarray
    freq_khz: np.ndarray
    psd: np.ndarray
    linewidth_khz: float
    params: ModelParams | None = None
    b0: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float)
        if deltas.ndim != 1 or deltas.size == 0:
            raise ValidationError("a scan needs at least one Delta value")
        if np.any(np.diff(deltas) <= 0):
            raise ValidationError("scan deltas must be strictly ascending")
        psd = np.asarray(self.psd, dtype=float)
        if psd.shape != (deltas.size, np.size(self.freq_khz)):
            raise ValidationError(f"psd shape {psd.shape} does not match {deltas.size} x {np.size(self.freq_khz)}")
        if self.b0 is not None and np.shape(self.b0) != deltas.shape:
            raise ValidationError("b0 must align with deltas")

    def __len__(self):
        return len(self.deltas)

    @property
    def deltas_khz(self):
        return np.asarray(self.deltas) / KHZ

    def spectrum(self, k):
        return Spectrum(freq_khz=self.freq_khz, psd=self.psd[k], linewidth_khz=self.linewidth_khz)

    def subset(self, indices):
        indices = np.asarray(indices)
        return replace(
            self,
            deltas=np.asarray(self.deltas)[indices],
            psd=self.psd[indices],
            b0=None if self.b0 is None else np.asarray(self.b0)[indices],
        )


def scan_delta(
    params,
    deltas,
    thermal=None,
    emission=None,
    grid_khz=None,
    linewidth_khz=2.0,
    include_carrier=True,
    zeeman_offset=0.0,
    b0=None,
    n_jobs=1,
):
    """Synthesize a spectrum for every Zeeman splitting in ``deltas`` (rad/s).

    Deltas are sorted; duplicates are rejected. Each point is independent, and
    threaded execution returns exactly the sequential result.
    """
    deltas = np.asarray(deltas, dtype=float).ravel()
    if deltas.size == 0:
        raise ValidationError("delta list is empty")
    order = np.argsort(deltas, kind="stable")
    deltas = deltas[order]
    if np.any(np.diff(deltas) == 0):
        raise ValidationError("delta list contains duplicates")
    if b0 is not None:
        b0 = np.asarray(b0, dtype=float).ravel()[order]
    if thermal is None:
        thermal = ThermalState.for_params(params)
    if emission is None:
        emission = emission_operator(0.0, 0.0, F=params.F, n_max=params.n_max)
    grid = check_grid(np.arange(-400.0, 400.0 + 1e-9, 0.5) if grid_khz is None else grid_khz, "grid_khz")

    def one(delta):
        p = params.with_delta(delta + zeeman_offset)
        return synthesize(p, thermal, emission, grid, linewidth_khz, include_carrier).psd

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(one, deltas))
    else:
        rows = [one(d) for d in deltas]
    return DeltaScan(
        deltas=deltas,
        freq_khz=grid,
        psd=np.vstack(rows),
        linewidth_khz=float(linewidth_khz),
        params=params,
        b0=b0,
        metadata={"zeeman_offset": float(zeeman_offset), "include_carrier": bool(include_carrier)},
    )


def scan_b0(params, b0_gauss, consts=CESIUM, zeeman_offset=0.0, **kwargs):
    """Scan over offset fields: nominal axis ``g_F mu_B B_0 / hbar``, spectra
    computed at the nominal splitting plus ``zeeman_offset`` (rad/s)."""
    b0 = np.asarray(b0_gauss, dtype=float).ravel()
    if np.any(b0 < 0):
        raise ValidationError("B_0 must be >= 0")
    return scan_delta(params, consts.zeeman_rate * b0, b0=b0, zeeman_offset=zeeman_offset, **kwargs)


def add_noise(scan, fraction, seed):
    """Additive white Gaussian noise with standard deviation ``fraction`` times
    each spectrum's maximum. ``seed`` is recorded in the scan metadata."""
    if fraction < 0:
        raise ValidationError("noise fraction must be >= 0")
    rng = np.random.default_rng(np.uint64(seed))
    scale = fraction * np.max(scan.psd, axis=1, keepdims=True)
    noisy = scan.psd + scale * rng.standard_normal(scan.psd.shape)
    meta = dict(scan.metadata, noise_fraction=float(fraction), seed=int(seed))
    return replace(scan, psd=noisy, metadata=meta)


class SpectrumSynthesizer(TransformerMixin, BaseEstimator):
    """Maps Zeeman splittings (kHz) to rendered fluorescence spectra.

    ``transform(deltas_khz)`` returns an array of shape ``(n_deltas, n_grid)``;
    the grid is exposed as ``freq_khz_`` after ``fit``.
    """

    def __init__(
        self,
        params=None,
        mean_n_x=0.5,
        mean_n_y=0.5,
        mean_n_z=0.5,
        eta_x=0.1,
        eta_y=0.15,
        eta_z=None,
        f_min_khz=-400.0,
        f_max_khz=400.0,
        step_khz=0.5,
        linewidth_khz=2.0,
        include_carrier=True,
        n_jobs=1,
    ):
        self.params = params
        self.mean_n_x = mean_n_x
        self.mean_n_y = mean_n_y
        self.mean_n_z = mean_n_z
        self.eta_x = eta_x
        self.eta_y = eta_y
        self.eta_z = eta_z
        self.f_min_khz = f_min_khz
        self.f_max_khz = f_max_khz
        self.step_khz = step_khz
        self.linewidth_khz = linewidth_khz
        self.include_carrier = include_carrier
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.params_ = self.params if self.params is not None else reference_params()
        self.freq_khz_ = frequency_grid(self.f_min_khz, self.f_max_khz, self.step_khz)
        self.thermal_ = ThermalState.for_params(
            self.params_, mean_n_x=self.mean_n_x, mean_n_y=self.mean_n_y, mean_n_z=self.mean_n_z
        )
        self.emission_ = emission_operator(
            self.eta_x, self.eta_y, self.eta_z, F=self.params_.F, n_max=self.params_.n_max
        )
        return self

    def transform(self, X):
        if not hasattr(self, "freq_khz_"):
            self.fit()
        deltas_khz = np.asarray(X, dtype=float).ravel()
        scan = scan_delta(
            self.params_,
            deltas_khz * KHZ,
            self.thermal_,
            self.emission_,
            self.freq_khz_,
            self.linewidth_khz,
            self.include_carrier,
            n_jobs=self.n_jobs,
        )
        # scan_delta sorts; restore the caller's order
        order = np.argsort(np.argsort(deltas_khz, kind="stable"), kind="stable")
        return scan.psd[order]
