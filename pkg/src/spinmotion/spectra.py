"""Fluorescence spectrum synthesis from an eigensystem of the two-mode model.

Frequency axis convention: a transition from eigenstate ``i`` to eigenstate
``j`` appears at ``omega_S - omega_I = E_j - E_i``. Transitions that leave
energy in the atom (blue sidebands, the ``|g> -> |e>`` spin line at ``+Delta``)
land at positive frequency, and for a cold atom the negative-frequency
sidebands are the weaker ones.

The axial mode ``z`` is uncoupled, so its sidebands are handled in closed
form: they are copies of the spin-only spectrum shifted by ``±omega_z`` and
weighted by the axial thermal factors. :meth:`EmissionOperator.full_matrix`
builds the literal operator with the ``z`` factor appended for checking.
"""

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import NamedTuple

import numpy as np

from ._validation import ValidationError, check_grid, check_half_integer, check_nonnegative, check_positive
from .model import KHZ, ModelParams, build_two_mode
from .qops import EigenSystem, eigh, mode_operators, spin_operators, tensor

ETA_WARN = 0.3


def thermal_populations(mean_n, n_max):
    """Geometric occupation ``p_n ∝ q^n``, ``q = mean_n / (1 + mean_n)``,
    renormalized over ``n < n_max``."""
    mean_n = check_nonnegative(mean_n, "mean_n")
    if int(n_max) != n_max or n_max < 1:
        raise ValidationError(f"n_max must be a positive integer, got {n_max!r}")
    q = mean_n / (1.0 + mean_n)
    p = q ** np.arange(int(n_max), dtype=float)
    p[0] = 1.0
    return p / p.sum()


def thermal_ladder_weights(mean_n, n_max):
    """Return ``(sum_n p_n (n+1), sum_n p_n n)`` on the truncated ladder: the
    total weights of one-phonon absorption and emission by ``a†`` and ``a``."""
    p = thermal_populations(mean_n, n_max)
    n = np.arange(len(p))
    up = float(np.sum(p[:-1] * (n[:-1] + 1)))
    down = float(np.sum(p * n))
    return up, down


@dataclass(frozen=True)
class ThermalState:
    """Initial state: thermal motion in each mode times a spin distribution.

    ``spin_population`` is indexed ``m = -F..F``; ``None`` means all atoms in
    ``m = -F``.
    """

    F: float = 4.0
    n_max: int = 5
    mean_n_x: float = 0.5
    mean_n_y: float = 0.5
    mean_n_z: float = 0.0
    spin_population: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "F", check_half_integer(self.F))
        for name in ("mean_n_x", "mean_n_y", "mean_n_z"):
            check_nonnegative(getattr(self, name), name)
        dim = int(round(2 * self.F)) + 1
        if self.spin_population is not None:
            sp = np.asarray(self.spin_population, dtype=float)
            if sp.shape != (dim,) or np.any(sp < 0) or sp.sum() <= 0:
                raise ValidationError("spin_population must be a nonnegative vector of length 2F+1")
            object.__setattr__(self, "spin_population", tuple(sp / sp.sum()))

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(F=params.F, n_max=params.n_max, **kwargs)

    @property
    def spin(self):
        dim = int(round(2 * self.F)) + 1
        if self.spin_population is None:
            sp = np.zeros(dim)
            sp[0] = 1.0
            return sp
        return np.asarray(self.spin_population)

    @property
    def populations(self):
        """Bare-state populations on ``mode_x ⊗ mode_y ⊗ spin``."""
        px = thermal_populations(self.mean_n_x, self.n_max)
        py = thermal_populations(self.mean_n_y, self.n_max)
        return np.kron(np.kron(px, py), self.spin)


def clebsch_gordan(j1, m1, j2, m2, J, M):
    """``<J M | j1 m1; j2 m2>`` (Condon-Shortley phases) from the Racah formula."""
    j1, m1, j2, m2, J, M = (Fraction(x).limit_denominator(4) for x in (j1, m1, j2, m2, J, M))
    if m1 + m2 != M:
        return 0.0
    if not (abs(j1 - j2) <= J <= j1 + j2):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    for total in (j1 + j2 + J, j1 + m1, j2 + m2, J + M):
        if total.denominator != 1:
            return 0.0

    def f(x):
        return factorial(int(x))

    pref = Fraction(
        int(2 * J + 1) * f(J + j1 - j2) * f(J - j1 + j2) * f(j1 + j2 - J),
        f(j1 + j2 + J + 1),
    )
    pref *= f(J + M) * f(J - M) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    total = Fraction(0)
    k = 0
    while True:
        args = (
            k,
            j1 + j2 - J - k,
            j1 - m1 - k,
            j2 + m2 - k,
            J - j2 + m1 + k,
            J - j1 - m2 + k,
        )
        if args[1] < 0 or args[2] < 0 or args[3] < 0:
            break
        if args[4] >= 0 and args[5] >= 0:
            den = 1
            for a in args:
                den *= f(a)
            total += Fraction((-1) ** k, den)
        k += 1
    return float(np.sqrt(float(pref)) * float(total))


def sigma_minus(F, F_excited=None):
    """Generalized lowering operator for sigma- emission on ``F -> F+1``.

    ``S- = sum_m c_m |F, m-1><F, m|`` with ``c_m = <F+1, m-1 | F, m; 1, -1>``.
    The ``m = -F`` column is zero because ``m = -F-1`` lies outside the manifold.
    """
    F = check_half_integer(F)
    if F_excited is None:
        F_excited = F + 1
    if abs(float(F_excited) - (F + 1)) > 1e-12:
        raise ValidationError(f"only the cycling transition F -> F+1 is supported, got F'={F_excited!r}")
    dim = int(round(2 * F)) + 1
    m = -F + np.arange(dim)
    S = np.zeros((dim, dim))
    for k in range(1, dim):
        S[k - 1, k] = clebsch_gordan(F, m[k], 1, -1, F_excited, m[k] - 1)
    return S


@dataclass(frozen=True)
class EmissionOperator:
    """``V = (1 + eta_x X_x + eta_y X_y) ⊗ S- S-†`` on ``mode_x ⊗ mode_y ⊗ spin``,
    with ``X_i = a_i + a_i†``. ``eta_z`` enters through the closed-form axial
    sidebands in :func:`transitions`."""

    eta_x: float
    eta_y: float
    eta_z: float | None
    spin_part: np.ndarray
    n_max: int
    matrix: np.ndarray = field(repr=False)

    @property
    def spin_only(self):
        """``I ⊗ I ⊗ S- S-†``, the operator that multiplies ``eta_z X_z``."""
        return tensor(np.eye(self.n_max), np.eye(self.n_max), self.spin_part)

    def full_matrix(self):
        """Literal operator on ``mode_x ⊗ mode_y ⊗ spin ⊗ mode_z``."""
        osc = mode_operators(self.n_max)
        Iz = osc.identity
        V = tensor(self.matrix, Iz)
        if self.eta_z:
            V = V + self.eta_z * tensor(self.spin_only, osc.a + osc.adag)
        return V


def emission_operator(eta_x, eta_y, eta_z=None, F=4.0, n_max=5):
    """Lamb-Dicke emission operator for the two-mode model."""
    eta_x = check_nonnegative(eta_x, "eta_x")
    eta_y = check_nonnegative(eta_y, "eta_y")
    if eta_z is not None:
        eta_z = check_nonnegative(eta_z, "eta_z")
    for name, eta in (("eta_x", eta_x), ("eta_y", eta_y), ("eta_z", eta_z)):
        if eta is not None and eta > ETA_WARN:
            warnings.warn(f"{name}={eta} is outside the Lamb-Dicke regime", stacklevel=2)
    S = sigma_minus(F)
    spin_part = S @ S.T
    osc = mode_operators(n_max)
    Im = osc.identity
    X = osc.a + osc.adag
    motional = tensor(Im, Im) + eta_x * tensor(X, Im) + eta_y * tensor(Im, X)
    return EmissionOperator(
        eta_x=eta_x,
        eta_y=eta_y,
        eta_z=eta_z,
        spin_part=spin_part,
        n_max=int(n_max),
        matrix=tensor(motional, spin_part),
    )


@dataclass(frozen=True)
class TransitionTable:
    """Flat arrays of transitions ``initial -> final`` between eigenstates.

    ``omega`` is ``E_final - E_initial`` (plus ``±omega_z`` for axial
    sidebands, flagged by ``z_change``); ``amplitude`` is
    ``p_initial |<final|V|initial>|^2``.
    """

    omega: np.ndarray
    amplitude: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    z_change: np.ndarray
    initial_label: np.ndarray
    final_label: np.ndarray

    def __len__(self):
        return self.omega.shape[0]

    @property
    def freq_khz(self):
        return self.omega / KHZ

    def without_carrier(self, rtol=None):
        """Drop elastic lines (zero frequency, which includes every ``i = j`` term)."""
        rtol = _CARRIER_RTOL if rtol is None else rtol
        scale = max(float(np.max(np.abs(self.omega), initial=0.0)), 1.0)
        keep = np.abs(self.omega) > rtol * scale
        return self.select(keep)

    def select(self, mask):
        return TransitionTable(*(getattr(self, name)[mask] for name in _TABLE_FIELDS))


_CARRIER_RTOL = 1e-9
_TABLE_FIELDS = ("omega", "amplitude", "initial", "final", "z_change", "initial_label", "final_label")


def eigenstate_populations(es, thermal):
    """``p_i = sum_bare p_bare |<i|bare>|^2``."""
    p_bare = thermal.populations
    if p_bare.shape[0] != len(es):
        raise ValidationError(
            f"thermal state has {p_bare.shape[0]} bare states, eigensystem has {len(es)}"
        )
    return es.overlaps().T @ p_bare


def _line_blocks(es, thermal, V, omega_z):
    """``(omega, amplitude, z_change)`` blocks as ``[final, initial]`` matrices."""
    D = len(es)
    if V.matrix.shape != (D, D):
        raise ValidationError(f"emission operator has shape {V.matrix.shape}, eigensystem has dimension {D}")
    p = eigenstate_populations(es, thermal)
    U = es.states
    E = es.energies
    elements = U.conj().T @ V.matrix @ U  # [final, initial]
    omega = E[:, None] - E[None, :]
    blocks = [(omega, np.abs(elements) ** 2 * p[None, :], 0)]
    if V.eta_z:
        up, down = thermal_ladder_weights(thermal.mean_n_z, V.n_max)
        spin_elements = U.conj().T @ V.spin_only @ U
        base = np.abs(spin_elements) ** 2 * p[None, :] * V.eta_z**2
        for sign, weight in ((+1, up), (-1, down)):
            blocks.append((omega + sign * omega_z, base * weight, sign))
    return blocks


def _carrier_mask(omega):
    scale = max(float(np.max(np.abs(omega), initial=0.0)), 1.0)
    return np.abs(omega) > _CARRIER_RTOL * scale


def transitions(es, thermal, V, omega_z=0.0, include_carrier=True):
    """All ordered eigenstate pairs with their frequencies and weights."""
    D = len(es)
    blocks = _line_blocks(es, thermal, V, omega_z)
    final, initial = np.meshgrid(np.arange(D), np.arange(D), indexing="ij")
    cols = [
        np.concatenate([om.ravel() for om, _, _ in blocks]),
        np.concatenate([amp.ravel() for _, amp, _ in blocks]),
        np.tile(initial.ravel(), len(blocks)),
        np.tile(final.ravel(), len(blocks)),
        np.repeat([sign for _, _, sign in blocks], D * D),
    ]
    if not include_carrier:
        keep = _carrier_mask(cols[0])
        cols = [c[keep] for c in cols]
    return TransitionTable(
        omega=cols[0],
        amplitude=cols[1],
        initial=cols[2],
        final=cols[3],
        z_change=cols[4],
        initial_label=es.labels[cols[2]],
        final_label=es.labels[cols[3]],
    )


class _Lines(NamedTuple):
    """Bare frequencies and weights, enough for :func:`render`."""

    freq_khz: np.ndarray
    amplitude: np.ndarray


@dataclass(frozen=True)
class Spectrum:
    """Power spectral density on a frequency grid in kHz (axis ``omega_S - omega_I``)."""

    freq_khz: np.ndarray
    psd: np.ndarray
    linewidth_khz: float

    @property
    def step_khz(self):
        return float(np.mean(np.diff(self.freq_khz))) if self.freq_khz.size > 1 else 0.0


# The weakest lines are dropped as long as together they carry at most this
# fraction of the total weight; each Gaussian is evaluated out to this many
# widths, where it has fallen to ~1e-14.
_DROP_BUDGET = 1e-8
_WINDOW_SIGMAS = 8.0


def render(table, grid_khz, linewidth_khz=2.0):
    """Sum of Gaussians ``A_k exp(-(f - f_k)^2 / (2 sigma^2))`` with
    ``sigma = linewidth_khz``."""
    grid = check_grid(grid_khz, "grid_khz")
    sigma = check_positive(linewidth_khz, "linewidth_khz")
    f_k = table.freq_khz
    a_k = table.amplitude
    keep = (f_k > grid[0] - _WINDOW_SIGMAS * sigma) & (f_k < grid[-1] + _WINDOW_SIGMAS * sigma)
    if a_k.size:
        budget = _DROP_BUDGET * float(np.sum(a_k))
        # lines below budget/N lead the greedy order and fit the budget together
        tiny = a_k <= budget / a_k.size
        keep &= ~tiny
        budget -= float(np.sum(a_k[tiny]))
        rest = np.flatnonzero(~tiny)
        order = rest[np.argsort(a_k[rest], kind="stable")]
        n_drop = int(np.searchsorted(np.cumsum(a_k[order]), budget, side="right"))
        keep[order[:n_drop]] = False
    f_k, a_k = f_k[keep], a_k[keep]
    psd = np.zeros_like(grid)
    if f_k.size:
        # Merge lines that coincide to 1e-9 kHz; their Gaussians are identical.
        order = np.argsort(f_k, kind="stable")
        f_k, a_k = f_k[order], a_k[order]
        breaks = np.concatenate(([True], np.diff(f_k) > 1e-9))
        group = np.cumsum(breaks) - 1
        a_k = np.bincount(group, weights=a_k)
        f_k = f_k[breaks]
        half = _WINDOW_SIGMAS * sigma
        lo = np.searchsorted(grid, f_k - half, side="left")
        hi = np.searchsorted(grid, f_k + half, side="right")
        width = int(np.max(hi - lo, initial=0))
        if width:
            idx = lo[:, None] + np.arange(width)[None, :]
            valid = idx < hi[:, None]
            idx = np.where(valid, idx, 0)
            contrib = a_k[:, None] * np.exp(-0.5 * ((grid[idx] - f_k[:, None]) / sigma) ** 2)
            psd += np.bincount(idx[valid], weights=contrib[valid], minlength=grid.size)
    return Spectrum(freq_khz=grid, psd=psd, linewidth_khz=sigma)


def frequency_grid(f_min_khz, f_max_khz, step_khz):
    """Inclusive uniform grid, robust to floating-point step accumulation."""
    step = check_positive(step_khz, "step_khz")
    n = int(np.floor((f_max_khz - f_min_khz) / step + 1e-9)) + 1
    if n < 1:
        raise ValidationError("empty frequency grid")
    return f_min_khz + step * np.arange(n)


def synthesize(params, thermal, emission, grid_khz, linewidth_khz=2.0, include_carrier=True):
    """Full pipeline for one parameter set: diagonalize, tabulate, render."""
    es = eigh(build_two_mode(params))
    blocks = _line_blocks(es, thermal, emission, params.omega_z)
    omega = np.concatenate([om.ravel() for om, _, _ in blocks])
    amp = np.concatenate([a.ravel() for _, a, _ in blocks])
    if not include_carrier:
        keep = _carrier_mask(omega)
        omega, amp = omega[keep], amp[keep]
    return render(_Lines(omega / KHZ, amp), grid_khz, linewidth_khz)
