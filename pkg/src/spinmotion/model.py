"""Physical parameter mappings and Hamiltonian builders for a trapped atom
whose spin couples to its motion through a fictitious-field gradient.

All Hamiltonians are returned as ``H/hbar`` in rad/s. Composite spaces are
ordered ``mode ⊗ spin`` for the single-mode model and
``mode_x ⊗ mode_y ⊗ spin`` for the two-mode model.
"""

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import constants as sc

from ._validation import ValidationError, check_half_integer, check_nonnegative, check_positive
from .qops import mode_operators, spin_operators, tensor

TWO_PI = 2 * np.pi
KHZ = TWO_PI * 1e3  # rad/s per kHz


def khz_to_rad(f_khz):
    return np.asarray(f_khz, dtype=float) * KHZ if np.ndim(f_khz) else float(f_khz) * KHZ


def rad_to_khz(omega):
    return np.asarray(omega, dtype=float) / KHZ if np.ndim(omega) else float(omega) / KHZ


@dataclass(frozen=True)
class PhysicalConstants:
    """SI constants, with the Bohr magneton expressed per gauss.

    Defaults describe the cesium 6S1/2 F=4 ground state.
    """

    hbar: float = sc.hbar
    mu_B: float = sc.physical_constants["Bohr magneton"][0] * 1e-4  # J/G
    mass: float = 2.20695e-25
    g_F: float = 0.25

    def __post_init__(self):
        check_positive(self.hbar, "hbar")
        check_positive(self.mu_B, "mu_B")
        check_positive(self.mass, "mass")
        if not np.isfinite(self.g_F):
            raise ValidationError("g_F must be finite")

    @property
    def zeeman_rate(self):
        """``g_F mu_B / hbar`` in rad/s per gauss."""
        return self.g_F * self.mu_B / self.hbar


CESIUM = PhysicalConstants()


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the spin-motion Hamiltonian (angular frequencies in rad/s).

    ``omega_z`` never enters a Hamiltonian; the spectrum code uses it to add the
    sidebands of the uncoupled axial mode. ``B_0`` (G) and ``b_y`` (G/m) are
    optional provenance for parameters built with :meth:`from_lab`.
    """

    F: float = 4.0
    omega_x: float = 0.0
    omega_y: float = 0.0
    omega_z: float = 0.0
    Delta: float = 0.0
    g_x: float = 0.0
    g_y: float = 0.0
    n_max: int = 5
    B_0: float | None = None
    b_y: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "F", check_half_integer(self.F))
        for name in ("omega_x", "omega_y", "omega_z", "Delta"):
            check_nonnegative(getattr(self, name), name)
        for name in ("g_x", "g_y"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise ValidationError(f"n_max must be an integer >= 2, got {self.n_max!r}")
        object.__setattr__(self, "n_max", int(self.n_max))

    @classmethod
    def from_lab(cls, B_0, b_y, omega_y, consts=CESIUM, **kwargs):
        """Parameters with ``Delta`` and ``g_y`` derived from the offset field
        ``B_0`` (G) and the fictitious-field gradient ``b_y`` (G/m)."""
        F = kwargs.pop("F", 4.0)
        return cls(
            F=F,
            omega_y=omega_y,
            Delta=zeeman_splitting(B_0, consts),
            g_y=coupling_from_gradient(b_y, omega_y, consts, F=F),
            B_0=B_0,
            b_y=b_y,
            **kwargs,
        )

    def with_delta(self, Delta):
        return replace(self, Delta=float(Delta), B_0=None)

    @property
    def dim_two_mode(self):
        return self.n_max**2 * (int(round(2 * self.F)) + 1)


def reference_params(Delta=0.0, n_max=5):
    """Parameter set used for the published numerical simulations
    (omega_y = 2pi 93 kHz, g_y = 2pi 17.5 kHz, omega_x = 2pi 149 kHz,
    g_x = 2pi 18 kHz) with the measured axial frequency 2pi 243 kHz."""
    return ModelParams(
        F=4,
        omega_x=149 * KHZ,
        omega_y=93 * KHZ,
        omega_z=243 * KHZ,
        Delta=Delta,
        g_x=18 * KHZ,
        g_y=17.5 * KHZ,
        n_max=n_max,
    )


@dataclass(frozen=True)
class SimplifiedParams:
    """Four-level model: ``Delta``, trap frequencies and the Rabi frequencies
    ``Omega_i = 2 g_i`` (all rad/s)."""

    Delta: float
    omega_x: float
    omega_y: float
    Omega_x: float
    Omega_y: float

    def __post_init__(self):
        for name in ("Delta", "omega_x", "omega_y", "Omega_x", "Omega_y"):
            check_nonnegative(getattr(self, name), name)

    @classmethod
    def from_model(cls, params):
        return cls(
            Delta=params.Delta,
            omega_x=params.omega_x,
            omega_y=params.omega_y,
            Omega_x=rabi_from_coupling(abs(params.g_x)),
            Omega_y=rabi_from_coupling(abs(params.g_y)),
        )


def zeeman_splitting(B_0, consts=CESIUM):
    """Zeeman splitting ``g_F mu_B B_0 / hbar`` in rad/s for ``B_0`` in gauss."""
    B_0 = check_nonnegative(B_0, "B_0")
    return consts.zeeman_rate * B_0


def oscillator_length(omega, consts=CESIUM):
    """Ground-state size ``sqrt(hbar / (2 M omega))`` in metres."""
    omega = check_positive(omega, "omega")
    return float(np.sqrt(consts.hbar / (2 * consts.mass * omega)))


def coupling_from_gradient(b_y, omega_y, consts=CESIUM, F=4.0, convention="dicke"):
    """Spin-motion coupling ``g_y`` (rad/s) produced by a gradient ``b_y`` (G/m).

    ``convention="dicke"`` (default) makes the lab term
    ``g_F mu_B b_y y_0 (a + a†) F_x`` equal to
    ``hbar g_y / sqrt(2F) (a + a†)(F+ + F-)``, i.e.
    ``g_y = sqrt(2F) g_F mu_B b_y y_0 / (2 hbar)``, so that
    :func:`build_lab_hamiltonian` and :func:`build_dicke` share one spectrum.
    ``convention="sqrt2"`` returns ``sqrt(2) g_F mu_B b_y y_0 / (2 hbar)``;
    the two agree only for ``F = 1``.
    """
    F = check_half_integer(F)
    if convention == "dicke":
        factor = np.sqrt(2 * F)
    elif convention == "sqrt2":
        factor = np.sqrt(2.0)
    else:
        raise ValidationError(f"convention must be 'dicke' or 'sqrt2', got {convention!r}")
    y0 = oscillator_length(omega_y, consts)
    return float(factor * consts.zeeman_rate * float(b_y) * y0 / 2)


def rabi_from_coupling(g):
    """Rabi splitting of the resonant dressed pair, ``Omega = 2 g``."""
    check_nonnegative(g, "g")
    return 2.0 * float(g)


def _coupling_operator(spin):
    return spin.Fplus + spin.Fminus


def build_dicke(params, mode="y"):
    """Single-mode Hamiltonian ``omega n + Delta F_z + g/sqrt(2F) (a+a†)(F+ + F-)``
    on ``mode ⊗ spin``."""
    if mode not in ("x", "y"):
        raise ValidationError(f"mode must be 'x' or 'y', got {mode!r}")
    omega = params.omega_x if mode == "x" else params.omega_y
    g = params.g_x if mode == "x" else params.g_y
    spin = spin_operators(params.F)
    osc = mode_operators(params.n_max)
    Is, Im = np.eye(spin.dim), osc.identity
    H = (
        omega * tensor(osc.n, Is)
        + params.Delta * tensor(Im, spin.Fz)
        + g / np.sqrt(2 * params.F) * tensor(osc.a + osc.adag, _coupling_operator(spin))
    )
    return H


def rabi_matrix_element(params, mode="y"):
    """``2 |<b|H|a>|`` for ``|a> = |m=-F, n=1>`` and ``|b> = |m=-F+1, n=0>``,
    read off the single-mode Hamiltonian matrix."""
    H = build_dicke(params, mode=mode)
    dim_spin = int(round(2 * params.F)) + 1
    a_idx = 1 * dim_spin + 0
    b_idx = 0 * dim_spin + 1
    return 2.0 * float(abs(H[b_idx, a_idx]))


@lru_cache(maxsize=16)
def _two_mode_terms(F, n_max):
    spin = spin_operators(F)
    osc = mode_operators(n_max)
    Is, Im = np.eye(spin.dim), osc.identity
    X = osc.a + osc.adag
    coupling = _coupling_operator(spin) / np.sqrt(2 * F)
    terms = (
        tensor(osc.n, Im, Is),
        tensor(Im, osc.n, Is),
        tensor(Im, Im, spin.Fz),
        tensor(X, Im, coupling),
        tensor(Im, X, coupling),
    )
    for t in terms:
        t.setflags(write=False)
    return terms


def build_two_mode(params):
    """Hamiltonian with both radial modes on ``mode_x ⊗ mode_y ⊗ spin``."""
    nx, ny, fz, cx, cy = _two_mode_terms(params.F, params.n_max)
    return params.omega_x * nx + params.omega_y * ny + params.Delta * fz + params.g_x * cx + params.g_y * cy


def two_mode_bare_energies(params):
    """Diagonal of the uncoupled two-mode Hamiltonian in basis order."""
    spin = spin_operators(params.F)
    n = np.arange(params.n_max)
    return (
        params.omega_x * n[:, None, None]
        + params.omega_y * n[None, :, None]
        + params.Delta * spin.m_values[None, None, :]
    ).ravel()


def two_mode_index(params, m, n_x, n_y):
    """Basis index of the bare state ``|m, n_x, n_y>`` on ``mode_x ⊗ mode_y ⊗ spin``."""
    dim_spin = int(round(2 * params.F)) + 1
    k = spin_operators(params.F).index(m)
    return (n_x * params.n_max + n_y) * dim_spin + k


SIMPLIFIED_BASIS = ("g", "e", "x", "y")


def build_simplified(p):
    """Four-level Hamiltonian in the basis ``(g, e, x, y)``.

    ``g = |m=-4,0,0>``, ``e = |-3,0,0>``, ``x = |-4,1,0>``, ``y = |-4,0,1>``;
    ``e`` couples to ``x`` and ``y`` with strengths ``Omega_x/2`` and ``Omega_y/2``.
    """
    H = np.diag([0.0, p.Delta, p.omega_x, p.omega_y])
    H[1, 2] = H[2, 1] = p.Omega_x / 2
    H[1, 3] = H[3, 1] = p.Omega_y / 2
    return H


def build_lab_hamiltonian(B_0, b_y, params, consts=CESIUM):
    """Single-mode Hamiltonian written directly in lab quantities.

    ``omega_y n + (g_F mu_B B_0/hbar) F_z + (g_F mu_B b_y y_0/hbar)(a + a†) F_x``
    with ``B_0`` in gauss and ``b_y`` in gauss per metre. ``params`` supplies
    ``F``, ``omega_y`` and ``n_max``.
    """
    B_0 = check_nonnegative(B_0, "B_0")
    spin = spin_operators(params.F)
    osc = mode_operators(params.n_max)
    y0 = oscillator_length(params.omega_y, consts)
    H = (
        params.omega_y * tensor(osc.n, np.eye(spin.dim))
        + consts.zeeman_rate * B_0 * tensor(osc.identity, spin.Fz)
        + consts.zeeman_rate * float(b_y) * y0 * tensor(osc.a + osc.adag, spin.Fx)
    )
    return H
