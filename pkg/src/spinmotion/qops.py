"""Finite-dimensional operator algebra: spin matrices, truncated ladder
operators, Kronecker products and a dense Hermitian eigensolver.

Spin matrices are built in the eigenbasis of the quantization axis, ordered
``m = -F, -F+1, ..., +F``. In the trapped-atom models that axis is the offset
field direction, so :attr:`SpinAlgebra.Fz` plays the role of the lab ``F_y``
and the transverse operator ``(F+ + F-)/2`` is :attr:`SpinAlgebra.Fx`.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np

from ._validation import ValidationError, check_half_integer, check_square

HERMITICITY_RTOL = 1e-9


@dataclass(frozen=True)
class SpinAlgebra:
    """Spin-``F`` matrices (hbar = 1) in the basis ``m = -F..F``."""

    F: float
    Fx: np.ndarray
    Fy: np.ndarray
    Fz: np.ndarray
    Fplus: np.ndarray
    Fminus: np.ndarray

    @property
    def dim(self):
        return self.Fz.shape[0]

    @property
    def m_values(self):
        return np.real(np.diag(self.Fz)).copy()

    def index(self, m):
        """Basis index of the state with projection ``m``."""
        k = m + self.F
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) < self.dim:
            raise ValidationError(f"m={m} is not a valid projection for F={self.F}")
        return int(round(k))


@dataclass(frozen=True)
class ModeAlgebra:
    """Ladder operators of one bosonic mode truncated to ``n_max`` Fock states."""

    n_max: int
    a: np.ndarray
    adag: np.ndarray
    n: np.ndarray

    @property
    def identity(self):
        return np.eye(self.n_max)


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues, orthonormal eigenvector columns and, for each
    eigenstate, the index of the bare basis state it overlaps most."""

    energies: np.ndarray
    states: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.energies.shape[0]

    def overlaps(self):
        """``|<bare|i>|^2`` with bare states along rows, eigenstates along columns."""
        return np.abs(self.states) ** 2


def spin_operators(F):
    """Build the spin algebra for spin ``F``.

    Args:
        F: positive half-integer (``2F`` integer).

    Returns:
        SpinAlgebra with complex matrices of dimension ``2F+1``.
    """
    F = check_half_integer(F)
    dim = int(round(2 * F)) + 1
    m = -F + np.arange(dim)
    # <m+1|F+|m> = sqrt(F(F+1) - m(m+1)) sits on the first subdiagonal.
    raising = np.sqrt(np.clip(F * (F + 1) - m[:-1] * (m[:-1] + 1), 0.0, None))
    Fplus = np.zeros((dim, dim), dtype=complex)
    Fplus[np.arange(1, dim), np.arange(dim - 1)] = raising
    Fminus = Fplus.conj().T.copy()
    Fx = (Fplus + Fminus) / 2
    Fy = (Fplus - Fminus) / 2j
    Fz = np.diag(m).astype(complex)
    for arr in (Fx, Fy, Fz, Fplus, Fminus):
        arr.setflags(write=False)
    return SpinAlgebra(F=F, Fx=Fx, Fy=Fy, Fz=Fz, Fplus=Fplus, Fminus=Fminus)


def mode_operators(n_max):
    """Truncated annihilation, creation and number operators."""
    if int(n_max) != n_max or n_max < 2:
        raise ValidationError(f"n_max must be an integer >= 2, got {n_max!r}")
    n_max = int(n_max)
    a = np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), k=1)
    adag = a.T.copy()
    n = np.diag(np.arange(n_max, dtype=float))
    for arr in (a, adag, n):
        arr.setflags(write=False)
    return ModeAlgebra(n_max=n_max, a=a, adag=adag, n=n)


def tensor(*ops):
    """Kronecker product of the given matrices, left factor outermost."""
    if not ops:
        raise ValidationError("tensor() needs at least one operand")
    return reduce(np.kron, (np.asarray(op) for op in ops))


def eigh(H):
    """Diagonalize a Hermitian matrix.

    Matrices that are Hermitian up to ``1e-9 * ||H||_F`` are symmetrized before
    diagonalization; larger asymmetries raise :class:`ValidationError`.
    """
    H = check_square(np.asarray(H), "H")
    norm = np.linalg.norm(H)
    if np.linalg.norm(H - H.conj().T) > HERMITICITY_RTOL * max(norm, np.finfo(float).tiny):
        raise ValidationError("H is not Hermitian within tolerance")
    H = (H + H.conj().T) / 2
    if np.iscomplexobj(H) and not np.any(H.imag):
        H = H.real
    energies, states = np.linalg.eigh(H)
    labels = np.argmax(np.abs(states) ** 2, axis=0)
    return EigenSystem(energies=energies, states=states, labels=labels)
