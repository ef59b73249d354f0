import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinmotion import ValidationError
from spinmotion.qops import eigh, mode_operators, spin_operators, tensor

half_integers = st.integers(min_value=1, max_value=12).map(lambda k: k / 2)


def test_spin_half_matrices():
    s = spin_operators(0.5)
    np.testing.assert_array_equal(np.diag(s.Fz).real, [-0.5, 0.5])
    assert s.Fplus[1, 0] == 1.0


def test_spin_four_raising_element():
    s = spin_operators(4)
    assert s.Fplus[s.index(-3), s.index(-4)].real == pytest.approx(np.sqrt(8.0), abs=1e-15)
    assert s.Fplus[s.index(-3), s.index(-4)].real == pytest.approx(2.8284, abs=1e-4)


@given(half_integers)
def test_spin_algebra_identities(F):
    s = spin_operators(F)
    comm = s.Fx @ s.Fy - s.Fy @ s.Fx
    assert np.max(np.abs(comm - 1j * s.Fz)) <= 1e-12
    np.testing.assert_allclose(s.Fx, (s.Fplus + s.Fminus) / 2, atol=1e-15)
    np.testing.assert_allclose(s.Fminus, s.Fplus.conj().T, atol=0)
    for op in (s.Fx, s.Fy, s.Fz):
        assert np.max(np.abs(op - op.conj().T)) <= 1e-12
    casimir = s.Fx @ s.Fx + s.Fy @ s.Fy + s.Fz @ s.Fz
    np.testing.assert_allclose(casimir, F * (F + 1) * np.eye(s.dim), atol=1e-12)
    m = s.m_values
    for k in range(s.dim - 1):
        assert abs(s.Fplus[k + 1, k] - np.sqrt(F * (F + 1) - m[k] * (m[k] + 1))) <= 1e-12


@pytest.mark.parametrize("F", [0, -0.5, 0.3, 1.25])
def test_spin_rejects_non_half_integer(F):
    with pytest.raises(ValidationError):
        spin_operators(F)


def test_mode_two_levels():
    m = mode_operators(2)
    np.testing.assert_array_equal(m.a, [[0, 1], [0, 0]])


@given(st.integers(min_value=2, max_value=15))
def test_mode_identities(n_max):
    m = mode_operators(n_max)
    np.testing.assert_array_equal(np.diag(m.n), np.arange(n_max))
    np.testing.assert_allclose(m.n, m.adag @ m.a, atol=1e-14)
    assert np.all(np.tril(m.a) == 0)
    for n in range(1, n_max):
        assert m.a[n - 1, n] == pytest.approx(np.sqrt(n), abs=1e-15)
    comm = m.a @ m.adag - m.adag @ m.a
    expected = np.eye(n_max)
    expected[-1, -1] = 1 - n_max
    np.testing.assert_allclose(comm, expected, atol=1e-12)


@pytest.mark.parametrize("n_max", [0, 1, 2.5])
def test_mode_rejects_small_truncation(n_max):
    with pytest.raises(ValidationError):
        mode_operators(n_max)


def test_tensor_examples():
    np.testing.assert_array_equal(tensor(np.eye(2), np.eye(3)), np.eye(6))
    A = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(tensor(np.eye(1), A), A)
    rng = np.random.default_rng(1)
    A, C = rng.normal(size=(2, 2, 2))
    B, D = rng.normal(size=(2, 3, 3))
    np.testing.assert_allclose(tensor(A, B) @ tensor(C, D), tensor(A @ C, B @ D), atol=1e-12)
    with pytest.raises(ValidationError):
        tensor()


def test_eigh_examples():
    np.testing.assert_allclose(eigh(np.diag([3.0, 1.0, 2.0])).energies, [1, 2, 3])
    g = 0.7
    np.testing.assert_allclose(eigh(np.array([[0, g], [g, 0]])).energies, [-g, g], atol=1e-15)


def _random_hermitian(rng, n):
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (X + X.conj().T) / 2


def test_eigh_residual_and_orthonormality():
    rng = np.random.default_rng(50)
    H = _random_hermitian(rng, 50)
    es = eigh(H)
    V, E = es.states, es.energies
    assert np.linalg.norm(H @ V - V * E) <= 1e-10 * np.linalg.norm(H)
    assert np.max(np.abs(V.conj().T @ V - np.eye(50))) <= 1e-10
    assert np.all(np.diff(E) >= 0)


def test_eigh_rejects_non_hermitian_and_non_square():
    with pytest.raises(ValidationError):
        eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValidationError):
        eigh(np.zeros((2, 3)))


def test_eigh_symmetrizes_tiny_asymmetry():
    H = np.array([[1.0, 2.0], [2.0 + 1e-13, 3.0]])
    es = eigh(H)
    np.testing.assert_allclose(es.energies, np.linalg.eigvalsh((H + H.T) / 2), rtol=1e-14)


def test_eigh_deterministic():
    H = _random_hermitian(np.random.default_rng(3), 30)
    a, b = eigh(H.copy()), eigh(H.copy())
    np.testing.assert_array_equal(a.energies, b.energies)
    np.testing.assert_array_equal(a.states, b.states)


@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_eigh_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    H = _random_hermitian(rng, 12)
    P = np.eye(12)[rng.permutation(12)]
    e1 = eigh(H).energies
    e2 = eigh(P @ H @ P.T).energies
    assert np.max(np.abs(e1 - e2)) <= 1e-10 * max(np.max(np.abs(e1)), 1.0)


def test_eigh_labels_follow_largest_overlap():
    es = eigh(np.diag([5.0, -1.0, 2.0]))
    np.testing.assert_array_equal(es.labels, [1, 2, 0])
