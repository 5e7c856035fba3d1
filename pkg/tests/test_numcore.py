import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poelr.exceptions import DegenerateInput, InvalidInput
from poelr.numcore import complete_basis, make_rng, sym_eig, sym_expm


def test_sym_eig_diagonal_sorted():
    w, v = sym_eig(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(w, [1.0, 3.0])
    np.testing.assert_allclose(np.abs(v), [[0, 1], [1, 0]], atol=1e-15)


def test_sym_eig_zero_matrix():
    w, v = sym_eig(np.zeros((2, 2)))
    np.testing.assert_array_equal(w, [0.0, 0.0])
    np.testing.assert_allclose(v.T @ v, np.eye(2), atol=1e-15)


def test_sym_eig_two_by_two():
    w, _ = sym_eig([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(w, [1.0, 3.0], atol=1e-14)


def test_sym_eig_rejects_bad_input():
    with pytest.raises(InvalidInput):
        sym_eig([[1.0, np.nan], [np.nan, 1.0]])
    with pytest.raises(InvalidInput):
        sym_eig([[1.0, 2.0], [0.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_sym_eig_matches_lapack(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d))
    a = a + a.T
    w, v = sym_eig(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10 * max(1, np.abs(w).max()))
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10 * max(1, np.abs(a).max()))
    np.testing.assert_allclose(v.T @ v, np.eye(d), atol=1e-12)


def test_sym_expm_examples():
    np.testing.assert_allclose(sym_expm(np.zeros((3, 3))), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sym_expm(np.diag([math.log(2), math.log(3)])), np.diag([2.0, 3.0]), rtol=1e-14)


def _series_expm(a, terms=60):
    out, term = np.eye(len(a)), np.eye(len(a))
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


@pytest.mark.parametrize("t", [0.1, 0.7, 2.0])
def test_sym_expm_hyperbolic(t):
    a = np.array([[0.0, t], [t, 0.0]])
    expected = np.array([[math.cosh(t), math.sinh(t)], [math.sinh(t), math.cosh(t)]])
    np.testing.assert_allclose(sym_expm(a), expected, atol=1e-12)
    np.testing.assert_allclose(_series_expm(a), expected, atol=1e-12)


def test_complete_basis_axis_seed():
    b = complete_basis([np.array([1.0, 0.0])])
    np.testing.assert_allclose(np.abs(b), np.eye(2), atol=1e-15)


def test_complete_basis_diagonal_seed():
    b = complete_basis([np.array([1.0, 1.0]) / math.sqrt(2)])
    second = b[:, 1] * np.sign(b[0, 1])
    np.testing.assert_allclose(second, np.array([1.0, -1.0]) / math.sqrt(2), atol=1e-15)


def test_complete_basis_drops_dependent_seed():
    b = complete_basis([np.array([1.0, 0.0]), np.array([1.0, 1e-15])])
    np.testing.assert_allclose(b.T @ b, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(np.abs(b[:, 0]), [1.0, 0.0])


def test_complete_basis_zero_seed():
    with pytest.raises(DegenerateInput):
        complete_basis([np.zeros(3)])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_complete_basis_orthonormal(d, k, seed):
    seeds = list(np.random.default_rng(seed).standard_normal((min(k, d), d)))
    b = complete_basis(seeds)
    np.testing.assert_allclose(b.T @ b, np.eye(d), atol=1e-12)
    # the first seed spans the first column
    np.testing.assert_allclose(abs(b[:, 0] @ seeds[0]), np.linalg.norm(seeds[0]), rtol=1e-12)


def test_rng_streams_reproducible_and_distinct():
    a = make_rng(7, "evt", 1).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7, "evt", 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, "evt", 2).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, "evt", 1).standard_normal(5))
