import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rqloop import matrixcore as mc
from rqloop.errors import DimensionError, SingularMatrixError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_determinant_examples():
    assert mc.determinant(np.eye(3)) == 1.0
    assert mc.determinant([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(3.0, abs=1e-15)
    rng = np.random.default_rng(1)
    M = rng.standard_normal((4, 4))
    M[3] = M[1]
    assert mc.determinant(M) == pytest.approx(0.0, abs=1e-12)


def test_determinant_rejects_non_square():
    with pytest.raises(DimensionError):
        mc.determinant(np.ones((2, 3)))


def test_as_matrix_validation():
    assert mc.as_matrix(2.5).shape == (1, 1)
    with pytest.raises(ValueError):
        mc.as_matrix([[1.0, np.nan]])
    with pytest.raises(DimensionError):
        mc.as_matrix(np.ones((2, 2, 2)))


def test_determinant_multiplicative():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A, B = rng.standard_normal((2, 5, 5))
        lhs = mc.determinant(A @ B)
        rhs = mc.determinant(A) * mc.determinant(B)
        assert lhs == pytest.approx(rhs, rel=1e-8)


@pytest.mark.parametrize(
    "M, expected",
    [
        (np.diag([2.0, 0.5]), 2.0),
        ([[0.0, 1.0], [0.0, 0.0]], 1.0),
        ([[1.0, 1.0], [0.0, 1.0]], np.sqrt((3 + np.sqrt(5)) / 2)),
    ],
)
def test_spectral_norm_examples(M, expected):
    assert mc.spectral_norm(M) == pytest.approx(expected, rel=1e-12)


def test_spectral_norm_zero_and_restart():
    assert mc.spectral_norm(np.zeros((3, 3))) == 0.0
    # the all-ones start vector lies in the null space here
    M = np.array([[1.0, -1.0], [1.0, -1.0]])
    assert mc.spectral_norm(M) == pytest.approx(2.0, rel=1e-12)


def test_spectral_norm_matches_svd_on_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        M = rng.standard_normal((rng.integers(1, 7), rng.integers(1, 7)))
        assert mc.spectral_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (3, 4), elements=finite))
def test_spectral_norm_transpose_invariant(M):
    assert abs(mc.spectral_norm(M) - mc.spectral_norm(M.T)) <= 1e-9 * max(1.0, mc.spectral_norm(M))


def test_spectral_norm_submultiplicative():
    rng = np.random.default_rng(11)
    for _ in range(100):
        A, B = rng.standard_normal((2, 4, 4))
        assert mc.spectral_norm(A @ B) <= mc.spectral_norm(A) * mc.spectral_norm(B) * (1 + 1e-9)


def test_solve_linear_examples():
    np.testing.assert_array_equal(mc.solve_linear(np.eye(2), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_allclose(mc.solve_linear([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])
    with pytest.raises(SingularMatrixError):
        mc.solve_linear([[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0])


@settings(max_examples=80, deadline=None)
@given(arrays(float, (5, 5), elements=finite), arrays(float, 5, elements=finite))
def test_solve_linear_residual(A, b):
    A = A + 25.0 * np.eye(5)  # diagonally dominant, well conditioned
    x = mc.solve_linear(A, b)
    assert np.max(np.abs(A @ x - b)) <= 1e-9 * (1 + np.max(np.abs(b)))


def test_solve_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        mc.solve_linear(np.eye(3), [1.0, 2.0])


@pytest.mark.parametrize(
    "M, expected",
    [(np.eye(3), True), (np.diag([1.0, -1.0]), False), ([[2.0, 1.0], [1.0, 2.0]], True),
     ([[1.0, 2.0], [0.0, 1.0]], False), (np.zeros((2, 2)), False)],
)
def test_is_positive_definite(M, expected):
    assert mc.is_positive_definite(M) is expected


def test_cholesky_matches_numpy():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((4, 4))
    M = X @ X.T + 0.1 * np.eye(4)
    np.testing.assert_allclose(mc.cholesky(M), np.linalg.cholesky(M), rtol=1e-12, atol=1e-12)


def test_symmetry_tolerance():
    M = np.array([[1.0, 0.5], [0.5 + 1e-14, 1.0]])
    assert mc.is_symmetric(M)
    assert not mc.is_symmetric(np.array([[1.0, 0.5], [0.5 + 1e-9, 1.0]]))


def test_spectral_radius_estimate():
    M = np.array([[0.5, 10.0], [0.0, 0.4]])
    # not a norm contraction, but Schur stable
    assert mc.spectral_norm(M) > 1
    assert mc.spectral_radius_estimate(M) < 1
    assert mc.spectral_radius_estimate(np.diag([1.5, 0.2])) == pytest.approx(1.5, rel=1e-12)


def test_controllability_rank():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert mc.controllability_rank(A, [[0.0], [1.0]]) == 2
    assert mc.controllability_rank(A, [[1.0], [0.0]]) == 1


def test_psd_factor_handles_singular():
    W = np.array([[1.0, 1.0], [1.0, 1.0]])
    F = mc.psd_factor(W)
    np.testing.assert_allclose(F @ F.T, W, atol=1e-14)
    np.testing.assert_array_equal(mc.psd_factor(np.zeros((2, 2))), np.zeros((2, 2)))
    with pytest.raises(SingularMatrixError):
        mc.psd_factor(np.diag([1.0, -1.0]))
