"""
Small dense real linear algebra.

Every routine here targets matrices of a few dozen rows at most and uses
plain O(n^3) algorithms: LU with partial pivoting for determinants and
solves, Cholesky for the positive-definiteness test and power iteration
on ``M^T M`` for the spectral norm. Inputs are anything ``numpy.asarray``
accepts; outputs are numpy arrays or Python floats.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, SingularMatrixError

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-13


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array, promoting scalars to 1x1."""
    arr = np.array(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _as_square(M, name="matrix"):
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _lu_inplace(a):
    """Doolittle LU with partial pivoting on a copy. Returns (lu, perm, sign, min_pivot)."""
    n = a.shape[0]
    perm = np.arange(n)
    sign = 1.0
    min_pivot = np.inf
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        pivot = a[k, k]
        min_pivot = min(min_pivot, abs(pivot))
        if pivot == 0.0:
            continue
        a[k + 1:, k] /= pivot
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, perm, sign, min_pivot


def determinant(M) -> float:
    """Determinant via LU factorisation with partial pivoting.

    >>> determinant([[2.0, 1.0], [1.0, 2.0]])
    3.0
    """
    a = _as_square(M).copy()
    lu, _, sign, _ = _lu_inplace(a)
    return float(sign * np.prod(np.diag(lu)))


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If a pivot falls below ``1e-13 * ||A||_inf``.
    """
    a = _as_square(A, "A").copy()
    rhs = np.array(b, dtype=float).reshape(-1)
    n = a.shape[0]
    if rhs.shape[0] != n:
        raise DimensionError(f"right-hand side has length {rhs.shape[0]}, expected {n}")
    scale = max(float(np.max(np.sum(np.abs(a), axis=1))), np.finfo(float).tiny)
    lu, perm, _, min_pivot = _lu_inplace(a)
    if min_pivot < PIVOT_RTOL * scale:
        raise SingularMatrixError(f"pivot {min_pivot:.3e} below {PIVOT_RTOL:.0e} * ||A||")
    y = rhs[perm]
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def is_symmetric(M, rtol: float = SYMMETRY_RTOL) -> bool:
    a = _as_square(M)
    norm = float(np.max(np.abs(a))) if a.size else 0.0
    return bool(np.max(np.abs(a - a.T)) <= rtol * max(1.0, norm))


def cholesky(M) -> np.ndarray:
    """Lower Cholesky factor; raises ``SingularMatrixError`` on a non-positive pivot."""
    a = _as_square(M)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise SingularMatrixError(f"non-positive Cholesky pivot {d!r} at column {j}")
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def is_positive_definite(M) -> bool:
    """Symmetric (to 1e-12 relative) and Cholesky-factorisable with positive pivots."""
    try:
        a = _as_square(M)
    except (DimensionError, ValueError):
        return False
    if not is_symmetric(a):
        return False
    try:
        cholesky(0.5 * (a + a.T))
    except SingularMatrixError:
        return False
    return True


def _power_iterate(G, v, tol, max_iter):
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (G @ v))
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def spectral_norm(M, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on ``M^T M``.

    The start vector is the normalised all-ones vector; if that lands in
    the null space the iteration restarts from ``e_1``. The Rayleigh
    quotient is squared in accuracy relative to the iterate, so the
    stopping rule on successive quotients gives a relative error well
    below ``tol`` on the norm itself.
    """
    a = as_matrix(M)
    if not np.any(a):
        return 0.0
    # scale out magnitude so tolerance is relative
    s = float(np.max(np.abs(a)))
    a = a / s
    G = a.T @ a
    n = G.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = _power_iterate(G, v, tol, max_iter)
    if lam == 0.0:
        e1 = np.zeros(n)
        e1[0] = 1.0
        lam = _power_iterate(G, e1, tol, max_iter)
    return s * float(np.sqrt(max(lam, 0.0)))


def spectral_radius_estimate(M, power: int = 64) -> float:
    """Estimate ``max |eig(M)|`` as ``||M^power||_2 ** (1/power)``."""
    a = _as_square(M)
    P = np.linalg.matrix_power(a, power)
    nrm = spectral_norm(P)
    return nrm ** (1.0 / power) if nrm > 0 else 0.0


def controllability_rank(A, B, rtol: float = 1e-10) -> int:
    """Rank of ``[B, AB, ..., A^{n-1}B]`` via Gaussian elimination with full row scans."""
    a = _as_square(A, "A")
    b = as_matrix(B, "B")
    n = a.shape[0]
    if b.shape[0] != n:
        raise DimensionError(f"B has {b.shape[0]} rows, expected {n}")
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    K = np.hstack(blocks).copy()
    tol = rtol * max(1.0, float(np.max(np.abs(K))))
    rank = 0
    rows, cols = K.shape
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(K[rank:, c])))
        if abs(K[p, c]) <= tol:
            continue
        K[[rank, p]] = K[[p, rank]]
        K[rank + 1:, :] -= np.outer(K[rank + 1:, c] / K[rank, c], K[rank, :])
        rank += 1
    return rank


def symmetrize(M) -> np.ndarray:
    a = np.asarray(M, dtype=float)
    return 0.5 * (a + a.T)


def psd_factor(M, rtol: float = 1e-12) -> np.ndarray:
    """Lower factor ``F`` with ``F F^T = M`` for a positive semi-definite ``M``.

    Columns whose pivot is below ``rtol * max(diag(M))`` are zeroed, so a
    singular (even all-zero) covariance yields a valid sampling factor.
    """
    a = symmetrize(_as_square(M))
    n = a.shape[0]
    floor = rtol * max(float(np.max(np.diag(a))), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d <= floor:
            if d < -max(floor, 1e-300) * 1e3:
                raise SingularMatrixError(f"matrix is not positive semi-definite (pivot {d!r})")
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L
