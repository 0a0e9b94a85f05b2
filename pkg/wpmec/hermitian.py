"""
Dense complex-Hermitian linear algebra for the dual solver and SDP recovery.

Matrices are plain ``numpy`` complex arrays; :func:`hermitian` builds one from
its upper triangle so Hermitian symmetry is exact by construction. The
spectral routines delegate to LAPACK (``numpy.linalg.eigh``).
"""

from typing import Tuple

import numpy as np

from .errors import ValidationError

MAX_DIMENSION = 64

HermitianMatrix = np.ndarray


def hermitian(A) -> HermitianMatrix:
    """
    Build a Hermitian matrix from the upper triangle of ``A``.

    Args:
        A: square array-like (real or complex)

    Returns:
        HermitianMatrix: complex array with A[k, j] = conj(A[j, k]) exactly
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] > MAX_DIMENSION:
        raise ValidationError(f"dimension {A.shape[0]} exceeds supported maximum {MAX_DIMENSION}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    upper = np.triu(A, 1)
    return upper + upper.conj().T + np.diag(A.diagonal().real).astype(complex)


def is_hermitian(A: np.ndarray, tol: float = 1e-12) -> bool:
    """True when ``A`` is square and Hermitian within ``tol`` relative to its norm."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    scale = max(1.0, float(np.linalg.norm(A)))
    return float(np.linalg.norm(A - A.conj().T)) <= tol * scale


def _check(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    return A


def eig(A: HermitianMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a Hermitian matrix.

    Returns:
        (w, V): real eigenvalues in ascending order and orthonormal eigenvectors
        as the columns of ``V``
    """
    A = _check(A)
    w, V = np.linalg.eigh(A)
    return w, V


def psd_project(A: HermitianMatrix) -> HermitianMatrix:
    """Frobenius-nearest positive semidefinite matrix: V max(w, 0) V^H."""
    w, V = eig(A)
    projected = (V * np.maximum(w, 0.0)) @ V.conj().T
    return hermitian(projected)


def trace_product(A: HermitianMatrix, B: HermitianMatrix) -> float:
    """tr(AB) for Hermitian A, B computed as Re(sum_jk A_jk conj(B_jk))."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValidationError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.real(np.vdot(B, A)))


def max_eigpair(A: HermitianMatrix) -> Tuple[float, np.ndarray]:
    """Largest eigenvalue of ``A`` and a unit-norm eigenvector for it."""
    w, V = eig(A)
    return float(w[-1]), V[:, -1]


def rank_one(h: np.ndarray) -> HermitianMatrix:
    """h h^H for a complex vector ``h``."""
    h = np.asarray(h, dtype=complex).ravel()
    return np.outer(h, h.conj())


def orthonormal_span(vectors: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """
    Orthonormal basis (as columns) of the span of the rows of ``vectors``.

    Directions whose Gram eigenvalue falls below ``rtol`` times the largest are
    dropped.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    gram = vectors.T @ vectors.conj()
    w, V = eig(gram)
    if w[-1] <= 0.0:
        return np.zeros((vectors.shape[1], 0), dtype=complex)
    keep = w > rtol * w[-1]
    return V[:, keep]


def svec(A: HermitianMatrix) -> np.ndarray:
    """
    Isometric real vectorisation of a Hermitian n x n matrix.

    Layout: the n real diagonal entries, then sqrt(2) Re and sqrt(2) Im of the
    strict upper triangle (row-major), so that svec(A) . svec(B) = tr(AB).
    """
    A = np.asarray(A)
    n = A.shape[0]
    iu = np.triu_indices(n, 1)
    upper = A[iu]
    return np.concatenate([A.diagonal().real, np.sqrt(2.0) * upper.real, np.sqrt(2.0) * upper.imag])


def smat(x: np.ndarray, n: int) -> HermitianMatrix:
    """Inverse of :func:`svec`."""
    x = np.asarray(x, dtype=float)
    m = n * (n - 1) // 2
    if x.size != n + 2 * m:
        raise ValidationError(f"vector of length {x.size} does not describe a {n}x{n} Hermitian matrix")
    A = np.zeros((n, n), dtype=complex)
    iu = np.triu_indices(n, 1)
    A[iu] = (x[n:n + m] + 1j * x[n + m:]) / np.sqrt(2.0)
    A = A + A.conj().T
    A[np.diag_indices(n)] = x[:n]
    return A
