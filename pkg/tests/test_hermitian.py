import numpy as np
import pytest

from wpmec.errors import ValidationError
from wpmec.hermitian import (eig, hermitian, is_hermitian, max_eigpair, orthonormal_span, psd_project, rank_one,
                             smat, svec, trace_product)


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return hermitian(A)


def test_hermitian_is_exact():
    rng = np.random.default_rng(0)
    A = random_hermitian(rng, 5)
    assert np.array_equal(A, A.conj().T)
    assert np.all(A.diagonal().imag == 0)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[np.nan, 0], [0, 1]]), np.eye(65)])
def test_hermitian_rejects_bad_input(bad):
    with pytest.raises(ValidationError):
        hermitian(bad)


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_eig_reconstructs(n):
    rng = np.random.default_rng(n)
    A = random_hermitian(rng, n)
    w, V = eig(A)
    assert np.all(np.diff(w) >= 0)
    assert np.allclose(V.conj().T @ V, np.eye(n), atol=1e-12)
    assert np.allclose((V * w) @ V.conj().T, A, atol=1e-10 * max(1.0, np.abs(A).max()))


def test_psd_project_clips_negative_eigenvalues():
    P = psd_project(np.diag([-1.0, 2.0]))
    assert np.allclose(P, np.diag([0.0, 2.0]))

    rng = np.random.default_rng(3)
    A = random_hermitian(rng, 4)
    P = psd_project(A)
    assert eig(P)[0][0] >= -1e-12
    assert np.allclose(psd_project(P), P, atol=1e-12)
    assert is_hermitian(P)


def test_trace_product_matches_trace():
    rng = np.random.default_rng(4)
    A, B = random_hermitian(rng, 3), random_hermitian(rng, 3)
    assert trace_product(A, B) == pytest.approx(np.trace(A @ B).real)
    with pytest.raises(ValidationError):
        trace_product(A, np.eye(2))


def test_max_eigpair_of_rank_one():
    h = np.array([1.0 + 1j, 2.0, -1j])
    w, v = max_eigpair(rank_one(h))
    assert w == pytest.approx(np.vdot(h, h).real)
    assert abs(np.vdot(v, h)) == pytest.approx(np.linalg.norm(h))


def test_svec_is_an_isometry():
    rng = np.random.default_rng(5)
    A, B = random_hermitian(rng, 4), random_hermitian(rng, 4)
    assert svec(A).size == 16
    assert np.dot(svec(A), svec(B)) == pytest.approx(trace_product(A, B))
    assert np.allclose(smat(svec(A), 4), A)
    with pytest.raises(ValidationError):
        smat(np.zeros(5), 2)


def test_orthonormal_span_drops_dependent_directions():
    h = np.array([[1.0, 1j, 0.0], [2.0, 2j, 0.0]])
    U = orthonormal_span(h)
    assert U.shape == (3, 1)
    assert np.allclose(U.conj().T @ U, np.eye(1))

    U = orthonormal_span(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    assert U.shape == (2, 2)
    assert orthonormal_span(np.zeros((2, 3))).shape == (3, 0)
