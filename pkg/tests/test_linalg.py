import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helmdd.linalg import (
    NotPositiveDefiniteError,
    SingularMatrixError,
    cholesky,
    dense_eig,
    dense_lu,
    generalized_eig,
    gmres,
    sparse_lu,
)

from .oracles import charpoly_roots, match_distance


def _rand_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# sparse LU

def test_sparse_lu_identity():
    b = np.array([1.0, -2.0 + 1j, 3.0])
    np.testing.assert_array_equal(sparse_lu(sp.identity(3)).solve(b), b)


def test_sparse_lu_two_by_two():
    x = sparse_lu(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]])).solve(np.array([3.0, 3.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_sparse_lu_random_dominant(seed):
    rng = np.random.default_rng(seed)
    A = _rand_complex(rng, 50, 50) * (rng.random((50, 50)) < 0.2)
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    lu = sparse_lu(sp.csr_matrix(A))
    b = _rand_complex(rng, 50)
    assert np.linalg.norm(A @ lu.solve(b) - b) <= 1e-10 * np.linalg.norm(b)
    B = _rand_complex(rng, 50, 4)
    X = lu.solve(B)
    assert np.linalg.norm(A @ X - B) <= 1e-10 * np.linalg.norm(B)


def test_sparse_lu_indefinite_needs_pivoting():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(sparse_lu(A).solve(np.array([2.0, 3.0])), [3.0, 2.0])


def test_sparse_lu_singular_reports_row():
    A = sp.csr_matrix(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(SingularMatrixError) as info:
        sparse_lu(A)
    assert info.value.row is not None


def test_sparse_lu_rejects_rectangular():
    with pytest.raises(ValueError):
        sparse_lu(sp.csr_matrix(np.ones((2, 3))))


# dense LU and Cholesky

def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))


def test_cholesky_hand():
    np.testing.assert_allclose(cholesky([[4.0, 2.0], [2.0, 3.0]]), [[2, 0], [1, np.sqrt(2)]], atol=1e-15)


def test_cholesky_reports_minor():
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, -1.0]]))
    assert info.value.minor == 3


@pytest.mark.parametrize("seed", range(3))
def test_dense_lu_reconstruction(seed):
    rng = np.random.default_rng(seed)
    A = _rand_complex(rng, 100, 100)
    f = dense_lu(A)
    P, L, U = f.factors()
    assert np.linalg.norm(P @ A - L @ U) <= 1e-12 * np.linalg.norm(A)
    b = _rand_complex(rng, 100)
    assert np.linalg.norm(A @ f.solve(b) - b) <= 1e-10 * np.linalg.norm(b)


# eigensolvers

def test_dense_eig_diagonal():
    pairs = dense_eig(np.diag([1, 2 + 1j, -3]))
    order = np.argsort(pairs.values.real)
    np.testing.assert_allclose(pairs.values[order], [-3, 1, 2 + 1j])
    np.testing.assert_allclose(np.abs(pairs.vectors[:, order]), np.eye(3)[:, [2, 0, 1]])


def test_dense_eig_companion():
    C = np.array([[3.0, -2.0], [1.0, 0.0]])
    assert match_distance(dense_eig(C).values, np.array([1.0, 2.0])) < 1e-14


@pytest.mark.parametrize("seed", [0, 1])
def test_dense_eig_against_characteristic_polynomial(seed):
    rng = np.random.default_rng(seed)
    B = _rand_complex(rng, 30, 30)
    pairs = dense_eig(B)
    assert match_distance(pairs.values, charpoly_roots(B)) <= 1e-6
    assert np.all(pairs.residuals(B) <= 1e-8)
    np.testing.assert_allclose(np.linalg.norm(pairs.vectors, axis=0), 1.0, rtol=1e-14)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40))
def test_eigenvalues_phase_similarity_invariant(seed, n):
    rng = np.random.default_rng(seed)
    B = _rand_complex(rng, n, n)
    d = np.exp(2j * np.pi * rng.random(n))
    B2 = (d[:, None] * B) / d[None, :]
    assert match_distance(dense_eig(B).values, dense_eig(B2).values) <= 1e-8 * max(1, np.abs(B).max() * n)


def test_generalized_identity_mass():
    rng = np.random.default_rng(3)
    S = _rand_complex(rng, 12, 12)
    S = S + S.T
    a, b = generalized_eig(S, np.eye(12)), dense_eig(S)
    assert match_distance(a.values, b.values) < 1e-12


def test_generalized_proportional():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((8, 8))
    M = X @ X.T + 8 * np.eye(8)
    pairs = generalized_eig(2 * M, M)
    np.testing.assert_allclose(pairs.values, 2.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_generalized_constructed_spectrum(seed):
    rng = np.random.default_rng(seed)
    n = 20
    X = rng.standard_normal((n, n))
    M = X @ X.T + n * np.eye(n)
    d = _rand_complex(rng, n)
    # S = M V diag(d) V^{-1} with V = M-orthonormal basis; take V from M^{-1/2}
    w, Q = np.linalg.eigh(M)
    Mh = Q @ np.diag(np.sqrt(w)) @ Q.T
    S = Mh @ np.diag(d) @ Mh
    pairs = generalized_eig(S, M)
    assert match_distance(pairs.values, d) <= 1e-8 * np.abs(d).max()
    assert np.all(pairs.residuals(S, M) <= 1e-8)


def test_generalized_requires_spd():
    with pytest.raises(NotPositiveDefiniteError):
        generalized_eig(np.eye(2), -np.eye(2))


# GMRES

def test_gmres_identity():
    b = np.array([1.0, 2.0, 3.0j])
    res = gmres(lambda v: v, lambda v: v, b)
    assert res.iterations == 1 and res.converged
    np.testing.assert_allclose(res.x, b)


def test_gmres_exact_preconditioner():
    rng = np.random.default_rng(0)
    A = sp.random(60, 60, density=0.1, random_state=1) * (1 + 1j) + 5 * sp.identity(60)
    A = A.tocsr()
    lu = sparse_lu(A)
    b = _rand_complex(rng, 60)
    res = gmres(lambda v: A @ v, lu.solve, b, rtol=1e-10)
    assert res.iterations == 1
    assert res.true_residual <= 1e-10


def test_gmres_two_eigenvalues():
    A = np.diag([2.0, 1.0])
    res = gmres(lambda v: A @ v, None, np.array([1.0, 1.0]), rtol=1e-12)
    assert res.iterations == 2 and res.converged
    np.testing.assert_allclose(res.x, [0.5, 1.0])


def test_gmres_zero_rhs():
    res = gmres(lambda v: v, None, np.zeros(4))
    assert res.iterations == 0 and res.converged
    np.testing.assert_array_equal(res.x, 0)


@pytest.mark.parametrize("seed", range(4))
def test_gmres_history_and_true_residual(seed):
    rng = np.random.default_rng(seed)
    n = 80
    A = np.eye(n) * 3 + _rand_complex(rng, n, n) / np.sqrt(n)
    Minv = np.linalg.inv(np.diag(np.diag(A)))
    b = _rand_complex(rng, n)
    res = gmres(lambda v: A @ v, lambda v: Minv @ v, b, rtol=1e-8)
    h = np.array(res.residuals)
    assert h[0] == 1.0
    assert np.all(np.diff(h) <= 1e-15)
    assert len(h) == res.iterations + 1
    true = np.linalg.norm(b - A @ res.x) / np.linalg.norm(b)
    assert abs(true - h[-1]) <= 1e-12
    assert abs(res.true_residual - true) <= 1e-14


def test_gmres_max_it_flagged():
    n = 50
    A = np.diag(np.arange(1, n + 1, dtype=float))
    res = gmres(lambda v: A @ v, None, np.ones(n), rtol=1e-14, max_it=5)
    assert res.iterations == 5 and not res.converged and not res.breakdown


def test_gmres_left_side():
    rng = np.random.default_rng(5)
    A = np.eye(30) * 4 + _rand_complex(rng, 30, 30) / 6
    b = _rand_complex(rng, 30)
    D = np.diag(1 / np.diag(A))
    res = gmres(lambda v: A @ v, lambda v: D @ v, b, rtol=1e-10, side="left")
    assert res.converged
    np.testing.assert_allclose(A @ res.x, b, atol=1e-7)


def test_gmres_breakdown_on_singular():
    A = np.diag([1.0, 0.0])
    res = gmres(lambda v: A @ v, None, np.array([1.0, 1.0]), rtol=1e-12)
    assert not res.converged
    assert res.breakdown


@pytest.mark.parametrize("kwargs", [dict(rtol=0.0), dict(side="middle")])
def test_gmres_argument_checks(kwargs):
    with pytest.raises(ValueError):
        gmres(lambda v: v, None, np.ones(2), **kwargs)


def test_history_csv(tmp_path):
    res = gmres(lambda v: np.diag([2.0, 1.0]) @ v, None, np.ones(2), rtol=1e-12)
    path = tmp_path / "h.csv"
    res.write_history(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,residual"
    assert len(lines) == res.iterations + 2
