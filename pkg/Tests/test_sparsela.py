import numpy as np
import pytest
import scipy.sparse as sp

from Settings import SolverSettings
from SparseLA import (FillSchedule, as_sparse_spd, cg_solve, default_max_iter, ilu_decompose, solve_spd)
from Tools.errors import ConvergenceError, DimensionError, ZeroPivotError


def laplacian_2d(n, shift=0.0):
    """5-point Laplacian on an n x n grid plus shift * I (SPD)."""
    T = sp.diags([-np.ones(n - 1), 4 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    S = sp.diags([-np.ones(n - 1), -np.ones(n - 1)], [-1, 1])
    A = sp.kron(sp.identity(n), T) + sp.kron(S, sp.identity(n)) + shift * sp.identity(n * n)
    return A.tocsr()


def random_spd(n, rng, density=0.05):
    B = sp.random(n, n, density=density, random_state=rng, format='csr')
    return (B @ B.T + sp.identity(n) * 0.5).tocsr()


# ---------------------------------------------------------------------------
# ILU
# ---------------------------------------------------------------------------

def test_ilu_is_exact_on_tridiagonal():
    n = 30
    A = sp.diags([-np.ones(n - 1), 3 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
    factors = ilu_decompose(A, drop_tol=0.0, max_fill=5)
    product = (factors.lower @ factors.upper).toarray()
    np.testing.assert_allclose(product, A.toarray(), atol=1e-12)


def test_ilu_factor_structure():
    A = laplacian_2d(6, shift=0.1)
    factors = ilu_decompose(A, drop_tol=1e-3, max_fill=4)
    U = factors.upper.toarray()
    L = factors.lower.toarray()
    assert np.allclose(np.tril(U, -1), 0)
    assert np.allclose(np.triu(L, 1), 0)
    np.testing.assert_allclose(np.diag(L), 1.0)
    assert np.all(np.diag(U) > 0)
    # at most max_fill off-diagonal entries per row of U
    assert np.max(np.diff(factors.upper.indptr)) <= 4 + 1


def test_ilu_solve_is_exact_for_complete_factorization(rng):
    A = laplacian_2d(5, shift=1.0)
    factors = ilu_decompose(A, drop_tol=0.0, max_fill=A.shape[0])
    v = rng.normal(size=A.shape[0])
    np.testing.assert_allclose(A @ factors.solve(v), v, atol=1e-10)
    np.testing.assert_allclose(factors.as_operator() @ v, factors.solve(v))


def test_ilu_zero_pivot_on_indefinite_matrix():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ZeroPivotError) as info:
        ilu_decompose(A, drop_tol=0.0, max_fill=2)
    assert info.value.row == 1


def test_as_sparse_spd_validation():
    with pytest.raises(DimensionError):
        as_sparse_spd(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError, match='diagonal'):
        as_sparse_spd(sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]])))
    with pytest.raises(ValueError, match='symmetric'):
        as_sparse_spd(sp.csr_matrix(np.array([[1.0, 0.5], [0.0, 1.0]])))


# ---------------------------------------------------------------------------
# CG
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('seed', [0, 1, 2])
def test_pcg_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    A = random_spd(120, rng)
    b = rng.normal(size=120)
    exact = np.linalg.solve(A.toarray(), b)
    rel_tol = 1e-6
    x, iterations, residual = cg_solve(A, b, ilu_decompose(A, 1e-3, 10), rel_tol=rel_tol, max_iter=1000)
    assert residual <= rel_tol
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= rel_tol
    # error bounded by the condition number times the residual
    cond = np.linalg.cond(A.toarray())
    assert np.linalg.norm(x - exact) / np.linalg.norm(exact) <= cond * rel_tol
    assert iterations >= 1


def test_preconditioning_reduces_iterations(rng):
    A = laplacian_2d(20, shift=0.01)
    b = rng.normal(size=A.shape[0])
    plain = cg_solve(A, b, None, rel_tol=1e-8, max_iter=2000)
    pre = cg_solve(A, b, ilu_decompose(A, 1e-4, 10), rel_tol=1e-8, max_iter=2000)
    assert pre.iterations < plain.iterations


def test_cg_zero_rhs():
    result = cg_solve(laplacian_2d(3), np.zeros(9))
    assert result.iterations == 0
    assert np.all(result.x == 0)


def test_cg_identity_converges_in_one_iteration(rng):
    b = rng.normal(size=40)
    result = cg_solve(sp.identity(40, format='csr'), b, None, rel_tol=1e-12)
    assert result.iterations == 1
    np.testing.assert_allclose(result.x, b, rtol=1e-14)


def test_cg_diagonal_with_exact_preconditioner_converges_in_one_iteration(rng):
    d = rng.uniform(0.5, 50.0, size=40)
    A = sp.diags(d).tocsr()
    b = rng.normal(size=40)
    result = cg_solve(A, b, ilu_decompose(A, drop_tol=0.0, max_fill=1), rel_tol=1e-10)
    assert result.iterations == 1
    np.testing.assert_allclose(result.x, b / d, rtol=1e-12)


def test_cg_detects_indefinite_matrix():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConvergenceError):
        cg_solve(A, np.array([1.0, 0.0]), rel_tol=1e-12, max_iter=10)


def test_cg_reports_iteration_cap(rng):
    A = laplacian_2d(15, shift=1e-4)
    with pytest.raises(ConvergenceError) as info:
        cg_solve(A, rng.normal(size=A.shape[0]), rel_tol=1e-12, max_iter=3)
    assert info.value.iterations == 3


def test_cg_dimension_checks():
    A = laplacian_2d(3)
    with pytest.raises(DimensionError):
        cg_solve(A, np.ones(4))
    with pytest.raises(DimensionError):
        cg_solve(A, np.ones(9), precond=ilu_decompose(laplacian_2d(2)))


def test_default_max_iter():
    assert default_max_iter(10_000) == 1100
    assert SolverSettings().max_iter(2500) == 600


# ---------------------------------------------------------------------------
# adaptive fill
# ---------------------------------------------------------------------------

def test_fill_schedule_doubles_until_exhausted():
    schedule = FillSchedule(max_fill=10, max_doublings=2)
    assert schedule.escalate() == 20
    assert schedule.escalate() == 40
    assert schedule.exhausted


def test_solve_spd_converges_and_returns_factors(rng):
    A = laplacian_2d(12, shift=0.05)
    b = rng.normal(size=A.shape[0])
    solved = solve_spd(A, b, SolverSettings(cg_rel_tol=1e-8))
    assert solved.result.residual <= 1e-8
    assert solved.precond is not None
    again = solve_spd(A, b, SolverSettings(cg_rel_tol=1e-8), precond=solved.precond)
    np.testing.assert_array_equal(again.result.x, solved.result.x)


def test_solve_spd_gives_up_after_all_doublings():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises((ZeroPivotError, ConvergenceError)):
        solve_spd(A, np.array([1.0, 0.0]), SolverSettings(drop_tol=0.0, fill_doublings=1))
