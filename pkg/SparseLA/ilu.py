# ilu.py
# Description: Crout incomplete LU factorization with threshold dropping and a per-row fill
# cap, specialized to symmetric positive definite matrices, plus the triangular solves
# that apply it as a CG preconditioner.

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import LinearOperator

from Tools.errors import DimensionError, ZeroPivotError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


# ---------------------------------------------------------------------------
# input validation
# ---------------------------------------------------------------------------

def as_sparse_spd(A, check_symmetry: bool = True) -> sp.csr_matrix:
    """
    Return A as a sorted CSR matrix after checking it looks SPD.

    Only the cheap necessary conditions are checked: square, symmetric within
    1e-10 (relative to the largest entry) and a strictly positive diagonal.

    Raises:
        DimensionError: If A is not square
        ValueError: If A is not symmetric or has a non-positive diagonal entry
    """
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"SPD matrix must be square, got {A.shape}")
    A.sum_duplicates()
    A.sort_indices()
    diag = A.diagonal()
    if np.any(~(diag > 0)):
        row = int(np.flatnonzero(~(diag > 0))[0])
        raise ValueError(f"SPD matrix needs a strictly positive diagonal: A[{row},{row}] = {diag[row]}")
    if check_symmetry and A.nnz:
        asym = abs(A - A.T).max()
        scale = max(abs(A).max(), 1.0)
        if asym > SYMMETRY_TOL * scale:
            raise ValueError(f"Matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    return A


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _crout_factor(indptr, indices, data, n, drop_tol, max_fill):
    """
    Rows of U (diagonal first, then strictly-upper columns ascending) for the
    symmetric Crout ILU; L is implied as (D^-1 U)^T.

    Returns (u_ptr, u_idx, u_val, bad_row, bad_pivot); bad_row = -1 on success.
    """
    capacity = n * (max_fill + 1)
    u_ptr = np.zeros(n + 1, dtype=np.int64)
    u_idx = np.empty(capacity, dtype=np.int64)
    u_val = np.empty(capacity, dtype=np.float64)

    work = np.zeros(n, dtype=np.float64)
    marker = np.full(n, -1, dtype=np.int64)
    row_cols = np.empty(n, dtype=np.int64)

    # linked lists of earlier rows whose next stored entry sits in column c
    head = np.full(n, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    pos = np.zeros(n, dtype=np.int64)

    nnz = 0
    for k in range(n):
        count = 0
        row_norm = 0.0
        for p in range(indptr[k], indptr[k + 1]):
            j = indices[p]
            v = data[p]
            row_norm += v * v
            if j >= k:
                if marker[j] != k:
                    marker[j] = k
                    work[j] = 0.0
                    row_cols[count] = j
                    count += 1
                work[j] += v
        row_norm = np.sqrt(row_norm)
        if marker[k] != k:
            marker[k] = k
            work[k] = 0.0
            row_cols[count] = k
            count += 1

        i = head[k]
        head[k] = -1
        while i != -1:
            next_i = nxt[i]
            p = pos[i]
            l_ki = u_val[p] / u_val[u_ptr[i]]
            for q in range(p, u_ptr[i + 1]):
                j = u_idx[q]
                if marker[j] != k:
                    marker[j] = k
                    work[j] = 0.0
                    row_cols[count] = j
                    count += 1
                work[j] -= l_ki * u_val[q]
            p += 1
            if p < u_ptr[i + 1]:
                pos[i] = p
                c = u_idx[p]
                nxt[i] = head[c]
                head[c] = i
            i = next_i

        pivot = work[k]
        if not (pivot > 0.0) or not np.isfinite(pivot):
            return u_ptr, u_idx[:nnz], u_val[:nnz], k, pivot

        tau = drop_tol * row_norm
        n_keep = 0
        for t in range(count):
            j = row_cols[t]
            if j != k and work[j] != 0.0 and abs(work[j]) >= tau:
                row_cols[n_keep] = j
                n_keep += 1
        kept = row_cols[:n_keep].copy()
        if n_keep > max_fill:
            mags = np.empty(n_keep, dtype=np.float64)
            for t in range(n_keep):
                mags[t] = -abs(work[kept[t]])
            order = np.argsort(mags, kind='mergesort')
            kept = kept[order[:max_fill]]
        kept = np.sort(kept)

        u_idx[nnz] = k
        u_val[nnz] = pivot
        nnz += 1
        for t in range(kept.size):
            u_idx[nnz] = kept[t]
            u_val[nnz] = work[kept[t]]
            nnz += 1
        u_ptr[k + 1] = nnz

        if kept.size > 0:
            pos[k] = u_ptr[k] + 1
            c = u_idx[pos[k]]
            nxt[k] = head[c]
            head[c] = k

    return u_ptr, u_idx[:nnz], u_val[:nnz], -1, 0.0


@njit(cache=True, nogil=True)
def _apply_factors(u_ptr, u_idx, u_val, v):
    """Solve L U z = v with L = (D^-1 U)^T unit lower and U stored row-wise."""
    n = u_ptr.size - 1
    w = v.copy()
    # forward: columns of L are the scaled rows of U
    for i in range(n):
        start = u_ptr[i]
        wi = w[i] / u_val[start]
        for q in range(start + 1, u_ptr[i + 1]):
            w[u_idx[q]] -= u_val[q] * wi
    # backward
    z = np.empty(n, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        start = u_ptr[i]
        acc = w[i]
        for q in range(start + 1, u_ptr[i + 1]):
            acc -= u_val[q] * z[u_idx[q]]
        z[i] = acc / u_val[start]
    return z


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IluPreconditioner:
    """
    Incomplete factors A ~ L U of an SPD matrix.

    U is stored row-wise with its diagonal first in each row; L has a unit
    diagonal and equals (D^-1 U)^T, where D = diag(U).
    """
    u_indptr: np.ndarray
    u_indices: np.ndarray
    u_data: np.ndarray
    drop_tol: float
    max_fill: int

    @property
    def n(self) -> int:
        return self.u_indptr.size - 1

    @property
    def nnz(self) -> int:
        """Stored entries of L plus U (shared off-diagonal pattern, unit L diagonal)."""
        return 2 * self.u_data.size - self.n

    @property
    def upper(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.u_data, self.u_indices, self.u_indptr), shape=(self.n, self.n))

    @property
    def lower(self) -> sp.csr_matrix:
        U = self.upper
        D_inv = sp.diags(1.0 / U.diagonal())
        L = (D_inv @ U).T.tocsr()
        L.sort_indices()
        return L

    def solve(self, v: np.ndarray) -> np.ndarray:
        """z = (L U)^-1 v"""
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise DimensionError(f"Preconditioner of size {self.n} applied to a vector of shape {v.shape}")
        return _apply_factors(self.u_indptr, self.u_indices, self.u_data, v)

    def as_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.solve, dtype=np.float64)


def ilu_decompose(A, drop_tol: float = 1e-3, max_fill: int = 10) -> IluPreconditioner:
    """
    Crout ILU of a symmetric positive definite matrix.

    Args:
        A: Sparse SPD matrix (anything scipy.sparse.csr_matrix accepts)
        drop_tol (float): Entries below drop_tol * ||row of A||_2 are discarded
        max_fill (int): Largest off-diagonal entries kept per row of U

    Returns:
        IluPreconditioner: The incomplete factors

    Raises:
        ZeroPivotError: If a pivot is zero, negative or not finite
    """
    if drop_tol < 0 or not np.isfinite(drop_tol):
        raise ValueError(f"drop_tol must be a non-negative finite number, got {drop_tol}")
    if max_fill < 0:
        raise ValueError(f"max_fill must be non-negative, got {max_fill}")
    A = as_sparse_spd(A, check_symmetry=False)
    n = A.shape[0]
    u_ptr, u_idx, u_val, bad_row, bad_pivot = _crout_factor(
        A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, n, float(drop_tol), int(max_fill)
    )
    if bad_row >= 0:
        raise ZeroPivotError(bad_row, bad_pivot)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Crout ILU n={n} drop_tol={drop_tol:g} max_fill={max_fill}: "
                     f"nnz(U)={u_val.size} (A upper nnz={(A.nnz + n) // 2})")
    return IluPreconditioner(u_indptr=u_ptr, u_indices=u_idx.copy(), u_data=u_val.copy(),
                             drop_tol=float(drop_tol), max_fill=int(max_fill))

