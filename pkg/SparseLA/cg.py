# cg.py
# Description: Preconditioned conjugate gradient for SPD systems, and the adaptive-fill
# driver that pairs it with the Crout ILU.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from SparseLA.ilu import IluPreconditioner, as_sparse_spd, ilu_decompose
from Settings.config import SolverSettings
from Tools.errors import ConvergenceError, DimensionError, NanDetectedError, ZeroPivotError
from Tools.log_utils import TRACE
from Tools.safe_utils import RetryableError, safe_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CgResult:
    """Solution of A x = b with the iteration count and the final relative residual."""
    x: np.ndarray
    iterations: int
    residual: float

    def __iter__(self):
        # unpacks as (x, iterations, residual)
        return iter((self.x, self.iterations, self.residual))


def default_max_iter(n: int) -> int:
    """10 * sqrt(n) + 100"""
    return int(10 * math.sqrt(max(n, 1)) + 100)


def cg_solve(A, b: np.ndarray, precond: Optional[IluPreconditioner] = None, rel_tol: float = 1e-2,
             max_iter: Optional[int] = None, x0: Optional[np.ndarray] = None,
             residual_check: int = 25) -> CgResult:
    """
    Preconditioned conjugate gradient.

    Stops once ||A x - b|| / ||b|| <= rel_tol, confirmed on the true residual.
    The recurrence residual is also replaced by the true one every
    `residual_check` iterations.

    Args:
        A: Sparse SPD matrix (or anything supporting A @ v)
        b (np.ndarray): Right-hand side
        precond (IluPreconditioner, optional): Applied as z = (LU)^-1 r
        rel_tol (float): Relative residual target
        max_iter (int, optional): Defaults to 10 * sqrt(n) + 100
        x0 (np.ndarray, optional): Starting guess, zero by default
        residual_check (int): True-residual refresh period

    Returns:
        CgResult: Solution, iterations and final relative residual

    Raises:
        DimensionError: If A, b, x0 or the preconditioner disagree in size
        NanDetectedError: If the iterates stop being finite
        ConvergenceError: If max_iter is reached, or A p . p <= 0
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise DimensionError(f"cg_solve needs a square A and matching b, got A {A.shape} and b {b.shape}")
    if precond is not None and precond.n != n:
        raise DimensionError(f"Preconditioner has size {precond.n}, system has size {n}")
    if not rel_tol > 0:
        raise ValueError(f"rel_tol must be positive, got {rel_tol}")
    if max_iter is None:
        max_iter = default_max_iter(n)

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return CgResult(x=np.zeros(n), iterations=0, residual=0.0)
    if not np.isfinite(b_norm):
        raise NanDetectedError("Right-hand side is not finite", 0, None)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rel = np.linalg.norm(r) / b_norm
    if rel <= rel_tol:
        return CgResult(x=x, iterations=0, residual=float(rel))

    precondition = precond.solve if precond is not None else (lambda v: v.copy())
    z = precondition(r)
    p = z.copy()
    rz = r @ z

    for it in range(1, max_iter + 1):
        q = A @ p
        pq = p @ q
        if not np.isfinite(pq):
            raise NanDetectedError("CG produced a non-finite search direction", it, float(rel))
        if pq <= 0.0:
            raise ConvergenceError("CG met p.Ap <= 0: the matrix is not positive definite", it, float(rel))
        alpha = rz / pq
        x += alpha * p
        if it % residual_check == 0:
            r = b - A @ x
        else:
            r -= alpha * q
        rel = np.linalg.norm(r) / b_norm
        if not np.isfinite(rel):
            raise NanDetectedError("CG iterates are no longer finite", it, None)

        if rel <= rel_tol:
            true_rel = np.linalg.norm(b - A @ x) / b_norm
            if true_rel <= rel_tol:
                logger.log(TRACE, f"CG converged: n={n} iterations={it} residual={true_rel:.3e}")
                return CgResult(x=x, iterations=it, residual=float(true_rel))
            # recurrence drifted; continue from the true residual
            r = b - A @ x
            rel = true_rel

        z = precondition(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise ConvergenceError(f"CG did not reach rel_tol={rel_tol:g} on a system of size {n}",
                           max_iter, float(rel))


# ---------------------------------------------------------------------------
# adaptive fill
# ---------------------------------------------------------------------------

class FillSchedule:
    """Per-row ILU fill that doubles each time a solve fails, a bounded number of times."""

    def __init__(self, max_fill: int = 10, max_doublings: int = 4):
        self.max_fill = int(max_fill)
        self.doublings_left = int(max_doublings)

    @property
    def exhausted(self) -> bool:
        return self.doublings_left <= 0

    def escalate(self) -> int:
        self.max_fill *= 2
        self.doublings_left -= 1
        return self.max_fill


@dataclass(frozen=True)
class SpdSolve:
    """Outcome of `solve_spd`: the CG result and the preconditioner it finally used."""
    result: CgResult
    precond: IluPreconditioner


def solve_spd(A, b: np.ndarray, settings: Optional[SolverSettings] = None,
              precond: Optional[IluPreconditioner] = None, x0: Optional[np.ndarray] = None,
              rel_tol: Optional[float] = None, check_symmetry: bool = False) -> SpdSolve:
    """
    Solve an SPD system with CG + Crout ILU, doubling the ILU fill whenever the
    factorization hits a bad pivot or CG fails to converge.

    Args:
        A: Sparse SPD matrix
        b (np.ndarray): Right-hand side
        settings (SolverSettings, optional): drop_tol, max_fill, fill_doublings, tolerances
        precond (IluPreconditioner, optional): Cached factors to try first
        x0 (np.ndarray, optional): Starting guess
        rel_tol (float, optional): Overrides settings.cg_rel_tol

    Returns:
        SpdSolve: Result and the (possibly refactored) preconditioner

    Raises:
        ZeroPivotError: If the last factorization attempt still fails
        ConvergenceError: If CG fails with the largest allowed fill
    """
    settings = settings or SolverSettings()
    A = as_sparse_spd(A, check_symmetry=check_symmetry)
    tol = settings.cg_rel_tol if rel_tol is None else rel_tol
    start_fill = precond.max_fill if precond is not None else settings.max_fill
    schedule = FillSchedule(start_fill, settings.fill_doublings)
    state = {'precond': precond}

    def escalate(exc, fn_name, args, kwargs):
        if schedule.exhausted:
            return
        old = schedule.max_fill
        new = schedule.escalate()
        state['precond'] = None
        logger.warning(f"{type(exc).__name__} with ILU fill {old}; retrying with fill {new}")
        raise RetryableError(str(exc))

    @safe_for(ConvergenceError, ZeroPivotError, handler=escalate,
              max_retries=settings.fill_doublings, reraise=True)
    def attempt() -> CgResult:
        if state['precond'] is None:
            state['precond'] = ilu_decompose(A, settings.drop_tol, schedule.max_fill)
        return cg_solve(A, b, state['precond'], rel_tol=tol, max_iter=settings.max_iter(A.shape[0]),
                        x0=x0, residual_check=settings.residual_check)

    result = attempt()
    return SpdSolve(result=result, precond=state['precond'])
