# ole.py
# Description: The optimal linear estimator (generalized Wiener filter) solved as a sparse
# SPD system, and dense closed-form versions of it used as reference oracles.

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from Estimator.moments import MomentFlavor, MomentModel
from Forward.measurement_matrix import GramMatrix, MeasurementMatrix
from Model.synthetic import ImageSample
from Settings.config import SolverSettings
from SparseLA.cg import solve_spd
from SparseLA.ilu import IluPreconditioner
from Tools.errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OleSolution:
    """Estimated brightnesses and how the solver got there."""
    x_hat: np.ndarray
    cg_iterations: int
    residual: float
    flavor: MomentFlavor
    precond: Optional[IluPreconditioner] = field(default=None, repr=False, compare=False)


def ole_system(gram: GramMatrix, moments: MomentModel) -> Tuple[sp.csr_matrix, float]:
    """
    System matrix of the OLE in the scalar-noise approximation, scaled by Sigma_n:

        Sigma_n * A = Gram + diag(Sigma_n / var_x)

    Returns:
        tuple: (scaled CSR matrix, Sigma_n)
    """
    if gram.n_sites != moments.n_sites:
        raise DimensionError(f"Gram matrix has {gram.n_sites} sites, moments have {moments.n_sites}")
    sigma_n = moments.sigma_n
    A = (gram.matrix + sp.diags(sigma_n / moments.var_x)).tocsr()
    A.sort_indices()
    return A, sigma_n


def _pixels(y: Union[ImageSample, np.ndarray]) -> np.ndarray:
    return y.pixels_y if isinstance(y, ImageSample) else np.asarray(y, dtype=float).ravel()


def ole_estimate(y: Union[ImageSample, np.ndarray], M: MeasurementMatrix, gram: GramMatrix,
                 moments: MomentModel, settings: Optional[SolverSettings] = None,
                 precond: Optional[IluPreconditioner] = None,
                 system: Optional[sp.csr_matrix] = None) -> OleSolution:
    """
    Apply the OLE to a background-subtracted image.

    Solves A (x_hat - <x>) = b with A = Gram / Sigma_n + diag(var_x)^-1 and
    b = M^T (y - M <x>) / Sigma_n, where Sigma_n is the mean of var_n. Both
    sides are multiplied by Sigma_n before solving, which leaves the relative
    residual unchanged.

    Args:
        y (ImageSample | np.ndarray): Pixels with the background k already removed
        M (MeasurementMatrix): Forward operator
        gram (GramMatrix): M^T M
        moments (MomentModel): Prior or posterior moments
        settings (SolverSettings, optional): Solver knobs
        precond (IluPreconditioner, optional): Cached factors of the same system
        system (csr_matrix, optional): Cached output of `ole_system`

    Returns:
        OleSolution: x_hat, CG iterations, residual, flavor and the preconditioner used

    Raises:
        ConvergenceError: If CG fails at every allowed ILU fill
    """
    y_vec = _pixels(y)
    if y_vec.size != M.n_pixels:
        raise DimensionError(f"Image has {y_vec.size} pixels, M expects {M.n_pixels}")
    if system is None:
        system, _ = ole_system(gram, moments)
    rhs = M.rdot(y_vec - M.dot(moments.mean_x))
    solved = solve_spd(system, rhs, settings=settings, precond=precond)
    x_hat = moments.mean_x + solved.result.x
    return OleSolution(x_hat=x_hat, cg_iterations=solved.result.iterations,
                       residual=solved.result.residual, flavor=moments.flavor, precond=solved.precond)


# ---------------------------------------------------------------------------
# dense oracles (small instances only)
# ---------------------------------------------------------------------------

def _dense_parts(M: Union[MeasurementMatrix, np.ndarray], moments: MomentModel,
                 scalar_noise: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    Md = M.matrix.toarray() if isinstance(M, MeasurementMatrix) else np.asarray(M, dtype=float)
    var_n = (np.full(Md.shape[0], moments.sigma_n) if scalar_noise
             else moments.noise_diagonal(Md.shape[0]))
    return Md, var_n, moments.var_x


def dense_ole_operator(M, moments: MomentModel, scalar_noise: bool = False) -> np.ndarray:
    """H = (M^T Sn^-1 M + Sx^-1)^-1 M^T Sn^-1"""
    Md, var_n, var_x = _dense_parts(M, moments, scalar_noise)
    weighted = Md.T / var_n
    A = weighted @ Md + np.diag(1.0 / var_x)
    return scipy.linalg.solve(A, weighted, assume_a='pos')


def dense_woodbury_operator(M, moments: MomentModel, scalar_noise: bool = False) -> np.ndarray:
    """H = Sx M^T (M Sx M^T + Sn)^-1"""
    Md, var_n, var_x = _dense_parts(M, moments, scalar_noise)
    SxMt = var_x[:, None] * Md.T
    C = Md @ SxMt + np.diag(var_n)
    # H = SxMt C^-1, C symmetric, so solve C H^T = (SxMt)^T
    return scipy.linalg.solve(C, SxMt.T, assume_a='pos').T


def dense_mse(M, moments: MomentModel, scalar_noise: bool = False) -> float:
    """trace[(I - H M) Sx]"""
    Md, _, var_x = _dense_parts(M, moments, scalar_noise)
    H = dense_ole_operator(M, moments, scalar_noise)
    return float(np.trace((np.eye(var_x.size) - H @ Md) * var_x[None, :]))


def dense_ole_estimate(y, M, moments: MomentModel, scalar_noise: bool = True) -> np.ndarray:
    """<x> + H (y - M <x>), with the scalar-noise H that `ole_estimate` solves for."""
    Md = M.matrix.toarray() if isinstance(M, MeasurementMatrix) else np.asarray(M, dtype=float)
    H = dense_ole_operator(Md, moments, scalar_noise)
    return moments.mean_x + H @ (_pixels(y) - Md @ moments.mean_x)
