# snr.py
# Description: Mean squared error of the OLE, trace(A^-1), and the signal-to-noise ratio
# built from it, including the diagonal (resolved-array) limit.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from Estimator.moments import MomentModel, prior_moments
from Forward.measurement_matrix import MeasurementMatrix, build_measurement_matrix
from Model.scenario import ArrayGeometry, BrightnessModel, PsfModel
from Settings.config import SolverSettings
from SparseLA.cg import solve_spd

logger = logging.getLogger(__name__)

EXACT_BLOCK = 256
SAMPLE_REL_TOL = 1e-8


@dataclass(frozen=True)
class MseReport:
    """trace(A^-1) and how it was obtained."""
    value: float
    method: str                      # 'exact' or 'stochastic'
    samples: int = 0
    rel_error: float = 0.0           # standard error / estimate, stochastic only

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def information_matrix(M: MeasurementMatrix, moments: MomentModel) -> sp.csc_matrix:
    """A = M^T Sn^-1 M + Sx^-1 with the full diagonal noise variance."""
    var_n = moments.noise_diagonal(M.n_pixels)
    # pixels with var_n = 0 carry no site weight
    inv_n = np.divide(1.0, var_n, out=np.zeros_like(var_n), where=var_n > 0)
    A = M.matrix.T @ sp.diags(inv_n) @ M.matrix + sp.diags(1.0 / moments.var_x)
    A = sp.csc_matrix(A)
    return ((A + A.T) * 0.5).tocsc()


def weighted_gram_diagonal(M: MeasurementMatrix, moments: MomentModel) -> np.ndarray:
    """G_ii = sum_p M_pi^2 / var_n_p"""
    var_n = moments.noise_diagonal(M.n_pixels)
    inv_n = np.divide(1.0, var_n, out=np.zeros_like(var_n), where=var_n > 0)
    return np.asarray(M.matrix.multiply(M.matrix).T @ inv_n).ravel()


def _exact_trace_inverse(A: sp.csc_matrix) -> float:
    n = A.shape[0]
    lu = splu(A)
    total = 0.0
    for start in range(0, n, EXACT_BLOCK):
        stop = min(start + EXACT_BLOCK, n)
        block = np.zeros((n, stop - start))
        block[np.arange(start, stop), np.arange(stop - start)] = 1.0
        solved = lu.solve(block)
        total += float(np.sum(solved[np.arange(start, stop), np.arange(stop - start)]))
    return total


def _stochastic_trace_inverse(A: sp.csc_matrix, settings: SolverSettings, seed: int) -> MseReport:
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    A = A.tocsr()
    draws = np.empty(settings.trace_samples)
    precond = None
    for j in range(settings.trace_samples):
        z = rng.integers(0, 2, n).astype(float) * 2.0 - 1.0
        solved = solve_spd(A, z, settings=settings, precond=precond, rel_tol=SAMPLE_REL_TOL)
        precond = solved.precond
        draws[j] = z @ solved.result.x
    estimate = float(draws.mean())
    rel_error = float(draws.std(ddof=1) / math.sqrt(draws.size) / estimate)
    if rel_error > settings.trace_rel_err:
        logger.warning(f"Stochastic trace relative error {rel_error:.2%} exceeds the "
                       f"{settings.trace_rel_err:.0%} target with {draws.size} samples")
    return MseReport(value=estimate, method='stochastic', samples=draws.size, rel_error=rel_error)


def ole_mse_report(M: MeasurementMatrix, moments: MomentModel, settings: Optional[SolverSettings] = None,
                   seed: int = 0) -> MseReport:
    """
    MSE of the OLE, trace[(I - H M) Sx] = trace(A^-1).

    Exact (sparse LU, column blocks) up to settings.trace_exact_limit sites;
    Hutchinson's estimator with Rademacher vectors above it.
    """
    settings = settings or SolverSettings()
    A = information_matrix(M, moments)
    if A.shape[0] <= settings.trace_exact_limit:
        report = MseReport(value=_exact_trace_inverse(A), method='exact')
    else:
        report = _stochastic_trace_inverse(A, settings, seed)
    logger.debug(f"OLE MSE ({report.method}) = {report.value:.6g} over {A.shape[0]} sites")
    return report


def ole_mse(M: MeasurementMatrix, moments: MomentModel, settings: Optional[SolverSettings] = None) -> float:
    return ole_mse_report(M, moments, settings).value


def snr_db(n_sites: int, mu: float, mse: float) -> float:
    """10 log10(N_s mu^2 / MSE)"""
    if mu == 0:
        return float('-inf')
    return 10.0 * math.log10(n_sites * mu ** 2 / mse)


def snr(model: BrightnessModel, geometry: ArrayGeometry, psf: PsfModel,
        settings: Optional[SolverSettings] = None, M: Optional[MeasurementMatrix] = None) -> float:
    """
    Signal-to-noise ratio (dB) of the a priori OLE for this scenario.

    Args:
        model (BrightnessModel): Brightness and noise statistics
        geometry (ArrayGeometry): Site grid
        psf (PsfModel): PSF
        settings (SolverSettings, optional): Trace strategy knobs
        M (MeasurementMatrix, optional): Cached matrix for (geometry, psf)

    Returns:
        float: SNR in dB
    """
    if M is None:
        M = build_measurement_matrix(geometry, psf)
    moments = prior_moments(model, M)
    return snr_db(geometry.n_sites, model.mu, ole_mse(M, moments, settings))


def printed_limit_mse(g_diag: np.ndarray, inv_var_x: np.ndarray) -> float:
    """Sum of 1 - G_ii Sx^-1_ii / (G_ii + Sx^-1_ii), the alternative summand for the diagonal limit."""
    return float(np.sum(1.0 - g_diag * inv_var_x / (g_diag + inv_var_x)))


def snr_resolved_limit(model: BrightnessModel, geometry: ArrayGeometry, psf: PsfModel,
                       M: Optional[MeasurementMatrix] = None) -> float:
    """
    SNR (dB) with the weighted Gram matrix reduced to its diagonal:
    MSE = sum_i 1 / (G_ii + 1/var_x_i).
    """
    if M is None:
        M = build_measurement_matrix(geometry, psf)
    moments = prior_moments(model, M)
    g_diag = weighted_gram_diagonal(M, moments)
    inv_var_x = 1.0 / moments.var_x
    mse = float(np.sum(1.0 / (g_diag + inv_var_x)))
    if logger.isEnabledFor(logging.DEBUG):
        printed = printed_limit_mse(g_diag, inv_var_x)
        logger.debug(f"Diagonal-limit MSE {mse:.6g}; alternative summand gives {printed:.6g} "
                     f"({snr_db(geometry.n_sites, model.mu, printed) if printed > 0 else float('nan'):.3f} dB)")
    return snr_db(geometry.n_sites, model.mu, mse)
