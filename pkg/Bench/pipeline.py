# pipeline.py
# Description: Per-image estimation with cached calibration objects: the a priori OLE,
# the a posteriori OLE, the deconvolution baseline, and the detection step after each.

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import scipy.sparse as sp

from Bench.records import EstimatorKind
from Deconv.wiener import deconv_estimate
from Detect.detection import (DetectionResult, ThresholdMode, classify_and_score, gmm_threshold,
                              oracle_threshold)
from Estimator.moments import MomentModel, posterior_moments
from Estimator.ole import ole_estimate, ole_system
from Forward.measurement_matrix import GramMatrix, MeasurementMatrix, build_gram, build_measurement_matrix
from Learn.gmm import posterior_probabilities
from Learn.tuning import LearnedModel, calibrate, tuned_prior_moments
from Model.scenario import ArrayGeometry, PsfModel
from Model.synthetic import GroundTruth, ImageSample
from Settings.config import SolverSettings
from SparseLA.ilu import IluPreconditioner, ilu_decompose
from Tools.errors import ThresholdError, ZeroPivotError
from Tools.safe_utils import safe_for

logger = logging.getLogger(__name__)


@dataclass
class CalibrationCache:
    """
    Everything reused across images of one scenario cell: the forward operator
    and its Gram matrix for the assumed calibration, the learned parameters, and
    the a priori OLE system with its ILU factors. Read-only once built.
    """
    geometry: ArrayGeometry
    psf: PsfModel
    k: float
    r: float
    M: MeasurementMatrix = field(repr=False)
    gram: GramMatrix = field(repr=False)
    learned: LearnedModel
    settings: SolverSettings = field(default_factory=SolverSettings)
    prior: Optional[MomentModel] = field(default=None, repr=False)
    prior_system: Optional[sp.csr_matrix] = field(default=None, repr=False)
    prior_precond: Optional[IluPreconditioner] = field(default=None, repr=False)

    @classmethod
    def build(cls, image: ImageSample, geometry: ArrayGeometry, psf: PsfModel, k: float, r: float,
              settings: Optional[SolverSettings] = None, gmm_enabled: bool = True,
              learned: Optional[LearnedModel] = None, M: Optional[MeasurementMatrix] = None,
              gram: Optional[GramMatrix] = None) -> 'CalibrationCache':
        """
        Assemble M and Gram for the assumed (geometry, psf), calibrate on `image`
        unless a LearnedModel is supplied, and factor the a priori system.
        """
        settings = settings or SolverSettings()
        M = M if M is not None else build_measurement_matrix(geometry, psf)
        gram = gram if gram is not None else build_gram(M)
        if learned is None:
            learned = calibrate(image, M, gram, geometry, psf, k, r, settings=settings, gmm_enabled=gmm_enabled)
        cache = cls(geometry=geometry, psf=psf, k=k, r=r, M=M, gram=gram, learned=learned, settings=settings)
        cache.prior = tuned_prior_moments(learned, M, k, r)
        cache.prior_system, _ = ole_system(gram, cache.prior)
        # a failed factorization is redone by the solver with more fill
        factor = safe_for(ZeroPivotError, default=None)(ilu_decompose)
        cache.prior_precond = factor(cache.prior_system, settings.drop_tol, settings.max_fill)
        if logger.isEnabledFor(logging.DEBUG):
            nnz = cache.prior_precond.nnz if cache.prior_precond is not None else 0
            logger.debug(f"Calibration cache ready: {M.n_sites} sites, {M.nnz} nonzeros in M, "
                         f"{nnz} in the prior ILU factors")
        return cache

    @property
    def posterior_available(self) -> bool:
        return self.learned.gmm is not None and self.learned.mu > 0


# ---------------------------------------------------------------------------
# per-image estimation
# ---------------------------------------------------------------------------

@dataclass
class EstimateReport:
    """Result of one estimator on one image."""
    estimator: EstimatorKind
    x_hat: np.ndarray
    detection: DetectionResult
    runtime_ms: float
    cg_iterations: int = 0
    probabilities: Optional[np.ndarray] = None
    gmm_detection: Optional[DetectionResult] = None
    seed: Optional[int] = None

    @property
    def der(self) -> float:
        return self.detection.der

    @property
    def gmm_der(self) -> float:
        return self.gmm_detection.der if self.gmm_detection is not None else float('nan')

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data = {
            'estimator': self.estimator.value,
            'seed': self.seed,
            'x_hat': self.x_hat.tolist(),
            'probabilities': self.probabilities.tolist() if self.probabilities is not None else None,
            'labels': self.detection.labels.astype(int).tolist(),
            'detection': self.detection.to_dict(),
            'gmm_detection': self.gmm_detection.to_dict() if self.gmm_detection is not None else None,
            'cg_iterations': self.cg_iterations,
        }
        if include_timing:
            data['runtime_ms'] = self.runtime_ms
        return data

    def save(self, path: Union[str, Path], include_timing: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(include_timing), f, indent=2, allow_nan=True)
        return path


def _prior_ole(pixels: np.ndarray, cache: CalibrationCache):
    return ole_estimate(pixels, cache.M, cache.gram, cache.prior, settings=cache.settings,
                        precond=cache.prior_precond, system=cache.prior_system)


def _posterior_ole(pixels: np.ndarray, cache: CalibrationCache):
    """Two passes: a priori estimate, mixture responsibilities, then the a posteriori OLE."""
    first = _prior_ole(pixels, cache)
    if not cache.posterior_available:
        logger.warning("No mixture model learned; the a posteriori OLE falls back to the a priori estimate")
        return first.x_hat, first.cg_iterations, None
    learned = cache.learned
    eps = cache.settings.prob_eps
    probs = posterior_probabilities(first.x_hat, learned.gmm, eps=eps)
    moments = posterior_moments(probs, learned.mu, learned.sigma, cache.M, cache.k, cache.r, eps=eps)
    second = ole_estimate(pixels, cache.M, cache.gram, moments, settings=cache.settings)
    return second.x_hat, first.cg_iterations + second.cg_iterations, probs


def _detect(x_hat: np.ndarray, cache: CalibrationCache, truth: Optional[GroundTruth]) -> tuple:
    """
    Oracle threshold when the truth is known, the mixture's equal-likelihood
    threshold otherwise (and as a second opinion when both are available).
    Without either, sites are split at the midpoint of the estimate range.
    """
    gmm_result = None
    if cache.learned.gmm is not None:
        try:
            threshold = gmm_threshold(cache.learned.gmm)
            gmm_result = classify_and_score(x_hat, threshold, truth, ThresholdMode.GMM)
        except ThresholdError as e:
            logger.warning(f"Mixture threshold unavailable: {e}")
    if truth is not None:
        return oracle_threshold(x_hat, truth), gmm_result
    if gmm_result is not None:
        return gmm_result, None
    threshold = 0.5 * (float(np.min(x_hat)) + float(np.max(x_hat)))
    return classify_and_score(x_hat, threshold, None, ThresholdMode.FIXED), None


def estimate_image(image: ImageSample, cache: CalibrationCache, estimator: EstimatorKind,
                   truth: Optional[GroundTruth] = None) -> EstimateReport:
    """
    Run one estimator on one image and classify the result.

    The runtime covers the estimator only; the cached matrices, factors and
    hyperparameters are excluded, as is the detection step.

    Args:
        image (ImageSample): Image to reconstruct
        cache (CalibrationCache): Calibration objects for this scenario
        estimator (EstimatorKind): prior, posterior or deconv
        truth (GroundTruth, optional): Labels for oracle scoring; defaults to image.truth

    Returns:
        EstimateReport: Estimates, detection and timing
    """
    truth = truth if truth is not None else image.truth
    pixels = image.background_subtracted(cache.k)
    probs, iterations = None, 0
    start = time.perf_counter()
    if estimator is EstimatorKind.PRIOR:
        solution = _prior_ole(pixels, cache)
        x_hat, iterations = solution.x_hat, solution.cg_iterations
    elif estimator is EstimatorKind.POSTERIOR:
        x_hat, iterations, probs = _posterior_ole(pixels, cache)
    else:
        x_hat = deconv_estimate(image, cache.geometry, cache.psf, cache.learned.deconv_config())
    runtime_ms = (time.perf_counter() - start) * 1e3

    detection, gmm_detection = _detect(x_hat, cache, truth)
    if logger.isEnabledFor(logging.DEBUG):
        der = detection.der if not math.isnan(detection.der) else 'n/a'
        logger.debug(f"{estimator.value}: DER {der}, {iterations} CG iterations, {runtime_ms:.2f} ms")
    return EstimateReport(estimator=estimator, x_hat=x_hat, detection=detection, runtime_ms=runtime_ms,
                          cg_iterations=iterations, probabilities=probs, gmm_detection=gmm_detection,
                          seed=image.seed)
