# tuning.py
# Description: Self-calibration from a single image: kurtosis-minimizing hyperparameter
# searches for the OLE (gamma) and the deconvolution baseline (lambda, d), and the
# LearnedModel that bundles everything the estimators need.

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from Deconv.wiener import DeconvConfig, disk_extract, wiener_deconvolve
from Detect.detection import oracle_threshold
from Estimator.moments import MomentFlavor, MomentModel
from Forward.measurement_matrix import GramMatrix, MeasurementMatrix
from Learn.gmm import GmmFit, derive_model_params, fit_gmm
from Learn.stats import estimate_mean_brightness, excess_kurtosis, kurtosis
from Model.scenario import ArrayGeometry, BrightnessModel, PsfModel
from Model.synthetic import GroundTruth, ImageSample
from Settings.config import SolverSettings
from SparseLA.cg import solve_spd
from Tools.errors import ConvergenceError, GmmCollapseError, TuningError, ZeroPivotError
from Tools.safe_utils import safe_for, tolerate

logger = logging.getLogger(__name__)

GAMMA_POINTS = 25
GAMMA_DECADES = 3.0
LAMBDA_GRID = np.logspace(-4, 2, 20)
D_POINTS = 8
# sanity band for gamma_ref(derived) / gamma_opt
GAMMA_REF_BAND = 2.0
KURTOSIS_TIE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def default_gamma_grid(gamma_ref: float) -> np.ndarray:
    """25 points log-spaced over [1e-3, 1e3] * gamma_ref."""
    return gamma_ref * np.logspace(-GAMMA_DECADES, GAMMA_DECADES, GAMMA_POINTS)


def default_d_grid(spacing_a: float) -> np.ndarray:
    """8 radii linearly spaced over [0.5, 0.75 a]."""
    return np.linspace(0.5, 1.5 * spacing_a / 2.0, D_POINTS)


def initial_gamma_ref(mean_brightness: float, M: MeasurementMatrix, k: float, r: float) -> float:
    """
    Sigma_n / Sigma_x from a crude guess (p = 1/2, mu = 2 <x>, sigma = 0),
    used to centre the gamma grid before anything is learned. The guessed mu
    never drops below the per-pixel noise level, so an empty image still gets
    a usable grid.
    """
    noise_floor = math.sqrt(r ** 2 + k) if r ** 2 + k > 0 else 1.0
    mu = max(2.0 * mean_brightness, noise_floor)
    var_x = 0.25 * mu ** 2
    var_n = r ** 2 + k + max(mean_brightness, 0.0) * float(np.mean(M.matrix.sum(axis=1)))
    return max(var_n, 1e-12) / var_x


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaTuning:
    gamma_opt: float
    curve: pd.DataFrame = field(repr=False)
    x_hat: np.ndarray = field(repr=False)


def simplified_estimate(y: np.ndarray, M: MeasurementMatrix, gram: GramMatrix, gamma: float,
                        mean_x: float, settings: Optional[SolverSettings] = None) -> Tuple[np.ndarray, int]:
    """<x> + (M^T M + gamma I)^-1 M^T (y - M <x>) for a background-subtracted image."""
    A = (gram.matrix + gamma * sp.identity(gram.n_sites, format='csr')).tocsr()
    mean_vec = np.full(M.n_sites, mean_x)
    rhs = M.rdot(y - M.dot(mean_vec))
    solved = solve_spd(A, rhs, settings=settings)
    return mean_vec + solved.result.x, solved.result.iterations


def tune_gamma(y: Union[ImageSample, np.ndarray], M: MeasurementMatrix, gram: GramMatrix,
               grid: Optional[Iterable[float]] = None, gamma_ref: Optional[float] = None,
               k: float = 0.0, r: float = 0.0, truth: Optional[GroundTruth] = None,
               settings: Optional[SolverSettings] = None) -> GammaTuning:
    """
    Grid search for the gamma minimizing the kurtosis of the simplified estimate.

    Args:
        y (ImageSample | np.ndarray): Raw image (the background k is removed here)
        M (MeasurementMatrix): Forward operator
        gram (GramMatrix): M^T M
        grid (iterable, optional): Explicit gamma values; default is built around gamma_ref
        gamma_ref (float, optional): Grid centre; default from a crude parameter guess
        k (float): Background per pixel
        r (float): Read noise, only used for the default gamma_ref
        truth (GroundTruth, optional): Adds the oracle DER of every grid point to the curve
        settings (SolverSettings, optional): Solver knobs and thread count

    Returns:
        GammaTuning: gamma_opt, the curve (columns gamma, kurtosis, der) and x_hat at gamma_opt

    Raises:
        TuningError: If every grid point fails
    """
    settings = settings or SolverSettings()
    pixels = (y.pixels_y if isinstance(y, ImageSample) else np.asarray(y, dtype=float)) - k
    mean_x = estimate_mean_brightness(pixels, 0.0, M.n_sites)
    if grid is None:
        gamma_ref = gamma_ref if gamma_ref is not None else initial_gamma_ref(mean_x, M, k, r)
        grid = default_gamma_grid(gamma_ref)
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or np.any(~(grid > 0)):
        raise ValueError("The gamma grid must be a nonempty list of positive values")

    @safe_for(ConvergenceError, ZeroPivotError, ValueError, default=None)
    def evaluate(gamma: float) -> Optional[Dict[str, Any]]:
        x_hat, iterations = simplified_estimate(pixels, M, gram, gamma, mean_x, settings)
        der = oracle_threshold(x_hat, truth).der if truth is not None else float('nan')
        return {'gamma': gamma, 'kurtosis': kurtosis(x_hat), 'der': der,
                'cg_iterations': iterations, 'x_hat': x_hat}

    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        points = list(pool.map(evaluate, grid))

    skipped = [g for g, pt in zip(grid, points) if pt is None]
    if skipped:
        logger.warning(f"Skipped {len(skipped)} gamma grid point(s): {', '.join(f'{g:.3g}' for g in skipped)}")
    points = [pt for pt in points if pt is not None]
    if not points:
        raise TuningError(f"Every gamma grid point failed ({grid.size} points)")

    curve = pd.DataFrame([{key: pt[key] for key in ('gamma', 'kurtosis', 'der')} for pt in points])
    values = curve['kurtosis'].to_numpy()
    best = int(np.argmin(values))
    # both conventions must pick the same grid point, up to round-off ties
    excess_best = int(np.argmin([excess_kurtosis(pt['x_hat']) for pt in points]))
    if excess_best != best and not math.isclose(values[excess_best], values[best], rel_tol=KURTOSIS_TIE_RTOL):
        raise TuningError(f"Raw and excess kurtosis disagree on the gamma argmin "
                          f"({curve['gamma'].iloc[best]:.4g} vs {curve['gamma'].iloc[excess_best]:.4g})")
    gamma_opt = float(curve['gamma'].iloc[best])
    logger.info(f"gamma_opt = {gamma_opt:.4g} (kurtosis {curve['kurtosis'].iloc[best]:.4f})")
    return GammaTuning(gamma_opt=gamma_opt, curve=curve, x_hat=points[best]['x_hat'])


# ---------------------------------------------------------------------------
# deconvolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeconvTuning:
    lambda_opt: float
    d_opt: float
    curve: pd.DataFrame = field(repr=False)
    x_hat: np.ndarray = field(repr=False)


def tune_deconv(y: ImageSample, geometry: ArrayGeometry, psf: PsfModel,
                lambda_grid: Optional[Iterable[float]] = None, d_grid: Optional[Iterable[float]] = None,
                truth: Optional[GroundTruth] = None, settings: Optional[SolverSettings] = None) -> DeconvTuning:
    """
    Exhaustive (lambda, d) search minimizing the kurtosis of the raw
    deconvolution estimates. The Wiener step runs once per lambda.

    Returns:
        DeconvTuning: lambda_opt, d_opt, the curve (columns lambda, d, kurtosis, der)
            and the raw estimates at the optimum

    Raises:
        TuningError: If every grid point fails
    """
    settings = settings or SolverSettings()
    lambdas = np.asarray(list(LAMBDA_GRID if lambda_grid is None else lambda_grid), dtype=float)
    radii = np.asarray(list(default_d_grid(geometry.spacing_a) if d_grid is None else d_grid), dtype=float)
    if lambdas.size == 0 or radii.size == 0:
        raise ValueError("The lambda and d grids must be nonempty")
    grid = y.as_grid()
    centred = grid - grid.mean()

    @safe_for(ValueError, ArithmeticError, default=[])
    def evaluate_lambda(lam: float):
        filtered = wiener_deconvolve(centred, psf, lam)
        rows = []
        for d in radii:
            with tolerate(ValueError, label=f"deconv point lambda={lam:.3g}, d={d:.3g}"):
                x_hat = disk_extract(filtered, geometry, d)
                der = oracle_threshold(x_hat, truth).der if truth is not None else float('nan')
                rows.append({'lambda': lam, 'd': d, 'kurtosis': kurtosis(x_hat), 'der': der, 'x_hat': x_hat})
        return rows

    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        points = [pt for rows in pool.map(evaluate_lambda, lambdas) for pt in rows]
    if not points:
        raise TuningError(f"Every deconvolution grid point failed ({lambdas.size} x {radii.size})")

    curve = pd.DataFrame([{key: pt[key] for key in ('lambda', 'd', 'kurtosis', 'der')} for pt in points])
    best = int(np.argmin(curve['kurtosis'].to_numpy()))
    lambda_opt, d_opt = float(curve['lambda'].iloc[best]), float(curve['d'].iloc[best])
    logger.info(f"Deconvolution optimum lambda = {lambda_opt:.4g}, d = {d_opt:.3f}")
    return DeconvTuning(lambda_opt=lambda_opt, d_opt=d_opt, curve=curve, x_hat=points[best]['x_hat'])


# ---------------------------------------------------------------------------
# learned model
# ---------------------------------------------------------------------------

@dataclass
class LearnedModel:
    """Everything self-calibration learns from one image."""
    p: float
    mu: float
    sigma2: float
    gamma_opt: float
    lambda_opt: float
    d_opt: float
    mean_brightness: float
    deconv_gain: float = 1.0
    deconv_bias: float = 0.0
    gamma_ref: float = float('nan')
    gamma_ref_ratio: float = float('nan')
    gmm: Optional[GmmFit] = None
    # diagnostics from the run that produced this model; not serialized
    gamma_curve: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)
    deconv_curve: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.gmm is not None and not 0.0 < self.p < 1.0:
            raise ValueError(f"Learned occupancy p must lie in (0, 1), got {self.p}")
        if self.sigma2 < 0:
            raise ValueError(f"Learned sigma^2 must be non-negative, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def brightness_model(self, k: float, r: float) -> BrightnessModel:
        return BrightnessModel(p=self.p, mu=self.mu, sigma=self.sigma, background_k=k, read_noise_r=r)

    def deconv_config(self) -> DeconvConfig:
        return DeconvConfig(lam=self.lambda_opt, disk_radius_d=self.d_opt,
                            gain=self.deconv_gain, bias=self.deconv_bias)

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ('gamma_curve', 'deconv_curve')}
        data['gmm'] = self.gmm.to_dict() if self.gmm is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LearnedModel':
        data = dict(data)
        gmm = data.pop('gmm', None)
        return cls(**data, gmm=GmmFit.from_dict(gmm) if gmm else None)

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'LearnedModel':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


def tuned_prior_moments(learned: LearnedModel, M: MeasurementMatrix, k: float, r: float) -> MomentModel:
    """
    A priori moments that reproduce the tuned regularization: <x> from the mean
    brightness, var_x = Sigma_n / gamma_opt, var_n from the mean brightness.
    """
    mean_x = np.full(M.n_sites, learned.mean_brightness)
    var_n = r ** 2 + k + M.dot(mean_x)
    var_n = np.maximum(var_n, 0.0)
    sigma_n = float(np.mean(var_n))
    if not sigma_n > 0:
        # an empty dark image; fall back to the background level
        var_n = np.full(M.n_pixels, max(r ** 2 + k, 1.0))
        sigma_n = float(np.mean(var_n))
    var_x = np.full(M.n_sites, sigma_n / learned.gamma_opt)
    return MomentModel(mean_x=mean_x, var_x=var_x, var_n=var_n, flavor=MomentFlavor.PRIOR)


def _affine_from_gmm(raw: np.ndarray, mu: float) -> Tuple[float, float]:
    """Gain and bias mapping the empty mode to 0 and the occupied mode to mu."""
    fit = fit_gmm(raw)
    gain = mu / (fit.mu1 - fit.mu0)
    return gain, -gain * fit.mu0


def calibrate(image: ImageSample, M: MeasurementMatrix, gram: GramMatrix, geometry: ArrayGeometry,
              psf: PsfModel, k: float, r: float, settings: Optional[SolverSettings] = None,
              gmm_enabled: bool = True, truth: Optional[GroundTruth] = None) -> LearnedModel:
    """
    Full self-calibration on one image.

    Mean brightness, then gamma tuning, then a GMM on the tuned estimates giving
    (p, mu, sigma^2), then the deconvolution search and its affine
    recalibration. When the mixture cannot be fitted (or gmm_enabled is False)
    p and mu stay unknown (NaN) and the deconvolution output is left unscaled.

    Args:
        image (ImageSample): Calibration image
        M (MeasurementMatrix): Forward operator for the assumed geometry and PSF
        gram (GramMatrix): M^T M
        geometry (ArrayGeometry): Assumed site positions
        psf (PsfModel): Assumed PSF
        k (float): Background per pixel
        r (float): Read noise per pixel
        settings (SolverSettings, optional): Solver knobs
        gmm_enabled (bool): Fit the mixture (needed for posterior probabilities)
        truth (GroundTruth, optional): Only used to add DER columns to the tuning curves

    Returns:
        LearnedModel: The calibration
    """
    settings = settings or SolverSettings()
    mean_b = estimate_mean_brightness(image, k, M.n_sites)
    gamma_ref0 = initial_gamma_ref(mean_b, M, k, r)
    gamma = tune_gamma(image, M, gram, gamma_ref=gamma_ref0, k=k, r=r, truth=truth, settings=settings)

    p, mu, sigma2, gmm = float('nan'), float('nan'), 0.0, None
    gamma_ref, ratio = float('nan'), float('nan')
    if gmm_enabled:
        def fallback(exc):
            logger.warning(f"Continuing without a mixture model: {exc}")

        with tolerate(GmmCollapseError, ValueError, label="mixture fit", handler=fallback):
            fitted = fit_gmm(gamma.x_hat)
            p_fit, mu_fit, sigma2_fit = derive_model_params(fitted, mean_b)
            if not mu_fit > 0:
                raise ValueError(f"derived brightness mu={mu_fit:.4g} is not positive")
            p, mu, sigma2, gmm = p_fit, mu_fit, sigma2_fit, fitted
            model = BrightnessModel(p=p, mu=mu, sigma=math.sqrt(sigma2), background_k=k, read_noise_r=r)
            var_x = p * (1 - p) * mu ** 2 + p * sigma2
            sigma_n = r ** 2 + k + p * mu * float(np.mean(M.matrix.sum(axis=1)))
            gamma_ref = sigma_n / var_x
            ratio = gamma_ref / gamma.gamma_opt
            if not 1.0 / GAMMA_REF_BAND <= ratio <= GAMMA_REF_BAND:
                logger.warning(f"gamma_ref from the learned model ({gamma_ref:.4g}) differs from "
                               f"gamma_opt ({gamma.gamma_opt:.4g}) by a factor {ratio:.2f}")
            logger.info(f"Learned p={model.p:.4f}, mu={model.mu:.2f}, sigma^2={sigma2:.2f}")

    deconv = tune_deconv(image, geometry, psf, truth=truth, settings=settings)
    gain, bias = 1.0, 0.0
    if gmm is not None:
        with tolerate(GmmCollapseError, ValueError, ZeroDivisionError, label="deconvolution recalibration"):
            gain, bias = _affine_from_gmm(deconv.x_hat, mu)

    return LearnedModel(p=p, mu=mu, sigma2=sigma2, gamma_opt=gamma.gamma_opt,
                        lambda_opt=deconv.lambda_opt, d_opt=deconv.d_opt, mean_brightness=mean_b,
                        deconv_gain=gain, deconv_bias=bias, gamma_ref=gamma_ref,
                        gamma_ref_ratio=ratio, gmm=gmm,
                        gamma_curve=gamma.curve, deconv_curve=deconv.curve)
