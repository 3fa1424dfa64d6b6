# gmm.py
# Description: Two-component 1-D Gaussian mixture fitted to brightness estimates, the model
# parameters it implies, and per-site posterior occupancy probabilities.

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from Estimator.moments import PROB_EPS
from Tools.errors import GmmCollapseError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 20
COLLAPSE_RATIO = 1e-6


@dataclass(frozen=True)
class GmmFit:
    """pi(x) = (1 - phi) N(x; mu0, sigma0) + phi N(x; mu1, sigma1), mode 1 = occupied."""
    phi: float
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    log_likelihood: float = float('nan')
    iterations: int = 0

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"Mixture weight phi must lie in (0, 1), got {self.phi}")
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ValueError(f"Mode widths must be positive, got {self.sigma0}, {self.sigma1}")
        if not self.mu1 > self.mu0:
            raise ValueError(f"Modes must be ordered mu0 < mu1, got {self.mu0}, {self.mu1}")

    def log_densities(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Weighted log densities (empty, occupied) at x."""
        x = np.asarray(x, dtype=float)
        empty = math.log1p(-self.phi) + norm.logpdf(x, self.mu0, self.sigma0)
        occupied = math.log(self.phi) + norm.logpdf(x, self.mu1, self.sigma1)
        return empty, occupied

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GmmFit':
        return cls(**data)


def _median_split_init(x: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    median = np.median(x)
    low, high = x[x <= median], x[x > median]
    if low.size < 2 or high.size < 2:
        return None
    weights = np.array([low.size, high.size], dtype=float) / x.size
    means = np.array([[low.mean()], [high.mean()]])
    variances = np.array([low.var(), high.var()])
    if np.any(variances <= 0):
        return None
    return weights, means, (1.0 / variances).reshape(2, 1, 1)


def _jittered_init(x: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = np.quantile(x, [0.25, 0.75])
    spread = max(np.ptp(x), 1e-300)
    means = np.array([[lo], [hi]]) + rng.normal(0.0, 0.1 * spread, (2, 1))
    variance = max(np.var(x), (1e-3 * spread) ** 2)
    return np.array([0.5, 0.5]), np.sort(means, axis=0), np.full((2, 1, 1), 1.0 / variance)


def fit_gmm(x_hat: np.ndarray, max_iter: int = 500, tol: float = 1e-8, n_restarts: int = 3,
            seed: int = 0) -> GmmFit:
    """
    Expectation-maximization for a two-mode 1-D mixture.

    The first attempt starts from a median split (mode 0 below the median);
    collapsed fits are retried from jittered starts.

    Args:
        x_hat (np.ndarray): Brightness estimates, at least 20 of them
        max_iter (int): EM iteration cap
        tol (float): Stop when the mean log-likelihood gains less than this per iteration
        n_restarts (int): Extra attempts after a collapse
        seed (int): Seed for the jittered restarts

    Returns:
        GmmFit: Fitted mixture with mu1 > mu0

    Raises:
        GmmCollapseError: If every attempt collapses a mode (unimodal histogram)
    """
    x = np.asarray(x_hat, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise ValueError(f"fit_gmm needs at least {MIN_SAMPLES} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("fit_gmm input contains non-finite values")
    spread = float(np.ptp(x))
    if spread == 0:
        raise GmmCollapseError("All estimates are identical: no mixture to fit")

    rng = np.random.default_rng(seed)
    X = x.reshape(-1, 1)
    init = _median_split_init(x)
    for attempt in range(n_restarts + 1):
        if init is None:
            init = _jittered_init(x, rng)
        weights, means, precisions = init
        init = None
        gm = GaussianMixture(n_components=2, covariance_type='full', tol=tol, max_iter=max_iter,
                             reg_covar=0.0, weights_init=weights, means_init=means,
                             precisions_init=precisions)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter('ignore', ConvergenceWarning)
                gm.fit(X)
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"GMM attempt {attempt + 1} failed ({e}); restarting from a jittered start")
            continue

        sigmas = np.sqrt(gm.covariances_.ravel())
        if not np.all(np.isfinite(sigmas)) or sigmas.min() < COLLAPSE_RATIO * spread:
            logger.warning(f"GMM attempt {attempt + 1} collapsed a mode (sigma={sigmas.min():.3e}); restarting")
            continue
        if not gm.converged_:
            logger.warning(f"GMM did not converge within {max_iter} iterations")

        order = np.argsort(gm.means_.ravel())
        lo, hi = order
        means_sorted = gm.means_.ravel()
        if means_sorted[hi] == means_sorted[lo] or not 0 < gm.weights_[hi] < 1:
            logger.warning(f"GMM attempt {attempt + 1} produced coincident modes; restarting")
            continue
        fit = GmmFit(phi=float(gm.weights_[hi]), mu0=float(means_sorted[lo]), sigma0=float(sigmas[lo]),
                     mu1=float(means_sorted[hi]), sigma1=float(sigmas[hi]),
                     log_likelihood=float(gm.score(X) * x.size), iterations=int(gm.n_iter_))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"GMM fit after {fit.iterations} iterations: phi={fit.phi:.4f}, "
                         f"mu0={fit.mu0:.3f}, sigma0={fit.sigma0:.3f}, mu1={fit.mu1:.3f}, sigma1={fit.sigma1:.3f}")
        return fit

    raise GmmCollapseError(
        f"Every GMM attempt ({n_restarts + 1}) collapsed: the brightness histogram looks unimodal"
    )


def derive_model_params(gmm: GmmFit, mean_brightness: float) -> Tuple[float, float, float]:
    """
    (p, mu, sigma^2) from a mixture fit: p = phi, mu = <x> / phi and
    sigma^2 = max(sigma1^2 - sigma0^2, 0).
    """
    if not gmm.phi > 0:
        raise ValueError("Mixture weight phi is zero: no occupied mode")
    p = gmm.phi
    mu = mean_brightness / gmm.phi
    sigma2 = max(gmm.sigma1 ** 2 - gmm.sigma0 ** 2, 0.0)
    return p, mu, sigma2


def posterior_probabilities(x_hat: np.ndarray, gmm: GmmFit, eps: Optional[float] = PROB_EPS) -> np.ndarray:
    """
    Responsibility of the occupied mode for each estimate, clamped to
    [eps, 1 - eps] (pass eps=None for the raw responsibilities).
    """
    empty, occupied = gmm.log_densities(x_hat)
    probs = expit(occupied - empty)
    if eps is not None:
        probs = np.clip(probs, eps, 1.0 - eps)
    return probs
