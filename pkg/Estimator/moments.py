# moments.py
# Description: First and second moments of the brightness prior and of the pixel noise,
# from the uniform occupancy probability (prior) or per-site posterior probabilities.

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from Forward.measurement_matrix import MeasurementMatrix
from Model.scenario import BrightnessModel
from Tools.errors import DegeneratePriorError, DimensionError

logger = logging.getLogger(__name__)

PROB_EPS = 1e-4


class MomentFlavor(Enum):
    PRIOR = 'prior'
    POSTERIOR = 'posterior'


@dataclass(frozen=True)
class MomentModel:
    """
    Diagonal moments feeding the OLE.

    mean_x and var_x have one entry per site; var_n is either a scalar or one
    entry per pixel.
    """
    mean_x: np.ndarray
    var_x: np.ndarray
    var_n: Union[float, np.ndarray]
    flavor: MomentFlavor

    def __post_init__(self):
        if self.mean_x.shape != self.var_x.shape:
            raise DimensionError(f"mean_x {self.mean_x.shape} and var_x {self.var_x.shape} differ in shape")
        if np.any(~(self.var_x > 0)):
            raise DegeneratePriorError("Every entry of var_x must be strictly positive")
        var_n = np.asarray(self.var_n)
        if np.any(~(var_n >= 0)) or not np.mean(var_n) > 0:
            raise ValueError("Noise variance var_n must be non-negative with a positive mean")

    @property
    def n_sites(self) -> int:
        return self.mean_x.size

    @property
    def sigma_n(self) -> float:
        """Scalar noise variance used by the solver: the mean of the var_n diagonal."""
        return float(np.mean(self.var_n))

    def noise_diagonal(self, n_pixels: int) -> np.ndarray:
        """var_n expanded to one entry per pixel."""
        var_n = np.asarray(self.var_n, dtype=float)
        if var_n.ndim == 0:
            return np.full(n_pixels, float(var_n))
        if var_n.size != n_pixels:
            raise DimensionError(f"var_n has {var_n.size} entries, expected {n_pixels}")
        return var_n

    def with_scalar_noise(self) -> 'MomentModel':
        return MomentModel(self.mean_x, self.var_x, self.sigma_n, self.flavor)


def _moments(p: np.ndarray, mu: float, sigma: float, M: MeasurementMatrix, k: float, r: float,
             flavor: MomentFlavor) -> MomentModel:
    mean_x = p * mu
    var_x = p * (1.0 - p) * mu ** 2 + p * sigma ** 2
    var_n = r ** 2 + k + mu * (M.matrix @ p)
    return MomentModel(mean_x=mean_x, var_x=var_x, var_n=var_n, flavor=flavor)


def prior_moments(model: BrightnessModel, M: MeasurementMatrix) -> MomentModel:
    """
    Moments from the uniform occupancy probability p.

    Raises:
        DegeneratePriorError: If p(1-p)mu^2 + p sigma^2 = 0
    """
    p = model.p
    prior_var = p * (1.0 - p) * model.mu ** 2 + p * model.sigma ** 2
    if not prior_var > 0:
        raise DegeneratePriorError(
            f"Degenerate brightness prior: p(1-p)mu^2 + p sigma^2 = {prior_var} "
            f"for p={p}, mu={model.mu}, sigma={model.sigma}"
        )
    moments = _moments(np.full(M.n_sites, p), model.mu, model.sigma, M,
                       model.background_k, model.read_noise_r, MomentFlavor.PRIOR)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Prior moments: <x>={p * model.mu:g}, var_x={prior_var:g}, "
                     f"Sigma_n={moments.sigma_n:g}, gamma_ref={moments.sigma_n / prior_var:.4g}")
    return moments


def posterior_moments(p_vec: np.ndarray, mu: float, sigma: float, M: MeasurementMatrix, k: float,
                      r: float, eps: float = PROB_EPS) -> MomentModel:
    """
    Moments from per-site occupancy probabilities, clamped to [eps, 1 - eps].

    Raises:
        DimensionError: If p_vec does not have one entry per site
    """
    p_vec = np.asarray(p_vec, dtype=float)
    if p_vec.shape != (M.n_sites,):
        raise DimensionError(f"p_vec has shape {p_vec.shape}, expected ({M.n_sites},)")
    if np.any((p_vec < 0) | (p_vec > 1)) or not np.all(np.isfinite(p_vec)):
        raise ValueError("Posterior probabilities must lie in [0, 1]")
    p_vec = np.clip(p_vec, eps, 1.0 - eps)
    return _moments(p_vec, mu, sigma, M, k, r, MomentFlavor.POSTERIOR)
