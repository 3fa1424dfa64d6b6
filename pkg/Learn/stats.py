# stats.py
# Description: Image-level statistics used for self-calibration.

from __future__ import annotations

from typing import Union

import numpy as np
from scipy import stats

from Model.synthetic import ImageSample


def estimate_mean_brightness(y: Union[ImageSample, np.ndarray], k: float, n_sites: int) -> float:
    """<x> = p mu estimated as sum_i (y_i - k) / N_s (columns of M sum to one)."""
    if n_sites <= 0:
        raise ValueError(f"n_sites must be positive, got {n_sites}")
    pixels = y.pixels_y if isinstance(y, ImageSample) else np.asarray(y, dtype=float)
    return float(np.sum(pixels - k) / n_sites)


def kurtosis(values: np.ndarray) -> float:
    """
    Fourth standardized moment m4 / m2^2 (not the excess kurtosis).

    Raises:
        ValueError: For fewer than 4 values or zero variance
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 4:
        raise ValueError(f"Kurtosis needs at least 4 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("Kurtosis input contains non-finite values")
    if np.ptp(values) == 0 or not np.var(values) > 0:
        raise ValueError("Kurtosis is undefined for a constant vector")
    return float(stats.kurtosis(values, fisher=False, bias=True))


def excess_kurtosis(values: np.ndarray) -> float:
    """m4 / m2^2 - 3 from numpy central moments, independent of `kurtosis`."""
    values = np.asarray(values, dtype=float).ravel()
    centred = values - values.mean()
    m2 = np.mean(centred ** 2)
    if values.size < 4 or not m2 > 0:
        raise ValueError("Excess kurtosis needs at least 4 values with nonzero variance")
    return float(np.mean(centred ** 4) / m2 ** 2 - 3.0)
