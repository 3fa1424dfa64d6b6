# detection.py
# Description: Uniform-threshold occupancy classification, the DER-optimal (oracle)
# threshold, and the equal-likelihood threshold of a fitted mixture.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Optional

import numpy as np
from scipy.optimize import bisect

from Model.synthetic import GroundTruth
from Tools.errors import DimensionError, ThresholdError

if TYPE_CHECKING:
    from Learn.gmm import GmmFit

logger = logging.getLogger(__name__)

BISECT_RTOL = 1e-12


class ThresholdMode(Enum):
    ORACLE = 'oracle'
    GMM = 'gmm'
    FIXED = 'fixed'


@dataclass(frozen=True)
class DetectionResult:
    """Labels from x_hat >= threshold, scored against the truth when it is known."""
    threshold: float
    labels: np.ndarray
    fp: int
    fn: int
    der: float
    mode: ThresholdMode

    @property
    def n_sites(self) -> int:
        return self.labels.size

    def to_dict(self) -> Dict[str, Any]:
        return {
            'threshold': self.threshold if math.isfinite(self.threshold) else str(self.threshold),
            'fp': self.fp,
            'fn': self.fn,
            'der': self.der,
            'mode': self.mode.value,
            'n_occupied': int(self.labels.sum()),
        }


def classify_and_score(x_hat: np.ndarray, threshold: float, truth: Optional[GroundTruth] = None,
                       mode: ThresholdMode = ThresholdMode.FIXED) -> DetectionResult:
    """
    Classify sites as occupied when x_hat >= threshold; count errors if truth is given.

    Without truth, fp = fn = 0 and der is NaN.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if np.isnan(threshold):
        raise ValueError("Threshold must not be NaN")
    labels = x_hat >= threshold
    if truth is None:
        return DetectionResult(threshold=float(threshold), labels=labels, fp=0, fn=0, der=float('nan'), mode=mode)
    if truth.n_sites != x_hat.size:
        raise DimensionError(f"{x_hat.size} estimates for {truth.n_sites} sites")
    fp = int(np.sum(labels & ~truth.occupied))
    fn = int(np.sum(~labels & truth.occupied))
    return DetectionResult(threshold=float(threshold), labels=labels, fp=fp, fn=fn,
                           der=(fp + fn) / x_hat.size, mode=mode)


def oracle_threshold(x_hat: np.ndarray, truth: GroundTruth) -> DetectionResult:
    """
    The DER-minimizing uniform threshold, knowing the truth.

    Candidates are -inf, the midpoints between consecutive distinct sorted
    estimates, and +inf; the smallest minimizer wins.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if truth.n_sites != x_hat.size:
        raise DimensionError(f"{x_hat.size} estimates for {truth.n_sites} sites")
    order = np.argsort(x_hat, kind='mergesort')
    xs = x_hat[order]
    occ = truth.occupied[order].astype(np.int64)

    # cut j labels the first j sorted values empty and the rest occupied
    n = xs.size
    fn_cum = np.concatenate(([0], np.cumsum(occ)))
    fp_cum = (n - np.arange(n + 1)) - (occ.sum() - fn_cum)
    errors = fn_cum + fp_cum

    # only cut where consecutive values differ
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = xs[1:] > xs[:-1]
    candidates = np.flatnonzero(valid)
    best = candidates[np.argmin(errors[candidates])]

    if best == 0:
        threshold = -math.inf
    elif best == n:
        threshold = math.inf
    else:
        threshold = 0.5 * (xs[best - 1] + xs[best])
        # keep the midpoint strictly above the lower neighbour
        if not threshold > xs[best - 1]:
            threshold = xs[best]
    return classify_and_score(x_hat, threshold, truth, ThresholdMode.ORACLE)


def _quadratic_roots(gmm: 'GmmFit') -> np.ndarray:
    """Real roots of log((1-phi) N0) = log(phi N1) as a quadratic in x."""
    s0, s1 = gmm.sigma0 ** 2, gmm.sigma1 ** 2
    a = 1.0 / (2 * s1) - 1.0 / (2 * s0)
    b = gmm.mu0 / s0 - gmm.mu1 / s1
    c = (gmm.mu1 ** 2 / (2 * s1) - gmm.mu0 ** 2 / (2 * s0)
         + math.log((1 - gmm.phi) / gmm.phi) + math.log(gmm.sigma1 / gmm.sigma0))
    if a == 0:
        return np.array([-c / b]) if b != 0 else np.array([])
    disc = b * b - 4 * a * c
    if disc < 0:
        return np.array([])
    sq = math.sqrt(disc)
    # numerically stable pair
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a] if q != 0 else []
    if q != 0:
        roots.append(c / q)
    else:
        roots.append(-b / (2 * a))
    return np.sort(np.array(roots))


def gmm_threshold(gmm: 'GmmFit') -> float:
    """
    Equal-likelihood point (1 - phi) N(x; mu0, sigma0) = phi N(x; mu1, sigma1) in (mu0, mu1).

    Equal variances give the closed form; otherwise the root is bracketed with
    the quadratic's roots and refined by bisection. With two roots in the
    interval, the one nearer the midpoint is returned.

    Raises:
        ThresholdError: If no crossing lies strictly between the modes
    """
    if gmm.sigma0 == gmm.sigma1:
        s2 = gmm.sigma0 ** 2
        t = 0.5 * (gmm.mu0 + gmm.mu1) - s2 * math.log(gmm.phi / (1 - gmm.phi)) / (gmm.mu1 - gmm.mu0)
        if not gmm.mu0 < t < gmm.mu1:
            raise ThresholdError(f"Equal-likelihood point {t:.6g} is outside ({gmm.mu0:.6g}, {gmm.mu1:.6g})")
        return float(t)

    def gap(x: float) -> float:
        empty, occupied = gmm.log_densities(np.array([x]))
        return float(occupied[0] - empty[0])

    roots = [r for r in _quadratic_roots(gmm) if gmm.mu0 < r < gmm.mu1]
    if not roots:
        raise ThresholdError(
            f"No equal-likelihood crossing between mu0={gmm.mu0:.6g} and mu1={gmm.mu1:.6g}"
        )
    mid = 0.5 * (gmm.mu0 + gmm.mu1)
    root = min(roots, key=lambda r: abs(r - mid))

    # bracket the chosen root away from the other one
    others = [r for r in roots if r != root]
    lo, hi = gmm.mu0, gmm.mu1
    for other in others:
        if other < root:
            lo = 0.5 * (other + root)
        else:
            hi = 0.5 * (other + root)
    if gap(lo) * gap(hi) > 0:
        logger.debug("Bisection bracket has no sign change; using the closed-form root")
        return float(root)
    scale = max(abs(gmm.mu0), abs(gmm.mu1), 1.0)
    return float(bisect(gap, lo, hi, xtol=BISECT_RTOL * scale, rtol=BISECT_RTOL, maxiter=500))
