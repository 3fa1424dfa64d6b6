# harness.py
# Description: Benchmark drivers: ensemble DER statistics for one scenario, the (mu, a)
# sweep with its two cut lines, runtime scaling with site count, and calibration-error
# robustness sweeps.

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from Bench.pipeline import CalibrationCache, EstimateReport, estimate_image
from Bench.records import (BenchRecord, EstimatorKind, EstimatorStats, Perturbation, PerturbationKind,
                           Scenario)
from Estimator.snr import snr
from Forward.measurement_matrix import build_gram, build_measurement_matrix
from Learn.tuning import LearnedModel
from Model.synthetic import generate_test_image, image_seed
from Settings.config import SolverSettings
from Tools.errors import BenchError, DegeneratePriorError, ReconError
from Tools.safe_utils import safe_for

logger = logging.getLogger(__name__)

# the two cut lines of the (mu, a) sweep
CUT_A_MU = 1000.0
CUT_B_RATIO = 1.5
MIN_TIMED_IMAGES = 5


@contextmanager
def bench_stage(scenario: Scenario, stage: str):
    """Re-raise any stage failure as a BenchError naming the scenario."""
    try:
        yield
    except BenchError:
        raise
    except (ReconError, ValueError, ArithmeticError, RuntimeError) as e:
        cfg = scenario.config
        raise BenchError(
            f"{stage} failed for scenario tag={scenario.tag} ({cfg.n_rows}x{cfg.n_cols}, a={cfg.spacing_a}, "
            f"hwhm={cfg.psf_hwhm}, p={cfg.p}, mu={cfg.mu}, seed={cfg.seed}, "
            f"perturbation={scenario.perturbation.kind.value}:{scenario.perturbation.amplitude}): {e}"
        ) from e


def _snr_or_nan(scenario: Scenario, settings: SolverSettings, M) -> float:
    compute = safe_for(DegeneratePriorError, default=float('nan'))(snr)
    return compute(scenario.config.brightness(), scenario.true_geometry(), scenario.true_psf(),
                   settings=settings, M=M)


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------

def run_ensemble(scenario: Scenario, settings: Optional[SolverSettings] = None,
                 learned: Optional[LearnedModel] = None) -> BenchRecord:
    """
    Benchmark the selected estimators on an ensemble of labelled images.

    Hyperparameters are tuned on the first image (or taken from `learned`) and
    the resulting cache is shared by every image unless scenario.retune is set.
    Images are generated inside the workers from per-image seeds, and results
    are reduced in image-index order.

    Args:
        scenario (Scenario): What to run
        settings (SolverSettings, optional): Solver knobs; threads come from the scenario
        learned (LearnedModel, optional): Reuse a previous calibration

    Returns:
        BenchRecord: Ensemble statistics per estimator plus the scenario SNR

    Raises:
        BenchError: If any stage fails
    """
    settings = (settings or SolverSettings()).with_overrides(threads=1)
    config = scenario.config
    model = config.brightness()
    with bench_stage(scenario, "matrix assembly"):
        true_geometry, true_psf = scenario.true_geometry(), scenario.true_psf()
        assumed_geometry, assumed_psf = scenario.assumed()
        M_true = build_measurement_matrix(true_geometry, true_psf)
        if scenario.perturbation.is_identity:
            M_est = M_true
        else:
            M_est = build_measurement_matrix(assumed_geometry, assumed_psf)
        gram = build_gram(M_est)

    def generate(idx: int):
        return generate_test_image(true_geometry, true_psf, model, image_seed(config.seed, idx), M=M_true)

    def build_cache(image, prior_learned=None) -> CalibrationCache:
        return CalibrationCache.build(image, assumed_geometry, assumed_psf, config.background_k,
                                      config.read_noise_r, settings=settings,
                                      gmm_enabled=scenario.gmm_enabled, learned=prior_learned,
                                      M=M_est, gram=gram)

    with bench_stage(scenario, "calibration"):
        cache = build_cache(generate(0), learned)

    def process(idx: int) -> Dict[EstimatorKind, EstimateReport]:
        with bench_stage(scenario, f"image {idx}"):
            image = generate(idx)
            local = build_cache(image) if scenario.retune and idx > 0 else cache
            return {kind: estimate_image(image, local, kind) for kind in scenario.estimators}

    logger.info(f"Running {scenario.ensemble} images ({', '.join(k.value for k in scenario.estimators)}) "
                f"on {scenario.threads} thread(s)")
    with ThreadPoolExecutor(max_workers=scenario.threads) as pool:
        results = list(pool.map(process, range(scenario.ensemble)))

    stats = {}
    for kind in scenario.estimators:
        reports = [r[kind] for r in results]
        stats[kind] = EstimatorStats.from_samples(
            [r.der for r in reports], [r.runtime_ms for r in reports],
            [r.cg_iterations for r in reports] if kind is not EstimatorKind.DECONV else (),
            [r.gmm_der for r in reports],
        )
        logger.info(f"{kind.value}: DER {100 * stats[kind].der_mean:.3f}% +/- {100 * stats[kind].der_std:.3f}%, "
                    f"median {stats[kind].runtime_ms:.2f} ms/image")

    with bench_stage(scenario, "SNR"):
        snr_value = _snr_or_nan(scenario, settings, M_true)
    return BenchRecord(scenario=scenario.to_dict(), stats=stats, snr_db=snr_value,
                       n_images=scenario.ensemble, n_sites=true_geometry.n_sites)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_mu_a(base: Scenario, mus: Sequence[float], spacings: Sequence[float],
               settings: Optional[SolverSettings] = None, include_cuts: bool = True) -> List[BenchRecord]:
    """
    Full (mu, a) grid, followed by the two cut lines: mu = 1000 over `spacings`
    (tag cut_A) and a = 1.5 x HWHM over `mus` (tag cut_B).

    Cells shared between the grid and a cut are run once and re-tagged.
    """
    mus, spacings = list(mus), list(spacings)
    if not mus or not spacings:
        raise ValueError("sweep_mu_a needs nonempty mu and a lists")
    if not all(math.isfinite(v) for v in mus + spacings):
        raise ValueError("Sweep values must be finite")

    done: Dict[tuple, BenchRecord] = {}

    def cell(mu: float, a: float, tag: str) -> BenchRecord:
        key = (float(mu), float(a))
        if key not in done:
            logger.info(f"Sweep cell mu={mu:g}, a={a:g}")
            done[key] = run_ensemble(base.with_overrides(mu=float(mu), spacing_a=float(a), tag=tag), settings)
        record = done[key]
        return BenchRecord(scenario={**record.scenario, 'tag': tag}, stats=record.stats, snr_db=record.snr_db,
                           n_images=record.n_images, n_sites=record.n_sites)

    records = [cell(mu, a, 'grid') for mu in mus for a in spacings]
    if include_cuts:
        records += [cell(CUT_A_MU, a, 'cut_A') for a in spacings]
        cut_b = CUT_B_RATIO * base.config.psf_hwhm
        records += [cell(mu, cut_b, 'cut_B') for mu in mus]
    return records


@dataclass
class RuntimeScaling:
    records: List[BenchRecord]
    slopes: Dict[EstimatorKind, float] = field(default_factory=dict)

    def slopes_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'estimator': k.value, 'loglog_slope': v} for k, v in self.slopes.items()])


def loglog_slope(n_sites: Sequence[int], runtimes_ms: Sequence[float]) -> float:
    """Least-squares slope of log(runtime) against log(N_s)."""
    x, y = np.log(np.asarray(n_sites, dtype=float)), np.log(np.asarray(runtimes_ms, dtype=float))
    if x.size < 2:
        return float('nan')
    return float(np.polyfit(x, y, 1)[0])


def runtime_scaling(base: Scenario, site_counts: Iterable[int],
                    settings: Optional[SolverSettings] = None) -> RuntimeScaling:
    """
    Per-image estimator runtime against the number of sites, on square arrays,
    with a log-log slope per estimator.

    Raises:
        ValueError: If a site count is not a perfect square
    """
    counts = [int(c) for c in site_counts]
    sides = []
    for count in counts:
        side = math.isqrt(count)
        if count < 1 or side * side != count:
            raise ValueError(f"Site count {count} is not a perfect square")
        sides.append(side)
    if base.ensemble < MIN_TIMED_IMAGES:
        logger.warning(f"Timing medians over {base.ensemble} images; at least {MIN_TIMED_IMAGES} are recommended")

    records = []
    for side in sides:
        logger.info(f"Runtime scaling: {side}x{side} sites")
        records.append(run_ensemble(base.with_overrides(n_rows=side, n_cols=side, tag='runtime'), settings))

    result = RuntimeScaling(records=records)
    for kind in base.estimators:
        result.slopes[kind] = loglog_slope([r.n_sites for r in records],
                                           [r.stats[kind].runtime_ms for r in records])
        logger.info(f"{kind.value}: runtime ~ N_s^{result.slopes[kind]:.2f}")
    return result


def robustness_sweep(base: Scenario, kind: PerturbationKind, amplitudes: Iterable[float],
                     settings: Optional[SolverSettings] = None) -> List[BenchRecord]:
    """
    DER against a calibration error seen only by the estimators: a global x
    offset (amplitude as a fraction of a) or an HWHM scale factor.
    """
    amplitudes = [float(a) for a in amplitudes]
    if not amplitudes:
        raise ValueError("robustness_sweep needs at least one amplitude")
    records = []
    for amplitude in amplitudes:
        logger.info(f"Robustness: {kind.value} = {amplitude:g}")
        scenario = base.with_overrides(perturbation=Perturbation(kind, amplitude), tag=f'robust_{kind.value}')
        records.append(run_ensemble(scenario, settings))
    return records
