# records.py
# Description: Benchmark scenarios (what to run) and benchmark records (what came out),
# plus the CSV table they are written to.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from Model.scenario import ArrayGeometry, PsfModel, ScenarioConfig
from Tools.errors import ConfigError

logger = logging.getLogger(__name__)


class EstimatorKind(Enum):
    PRIOR = 'prior'
    POSTERIOR = 'posterior'
    DECONV = 'deconv'

    @classmethod
    def parse(cls, name: str) -> Tuple['EstimatorKind', ...]:
        """'prior' | 'posterior' | 'deconv' | 'all' -> tuple of kinds."""
        if name == 'all':
            return tuple(cls)
        try:
            return (cls(name),)
        except ValueError:
            raise ConfigError(
                f"Unknown estimator '{name}'\n"
                f"Choose one of: {', '.join(k.value for k in cls)}, all"
            ) from None


class PerturbationKind(Enum):
    NONE = 'none'
    OFFSET = 'offset'        # amplitude is a fraction of the spacing a, applied along x
    HWHM_SCALE = 'hwhm'      # amplitude multiplies the PSF HWHM


@dataclass(frozen=True)
class Perturbation:
    """
    Calibration error applied to the estimator's assumed geometry or PSF.
    Image generation always uses the true calibration.
    """
    kind: PerturbationKind = PerturbationKind.NONE
    amplitude: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise ConfigError(f"Perturbation amplitude must be finite, got {self.amplitude!r}")
        if self.kind is PerturbationKind.HWHM_SCALE and not self.amplitude > 0:
            raise ConfigError(f"HWHM scale factor must be positive, got {self.amplitude!r}")

    @property
    def is_identity(self) -> bool:
        if self.kind is PerturbationKind.NONE:
            return True
        if self.kind is PerturbationKind.OFFSET:
            return self.amplitude == 0.0
        return self.amplitude == 1.0

    def margin_offset(self, spacing_a: float) -> float:
        """Site displacement (pixels) the image margin has to absorb."""
        return abs(self.amplitude) * spacing_a if self.kind is PerturbationKind.OFFSET else 0.0

    def apply(self, geometry: ArrayGeometry, psf: PsfModel) -> Tuple[ArrayGeometry, PsfModel]:
        """The (geometry, psf) the estimator assumes."""
        if self.kind is PerturbationKind.OFFSET:
            return geometry.perturbed(dx=self.amplitude * geometry.spacing_a), psf
        if self.kind is PerturbationKind.HWHM_SCALE:
            return geometry, psf.scaled(self.amplitude)
        return geometry, psf


@dataclass(frozen=True)
class Scenario:
    """
    One benchmark cell: the physical scenario plus how to run it.

    Attributes:
        config (ScenarioConfig): Image parameters and master seed
        ensemble (int): Number of test images
        estimators (tuple): Estimators to benchmark
        threads (int): Worker threads for the ensemble
        gmm_enabled (bool): Fit the mixture (needed for the a posteriori OLE)
        retune (bool): Recalibrate on every image instead of reusing the first image's calibration
        perturbation (Perturbation): Calibration error seen by the estimators
        tag (str): Free label carried into the records (sweep cut lines)
    """
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    ensemble: int = 100
    estimators: Tuple[EstimatorKind, ...] = tuple(EstimatorKind)
    threads: int = 1
    gmm_enabled: bool = True
    retune: bool = False
    perturbation: Perturbation = field(default_factory=Perturbation)
    tag: str = 'grid'

    def __post_init__(self):
        if int(self.ensemble) != self.ensemble or self.ensemble < 1:
            raise ConfigError(f"Ensemble size must be a positive integer, got {self.ensemble!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads!r}")
        if not self.estimators:
            raise ConfigError("Select at least one estimator")
        object.__setattr__(self, 'estimators', tuple(EstimatorKind(e) for e in self.estimators))

    def true_psf(self) -> PsfModel:
        return self.config.psf()

    def true_geometry(self) -> ArrayGeometry:
        """Image frame wide enough for the perturbed site positions too."""
        extra = self.perturbation.margin_offset(self.config.spacing_a)
        psf = self.true_psf()
        if self.perturbation.kind is PerturbationKind.HWHM_SCALE and self.perturbation.amplitude > 1:
            psf = psf.scaled(self.perturbation.amplitude)
        return self.config.geometry(extra_offset=extra, psf=psf)

    def assumed(self) -> Tuple[ArrayGeometry, PsfModel]:
        return self.perturbation.apply(self.true_geometry(), self.true_psf())

    def with_overrides(self, **kwargs: Any) -> 'Scenario':
        """Override scenario parameters (config keys) and run options in one call."""
        config_keys = {k: kwargs.pop(k) for k in list(kwargs) if k in ScenarioConfig.__dataclass_fields__}
        scenario = replace(self, **kwargs) if kwargs else self
        return replace(scenario, config=scenario.config.with_overrides(**config_keys)) if config_keys else scenario

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self.config.to_dict(),
            'ensemble': self.ensemble,
            'estimators': ','.join(e.value for e in self.estimators),
            'gmm_enabled': self.gmm_enabled,
            'retune': self.retune,
            'perturbation': self.perturbation.kind.value,
            'amplitude': self.perturbation.amplitude,
            'tag': self.tag,
        }


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorStats:
    """Ensemble statistics of one estimator."""
    der_mean: float
    der_std: float
    runtime_ms: float
    cg_iter_mean: float = float('nan')
    gmm_der_mean: float = float('nan')

    def __post_init__(self):
        if self.der_std < 0 and not math.isnan(self.der_std):
            raise ValueError(f"der_std must be non-negative, got {self.der_std}")

    @classmethod
    def from_samples(cls, ders: Sequence[float], runtimes_ms: Sequence[float],
                     cg_iterations: Sequence[float] = (), gmm_ders: Sequence[float] = ()) -> 'EstimatorStats':
        """
        Mean and unbiased std of the DER, median runtime, mean CG iterations.
        A single image reports std 0.
        """
        ders = np.asarray(ders, dtype=float)
        std = float(np.std(ders, ddof=1)) if ders.size > 1 else 0.0
        gmm = np.asarray([d for d in gmm_ders if not math.isnan(d)], dtype=float)
        return cls(der_mean=float(np.mean(ders)), der_std=std,
                   runtime_ms=float(np.median(runtimes_ms)),
                   cg_iter_mean=float(np.mean(cg_iterations)) if len(cg_iterations) else float('nan'),
                   gmm_der_mean=float(np.mean(gmm)) if gmm.size else float('nan'))


STAT_FIELDS = ('der_mean', 'der_std', 'runtime_ms', 'cg_iter_mean', 'gmm_der_mean')
TIMING_COLUMNS = tuple(f"{kind.value}_runtime_ms" for kind in EstimatorKind)


@dataclass(frozen=True)
class BenchRecord:
    """One row of a benchmark table."""
    scenario: Dict[str, Any]
    stats: Dict[EstimatorKind, EstimatorStats]
    snr_db: float
    n_images: int
    n_sites: int

    def der(self, kind: EstimatorKind) -> float:
        return self.stats[kind].der_mean

    def pooled_std(self, *kinds: EstimatorKind) -> float:
        """sqrt of the mean variance of the selected estimators' ensemble means."""
        variances = [self.stats[k].der_std ** 2 / self.n_images for k in kinds]
        return math.sqrt(sum(variances) / len(variances))

    def to_row(self) -> Dict[str, Any]:
        row = dict(self.scenario)
        row['n_sites'] = self.n_sites
        row['n_images'] = self.n_images
        row['snr_db'] = self.snr_db
        for kind in EstimatorKind:
            stats = self.stats.get(kind)
            for name in STAT_FIELDS:
                row[f"{kind.value}_{name}"] = getattr(stats, name) if stats is not None else float('nan')
        return row


def records_frame(records: Iterable[BenchRecord], drop_timing: bool = False) -> pd.DataFrame:
    frame = pd.DataFrame([r.to_row() for r in records])
    if drop_timing:
        frame = frame.drop(columns=[c for c in TIMING_COLUMNS if c in frame.columns])
    return frame


def write_table(records: Union[Iterable[BenchRecord], pd.DataFrame], path: Union[str, Path],
                drop_timing: bool = False) -> Path:
    """Write records as CSV (header row, one row per record)."""
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records, drop_timing)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.10g')
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)
