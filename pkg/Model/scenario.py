# scenario.py
# Description: Experiment parameterization: site grid, PSF, brightness statistics and the
# JSON scenario file that bundles them.

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from Tools.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# helper types
# ---------------------------------------------------------------------------

Offset = Tuple[float, float]   # (dx, dy) in pixels

# one pixel is a unit square centred on its integer coordinates
HALF_DIAGONAL = math.sqrt(2.0) / 2.0
TRUNCATION_FACTOR = 3.0
# Gaussian HWHM -> Airy-disk radius, assuming equal HWHM
AIRY_CONVERSION = 2.4


@dataclass(frozen=True)
class PsfModel:
    """Isotropic Gaussian PSF, unit area, truncated at 3 x HWHM."""
    hwhm: float

    def __post_init__(self):
        if not (math.isfinite(self.hwhm) and self.hwhm > 0):
            raise ValueError(f"PSF HWHM must be a positive finite number, got {self.hwhm!r}")

    @property
    def truncation_radius(self) -> float:
        return TRUNCATION_FACTOR * self.hwhm

    @property
    def sigma(self) -> float:
        """Gaussian standard deviation matching the HWHM."""
        return self.hwhm / math.sqrt(2.0 * math.log(2.0))

    def airy_radius(self) -> float:
        """Radius of the Airy disk with the same HWHM (documentation only)."""
        return AIRY_CONVERSION * self.hwhm

    def scaled(self, factor: float) -> 'PsfModel':
        return PsfModel(hwhm=self.hwhm * factor)


@dataclass(frozen=True)
class ArrayGeometry:
    """
    Square lattice of n_rows x n_cols sites with spacing `spacing_a` pixels.

    Site (r, c) sits at x = margin + dx + c*a, y = margin + dy + r*a, with pixel
    (i, j) centred on (x=j, y=i). Sites are indexed row-major: s = r*n_cols + c.
    """
    n_rows: int
    n_cols: int
    spacing_a: float
    offset: Offset = (0.0, 0.0)
    margin: int = 0

    def __post_init__(self):
        if int(self.n_rows) != self.n_rows or self.n_rows < 1:
            raise GeometryError(f"n_rows must be a positive integer, got {self.n_rows!r}")
        if int(self.n_cols) != self.n_cols or self.n_cols < 1:
            raise GeometryError(f"n_cols must be a positive integer, got {self.n_cols!r}")
        if not (math.isfinite(self.spacing_a) and self.spacing_a > 0):
            raise GeometryError(f"spacing_a must be positive and finite, got {self.spacing_a!r}")
        if len(self.offset) != 2 or not all(math.isfinite(o) for o in self.offset):
            raise GeometryError(f"offset must be a finite (dx, dy) pair, got {self.offset!r}")
        if int(self.margin) != self.margin or self.margin < 0:
            raise GeometryError(f"margin must be a non-negative integer, got {self.margin!r}")
        object.__setattr__(self, 'offset', (float(self.offset[0]), float(self.offset[1])))

    # -----------------------------------------------------------------------
    # derived sizes
    # -----------------------------------------------------------------------

    @staticmethod
    def _span(n: int, a: float) -> int:
        return int(math.ceil((n - 1) * a - 1e-9))

    @property
    def width(self) -> int:
        return 2 * self.margin + self._span(self.n_cols, self.spacing_a) + 1

    @property
    def height(self) -> int:
        return 2 * self.margin + self._span(self.n_rows, self.spacing_a) + 1

    @property
    def shape(self) -> Tuple[int, int]:
        """Image shape as (height, width)."""
        return self.height, self.width

    @property
    def n_sites(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def site_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (x, y) pixel coordinates of every site, row-major."""
        rows, cols = np.divmod(np.arange(self.n_sites), self.n_cols)
        x = self.margin + self.offset[0] + cols * self.spacing_a
        y = self.margin + self.offset[1] + rows * self.spacing_a
        return x.astype(float), y.astype(float)

    # -----------------------------------------------------------------------
    # PSF containment
    # -----------------------------------------------------------------------

    @staticmethod
    def required_margin(psf: PsfModel, max_offset: float = 0.0) -> int:
        """Smallest margin keeping every truncated PSF inside the image."""
        return int(math.ceil(psf.truncation_radius + abs(max_offset) - 1e-12))

    @staticmethod
    def default_margin(psf: PsfModel, max_offset: float = 0.0) -> int:
        return int(math.ceil(psf.truncation_radius)) + int(math.ceil(abs(max_offset)))

    def check_containment(self, psf: PsfModel) -> None:
        """
        Raises:
            GeometryError: If some site's truncation disk could leave the image
        """
        needed = self.required_margin(psf, max(abs(self.offset[0]), abs(self.offset[1])))
        if self.margin < needed:
            raise GeometryError(
                f"Margin {self.margin} px is too small for PSF HWHM {psf.hwhm} "
                f"and offset {self.offset}: need at least {needed} px"
            )

    @classmethod
    def create(cls, n_rows: int, n_cols: int, spacing_a: float, psf: PsfModel,
               offset: Offset = (0.0, 0.0), extra_offset: float = 0.0) -> 'ArrayGeometry':
        """
        Build a geometry with the default margin for `psf`.

        Args:
            extra_offset (float): Additional site displacement the margin must absorb
                (calibration perturbations applied later with `perturbed`).
        """
        max_offset = max(abs(offset[0]), abs(offset[1])) + abs(extra_offset)
        return cls(n_rows, n_cols, spacing_a, offset, cls.default_margin(psf, max_offset))

    def perturbed(self, dx: float = 0.0, dy: float = 0.0) -> 'ArrayGeometry':
        """Same image frame, site positions shifted by (dx, dy)."""
        return replace(self, offset=(self.offset[0] + dx, self.offset[1] + dy))


@dataclass(frozen=True)
class BrightnessModel:
    """Occupancy and brightness statistics of the sites, plus camera noise."""
    p: float
    mu: float
    sigma: float
    background_k: float = 0.0
    read_noise_r: float = 0.0

    def __post_init__(self):
        values = asdict(self)
        bad = [k for k, v in values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"Brightness model fields must be finite: {', '.join(bad)}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Occupancy probability p must lie in [0, 1], got {self.p}")
        negative = [k for k in ('mu', 'sigma', 'background_k', 'read_noise_r') if values[k] < 0]
        if negative:
            raise ValueError(f"Brightness model fields must be non-negative: {', '.join(negative)}")

    @property
    def mean_brightness(self) -> float:
        """<x> = p * mu."""
        return self.p * self.mu


# ---------------------------------------------------------------------------
# the scenario file
# ---------------------------------------------------------------------------

# benchmark scenario defaults
BENCHMARK_DEFAULTS: Dict[str, Any] = {
    'n_rows': 50, 'n_cols': 50, 'spacing_a': 3.0, 'offset_dx': 0.0, 'offset_dy': 0.0,
    'psf_hwhm': 2.0, 'p': 0.6, 'mu': 200.0, 'sigma': 20.0,
    'background_k': 0.0, 'read_noise_r': 1.0, 'seed': 0,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Flat scenario parameters, one-to-one with the JSON configuration keys."""
    n_rows: int = BENCHMARK_DEFAULTS['n_rows']
    n_cols: int = BENCHMARK_DEFAULTS['n_cols']
    spacing_a: float = BENCHMARK_DEFAULTS['spacing_a']
    offset_dx: float = BENCHMARK_DEFAULTS['offset_dx']
    offset_dy: float = BENCHMARK_DEFAULTS['offset_dy']
    psf_hwhm: float = BENCHMARK_DEFAULTS['psf_hwhm']
    p: float = BENCHMARK_DEFAULTS['p']
    mu: float = BENCHMARK_DEFAULTS['mu']
    sigma: float = BENCHMARK_DEFAULTS['sigma']
    background_k: float = BENCHMARK_DEFAULTS['background_k']
    read_noise_r: float = BENCHMARK_DEFAULTS['read_noise_r']
    seed: int = BENCHMARK_DEFAULTS['seed']

    def __post_init__(self):
        if int(self.seed) != self.seed or not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        # validate eagerly so a bad file fails at load time
        self.psf()
        self.brightness()
        ArrayGeometry(self.n_rows, self.n_cols, self.spacing_a, (self.offset_dx, self.offset_dy))

    def psf(self) -> PsfModel:
        return PsfModel(hwhm=float(self.psf_hwhm))

    def brightness(self) -> BrightnessModel:
        return BrightnessModel(p=float(self.p), mu=float(self.mu), sigma=float(self.sigma),
                               background_k=float(self.background_k),
                               read_noise_r=float(self.read_noise_r))

    def geometry(self, extra_offset: float = 0.0, psf: PsfModel = None) -> ArrayGeometry:
        """Geometry with the default margin for this PSF (or a wider `psf`)."""
        return ArrayGeometry.create(int(self.n_rows), int(self.n_cols), float(self.spacing_a),
                                    psf or self.psf(), (float(self.offset_dx), float(self.offset_dy)),
                                    extra_offset=extra_offset)

    def with_overrides(self, **kwargs: Any) -> 'ScenarioConfig':
        unknown = set(kwargs) - set(BENCHMARK_DEFAULTS)
        if unknown:
            raise ConfigError(f"Unknown scenario keys: {', '.join(sorted(unknown))}")
        return replace(self, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """
        Build a scenario from a parsed JSON object.

        Raises:
            ConfigError: If the object has unknown keys or invalid values
        """
        if not isinstance(data, dict):
            raise ConfigError(f"Scenario must be a JSON object, got {type(data).__name__}")
        unknown = set(data) - set(BENCHMARK_DEFAULTS)
        if unknown:
            raise ConfigError(
                f"Unknown scenario keys: {', '.join(sorted(unknown))}\n"
                f"Allowed keys: {', '.join(BENCHMARK_DEFAULTS)}"
            )
        missing = [k for k in BENCHMARK_DEFAULTS if k not in data]
        if missing and logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Scenario keys defaulted to the benchmark values: {missing}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid scenario: {e}") from e

    @classmethod
    def from_json(cls, path: str) -> 'ScenarioConfig':
        with open(path, 'r') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Scenario file {path} is not valid JSON: {e}") from e
        logger.info(f"Loaded scenario from {path}")
        return cls.from_dict(data)

    def save(self, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)


def load_scenario(path: str = None) -> ScenarioConfig:
    """Scenario from `path`, or the default benchmark scenario when no path is given."""
    return ScenarioConfig.from_json(path) if path else ScenarioConfig()
