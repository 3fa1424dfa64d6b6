# synthetic.py
# Description: Labelled synthetic test images: y ~ Poisson(Mx + k) + Normal(0, r^2).

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
import scipy.sparse as sp

from Model.scenario import ArrayGeometry, BrightnessModel, PsfModel
from Tools.errors import DimensionError

if TYPE_CHECKING:
    from Forward.measurement_matrix import MeasurementMatrix

logger = logging.getLogger(__name__)


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.flags.writeable = False
    return values


def image_seed(master_seed: int, image_index: int) -> int:
    """Per-image 64-bit seed hashed from (master_seed, image_index)."""
    state = np.random.SeedSequence([int(master_seed), int(image_index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class GroundTruth:
    """Per-site occupancy labels and true brightnesses (counts/site)."""
    occupied: np.ndarray
    brightness_x: np.ndarray

    def __post_init__(self):
        occupied = np.asarray(self.occupied, dtype=bool)
        brightness = np.asarray(self.brightness_x, dtype=float)
        if occupied.shape != brightness.shape or occupied.ndim != 1:
            raise DimensionError(
                f"occupied {occupied.shape} and brightness_x {brightness.shape} must be equal-length vectors"
            )
        if np.any(brightness < 0) or np.any(brightness[~occupied] != 0):
            raise ValueError("Brightness must be >= 0 and exactly 0 on empty sites")
        object.__setattr__(self, 'occupied', _readonly(occupied))
        object.__setattr__(self, 'brightness_x', _readonly(brightness))

    @property
    def n_sites(self) -> int:
        return self.occupied.size

    @property
    def n_occupied(self) -> int:
        return int(self.occupied.sum())


@dataclass(frozen=True)
class ImageSample:
    """Pixel vector y (row-major over the image) with optional ground truth."""
    pixels_y: np.ndarray
    geometry: ArrayGeometry
    truth: Optional[GroundTruth] = None
    seed: Optional[int] = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels_y, dtype=float).ravel()
        if pixels.size != self.geometry.n_pixels:
            raise DimensionError(
                f"Image has {pixels.size} pixels but the geometry expects "
                f"{self.geometry.width} x {self.geometry.height} = {self.geometry.n_pixels}"
            )
        if not np.all(np.isfinite(pixels)):
            raise ValueError("Image pixel values must be finite")
        if self.truth is not None and self.truth.n_sites != self.geometry.n_sites:
            raise DimensionError(
                f"Ground truth has {self.truth.n_sites} sites, geometry has {self.geometry.n_sites}"
            )
        object.__setattr__(self, 'pixels_y', _readonly(pixels))

    def as_grid(self) -> np.ndarray:
        """Pixels as a (height, width) array."""
        return self.pixels_y.reshape(self.geometry.shape)

    def background_subtracted(self, k: float) -> np.ndarray:
        """y - k, the convention every estimator works with."""
        return self.pixels_y - k


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def sample_ground_truth(geometry: ArrayGeometry, model: BrightnessModel, seed: int) -> GroundTruth:
    """
    Draw independent occupancies (probability p) and Normal(mu, sigma^2) brightnesses,
    clamped at zero, for every site.
    """
    rng = np.random.default_rng(seed)
    n = geometry.n_sites
    occupied = rng.random(n) < model.p
    draws = rng.normal(model.mu, model.sigma, n)
    brightness = np.where(occupied, np.maximum(draws, 0.0), 0.0)
    return GroundTruth(occupied=occupied, brightness_x=brightness)


def render_noiseless(M: Union['MeasurementMatrix', sp.spmatrix], truth: GroundTruth, k: float) -> np.ndarray:
    """
    Expected pixel counts M x + k.

    Raises:
        DimensionError: If M does not have one column per site
    """
    matrix = getattr(M, 'matrix', M)
    if matrix.shape[1] != truth.n_sites:
        raise DimensionError(
            f"Measurement matrix has {matrix.shape[1]} columns but the truth has {truth.n_sites} sites"
        )
    if k < 0:
        raise ValueError(f"Background k must be non-negative, got {k}")
    return np.asarray(matrix @ truth.brightness_x, dtype=float) + k


def apply_noise(noiseless: np.ndarray, r: float, seed: int) -> np.ndarray:
    """
    Poisson shot noise on every pixel plus Normal(0, r^2) read noise.

    Raises:
        ValueError: If some expected count is negative or not finite
    """
    noiseless = np.asarray(noiseless, dtype=float)
    if not np.all(np.isfinite(noiseless)) or np.any(noiseless < 0):
        bad = int(np.flatnonzero(~(noiseless >= 0))[0]) if np.any(~(noiseless >= 0)) else -1
        raise ValueError(f"Poisson means must be finite and non-negative (first bad pixel: {bad})")
    if r < 0:
        raise ValueError(f"Read noise r must be non-negative, got {r}")
    rng = np.random.default_rng(seed)
    shot = rng.poisson(noiseless).astype(float)
    return shot + rng.normal(0.0, r, noiseless.shape)


def generate_test_image(geometry: ArrayGeometry, psf: PsfModel, model: BrightnessModel, seed: int,
                        M: Optional['MeasurementMatrix'] = None) -> ImageSample:
    """
    Generate one labelled image.

    Args:
        geometry (ArrayGeometry): Site grid and image frame
        psf (PsfModel): PSF used to render the image
        model (BrightnessModel): Occupancy, brightness and noise parameters
        seed (int): 64-bit image seed; truth and noise use independent child streams
        M (MeasurementMatrix, optional): Cached matrix for (geometry, psf)

    Returns:
        ImageSample: Noisy pixels with attached ground truth and seed
    """
    if M is None:
        # Forward imports Model.scenario, so the builder is imported lazily
        from Forward.measurement_matrix import build_measurement_matrix
        M = build_measurement_matrix(geometry, psf)
    truth_seed, noise_seed = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    truth = sample_ground_truth(geometry, model, int(truth_seed))
    noiseless = render_noiseless(M, truth, model.background_k)
    pixels = apply_noise(noiseless, model.read_noise_r, int(noise_seed))
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Generated image seed={seed}: {truth.n_occupied}/{truth.n_sites} occupied, "
                     f"mean pixel {pixels.mean():.3f}")
    return ImageSample(pixels_y=pixels, geometry=geometry, truth=truth, seed=int(seed))
