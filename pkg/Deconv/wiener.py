# wiener.py
# Description: Baseline estimator: Wiener deconvolution of the whole image, smoothing with an
# antialiased disk, and bilinear sampling at the site coordinates.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict, replace
from functools import lru_cache
from typing import Any, Dict

import numpy as np
from scipy import ndimage
from skimage.restoration import wiener

from Forward.measurement_matrix import pixel_psf_integral
from Model.scenario import HALF_DIAGONAL, ArrayGeometry, PsfModel
from Model.synthetic import ImageSample
from Tools.errors import GeometryError

logger = logging.getLogger(__name__)

SUBSAMPLES = 4


@dataclass(frozen=True)
class DeconvConfig:
    """
    Hyperparameters of the deconvolution estimator.

    `gain` and `bias` map the raw output onto the brightness scale:
    x = gain * raw + bias.
    """
    lam: float
    disk_radius_d: float
    gain: float = 1.0
    bias: float = 0.0

    def __post_init__(self):
        for name in ('lam', 'disk_radius_d'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"DeconvConfig.{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.gain) and self.gain != 0 and math.isfinite(self.bias)):
            raise ValueError(f"DeconvConfig gain/bias must be finite with gain != 0, got {self.gain}, {self.bias}")

    def recalibrated(self, gain: float, bias: float) -> 'DeconvConfig':
        return replace(self, gain=float(gain), bias=float(bias))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DeconvConfig':
        return cls(**data)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def psf_kernel(hwhm: float) -> np.ndarray:
    """Pixel-integrated truncated Gaussian centred on the middle pixel, unit sum."""
    psf = PsfModel(hwhm=hwhm)
    half = int(math.ceil(psf.truncation_radius + HALF_DIAGONAL))
    size = 2 * half + 1
    kernel = np.array([[pixel_psf_integral((half, half), (i, j), hwhm) for j in range(size)]
                       for i in range(size)])
    kernel /= kernel.sum()
    kernel.flags.writeable = False
    return kernel


@lru_cache(maxsize=64)
def disk_kernel(d: float) -> np.ndarray:
    """
    Area-normalized disk of radius d; each pixel weighs the fraction of its
    4 x 4 subsample grid that falls inside the disk. A disk too small to cover
    any subsample degenerates to the centre pixel.
    """
    if not (math.isfinite(d) and d > 0):
        raise ValueError(f"Disk radius must be positive and finite, got {d!r}")
    half = int(math.ceil(d))
    offsets = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES - 0.5
    grid = np.arange(-half, half + 1)
    # (pixel row, pixel col, sub row, sub col)
    sy = grid[:, None, None, None] + offsets[None, None, :, None]
    sx = grid[None, :, None, None] + offsets[None, None, None, :]
    inside = (sx ** 2 + sy ** 2) <= d * d
    kernel = inside.mean(axis=(2, 3))
    if kernel.sum() == 0:
        kernel = np.zeros_like(kernel)
        kernel[half, half] = 1.0
    kernel = kernel / kernel.sum()
    kernel.flags.writeable = False
    return kernel


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def wiener_deconvolve(image: np.ndarray, psf: PsfModel, lam: float) -> np.ndarray:
    """
    Wiener deconvolution with a uniform regularization lam in reciprocal space:
    inverse transform of conj(OTF) Y / (|OTF|^2 + lam).

    The image is reflect-padded by half the kernel size before the transform
    and cropped afterwards.

    Raises:
        ValueError: If lam <= 0 or the image is not 2-D
    """
    if not (math.isfinite(lam) and lam > 0):
        raise ValueError(f"Wiener regularization lambda must be positive, got {lam!r}")
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"Expected a 2-D image, got shape {image.shape}")
    kernel = psf_kernel(psf.hwhm)
    half = kernel.shape[0] // 2
    padded = np.pad(image, half, mode='symmetric')
    # a complex reg is taken as a transfer function; |reg| = 1 gives the uniform regularizer
    reg = np.ones((padded.shape[0], padded.shape[1] // 2 + 1), dtype=complex)
    filtered = wiener(padded, kernel, balance=lam, reg=reg, is_real=True, clip=False)
    return filtered[half:half + image.shape[0], half:half + image.shape[1]]


def disk_extract(filtered: np.ndarray, geometry: ArrayGeometry, d: float) -> np.ndarray:
    """
    Smooth with the antialiased disk of radius d and read the result at each
    site by bilinear interpolation.

    Raises:
        GeometryError: If a site lies outside the grid
    """
    filtered = np.asarray(filtered, dtype=float)
    x, y = geometry.site_coordinates()
    height, width = filtered.shape
    outside = (x < 0) | (x > width - 1) | (y < 0) | (y > height - 1)
    if np.any(outside):
        site = int(np.flatnonzero(outside)[0])
        raise GeometryError(f"Site {site} at ({x[site]:.3f}, {y[site]:.3f}) lies outside the "
                            f"{width} x {height} grid")
    smoothed = ndimage.convolve(filtered, disk_kernel(float(d)), mode='reflect')
    return ndimage.map_coordinates(smoothed, [y, x], order=1, mode='nearest')


def deconv_estimate(image: ImageSample, geometry: ArrayGeometry, psf: PsfModel, config: DeconvConfig,
                    remove_mean: bool = True) -> np.ndarray:
    """
    Brightness estimates from the deconvolution baseline.

    Args:
        image (ImageSample): Image to estimate
        geometry (ArrayGeometry): Assumed site positions
        psf (PsfModel): Assumed PSF
        config (DeconvConfig): lambda, disk radius and the affine recalibration
        remove_mean (bool): Subtract the mean pixel value first; False gives a strictly linear map

    Returns:
        np.ndarray: One estimate per site
    """
    grid = image.as_grid() if isinstance(image, ImageSample) else np.asarray(image, dtype=float)
    if remove_mean:
        grid = grid - grid.mean()
    raw = disk_extract(wiener_deconvolve(grid, psf, config.lam), geometry, config.disk_radius_d)
    return config.gain * raw + config.bias
