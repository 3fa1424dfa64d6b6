# measurement_matrix.py
# Description: Sparse forward operator M (pixels x sites) built from exact pixel integrals
# of a truncated Gaussian PSF, its Gram matrix M^T M, and Matrix Market export.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.special import erf

from Model.scenario import HALF_DIAGONAL, ArrayGeometry, PsfModel
from Tools.errors import DimensionError

logger = logging.getLogger(__name__)

# sites assembled per vectorized block
ASSEMBLY_CHUNK = 4096


@dataclass(frozen=True)
class MeasurementMatrix:
    """CSR matrix of shape (N_p, N_s) with unit column sums, plus its provenance."""
    matrix: sp.csr_matrix
    geometry: ArrayGeometry
    psf: PsfModel

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def dot(self, x: np.ndarray) -> np.ndarray:
        """M x"""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_sites:
            raise DimensionError(f"Expected a site vector of length {self.n_sites}, got {x.shape[0]}")
        return self.matrix @ x

    def rdot(self, y: np.ndarray) -> np.ndarray:
        """M^T y"""
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n_pixels:
            raise DimensionError(f"Expected a pixel vector of length {self.n_pixels}, got {y.shape[0]}")
        return self.matrix.T @ y


@dataclass(frozen=True)
class GramMatrix:
    """Unweighted Gram matrix M^T M in CSR form (symmetric PSD)."""
    matrix: sp.csr_matrix

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


# ---------------------------------------------------------------------------
# pixel integrals
# ---------------------------------------------------------------------------

def _interval_mass(lower: np.ndarray, upper: np.ndarray, sigma: float) -> np.ndarray:
    """Mass of a unit 1-D Gaussian N(0, sigma^2) between `lower` and `upper`."""
    scale = sigma * math.sqrt(2.0)
    return 0.5 * (erf(upper / scale) - erf(lower / scale))


def pixel_psf_integral(site_center: Tuple[float, float], pixel_index: Tuple[int, int], hwhm: float) -> float:
    """
    Integral of the unit-area Gaussian PSF centred on `site_center` = (x, y)
    over pixel `pixel_index` = (row i, col j), whose centre is (x=j, y=i).

    Returns 0 when the pixel centre is farther than the truncation radius plus
    the pixel half-diagonal. No column renormalization is applied here.
    """
    psf = PsfModel(hwhm=hwhm)
    x, y = site_center
    i, j = pixel_index
    if math.hypot(j - x, i - y) > psf.truncation_radius + HALF_DIAGONAL:
        return 0.0
    wx = _interval_mass(np.array(j - 0.5 - x), np.array(j + 0.5 - x), psf.sigma)
    wy = _interval_mass(np.array(i - 0.5 - y), np.array(i + 0.5 - y), psf.sigma)
    return float(wx * wy)


def column_footprint_bound(psf: PsfModel, pixel_centred: bool = False) -> int:
    """
    Most nonzeros one column of M can hold: the pixels of the square bounding
    the cutoff disk of radius c = truncation radius + half-diagonal.

    A site on a pixel centre sees 2 floor(c) + 1 pixels per axis (169 at
    HWHM 2); a site at a fractional position sees up to floor(2c) + 1 (196).
    """
    cutoff = psf.truncation_radius + HALF_DIAGONAL
    per_axis = 2 * math.floor(cutoff) + 1 if pixel_centred else math.floor(2 * cutoff) + 1
    return per_axis ** 2


def _assemble_block(x: np.ndarray, y: np.ndarray, first_site: int, geometry: ArrayGeometry,
                    psf: PsfModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO triplets (pixel, site, weight) for a block of sites."""
    cutoff = psf.truncation_radius + HALF_DIAGONAL
    half_box = int(math.ceil(cutoff)) + 1
    steps = np.arange(-half_box, half_box + 1)

    # per site: candidate pixel columns/rows around the nearest pixel
    cols = np.rint(x)[:, None].astype(np.int64) + steps[None, :]
    rows = np.rint(y)[:, None].astype(np.int64) + steps[None, :]
    dx = cols - x[:, None]
    dy = rows - y[:, None]
    wx = _interval_mass(dx - 0.5, dx + 0.5, psf.sigma)
    wy = _interval_mass(dy - 0.5, dy + 0.5, psf.sigma)

    weights = wy[:, :, None] * wx[:, None, :]
    dist2 = dy[:, :, None] ** 2 + dx[:, None, :] ** 2
    pix_r = np.broadcast_to(rows[:, :, None], weights.shape)
    pix_c = np.broadcast_to(cols[:, None, :], weights.shape)
    keep = ((dist2 <= cutoff * cutoff) & (weights > 0)
            & (pix_r >= 0) & (pix_r < geometry.height) & (pix_c >= 0) & (pix_c < geometry.width))

    site_ids = np.broadcast_to((first_site + np.arange(x.size))[:, None, None], weights.shape)
    pixel_ids = pix_r[keep] * geometry.width + pix_c[keep]
    return pixel_ids, site_ids[keep], weights[keep]


def build_measurement_matrix(geometry: ArrayGeometry, psf: PsfModel) -> MeasurementMatrix:
    """
    Assemble M for every site of `geometry` and renormalize its columns to sum to 1.
    Column nonzeros stay within `column_footprint_bound`.

    Raises:
        GeometryError: If the image margin cannot contain every truncated PSF
    """
    geometry.check_containment(psf)
    xs, ys = geometry.site_coordinates()

    pixels, sites, weights = [], [], []
    for start in range(0, geometry.n_sites, ASSEMBLY_CHUNK):
        stop = min(start + ASSEMBLY_CHUNK, geometry.n_sites)
        p, s, w = _assemble_block(xs[start:stop], ys[start:stop], start, geometry, psf)
        pixels.append(p)
        sites.append(s)
        weights.append(w)
    pixels = np.concatenate(pixels)
    sites = np.concatenate(sites)
    weights = np.concatenate(weights)

    # mass lost beyond the truncation radius is spread back proportionally
    col_mass = np.bincount(sites, weights=weights, minlength=geometry.n_sites)
    weights = weights / col_mass[sites]

    matrix = sp.coo_matrix((weights, (pixels, sites)), shape=(geometry.n_pixels, geometry.n_sites)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()

    if logger.isEnabledFor(logging.DEBUG):
        per_col = np.diff(matrix.tocsc().indptr)
        logger.debug(f"Measurement matrix {matrix.shape[0]} x {matrix.shape[1]}: nnz={matrix.nnz}, "
                     f"max nnz/column={per_col.max()} (bound {column_footprint_bound(psf)}), "
                     f"truncation loss={1 - col_mass.min():.2e}")
    return MeasurementMatrix(matrix=matrix, geometry=geometry, psf=psf)


def build_gram(M: MeasurementMatrix) -> GramMatrix:
    """Sparse M^T M, symmetrized to remove round-off asymmetry."""
    matrix = M.matrix if isinstance(M, MeasurementMatrix) else sp.csr_matrix(M)
    gram = (matrix.T @ matrix).tocsr()
    gram = ((gram + gram.T) * 0.5).tocsr()
    gram.sort_indices()
    logger.debug(f"Gram matrix {gram.shape[0]} x {gram.shape[1]}: nnz={gram.nnz}")
    return GramMatrix(matrix=gram)


def export_matrix_market(matrix: Union[MeasurementMatrix, GramMatrix, sp.spmatrix], path: Union[str, Path],
                         comment: str = '') -> Path:
    """Write a sparse matrix in Matrix Market coordinate format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    target = getattr(matrix, 'matrix', matrix)
    symmetry = 'symmetric' if isinstance(matrix, GramMatrix) else 'general'
    scipy.io.mmwrite(str(path), sp.coo_matrix(target), comment=comment, field='real', symmetry=symmetry)
    # mmwrite appends .mtx when the name has no extension
    return path if path.suffix == '.mtx' else path.with_name(path.name + '.mtx')
