# image_io.py
# Description: Image and ground-truth file formats: 16-bit PGM with a JSON sidecar,
# raw little-endian float64 with a JSON header, and the truth CSV table.

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from Model.scenario import ArrayGeometry
from Model.synthetic import GroundTruth, ImageSample
from Tools.errors import DimensionError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PGM_MAXVAL = 65535
TRUTH_COLUMNS = ['site', 'row', 'col', 'occupied', 'brightness']


def _sidecar(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.json')


def _as_grid(image: Union[ImageSample, np.ndarray]) -> np.ndarray:
    if isinstance(image, ImageSample):
        return image.as_grid()
    grid = np.asarray(image, dtype=float)
    if grid.ndim != 2:
        raise DimensionError(f"Expected a 2-D image grid, got shape {grid.shape}")
    return grid


# ---------------------------------------------------------------------------
# PGM (P5, 16 bit, big endian)
# ---------------------------------------------------------------------------

def write_pgm(image: Union[ImageSample, np.ndarray], path: PathLike) -> Dict[str, Any]:
    """
    Quantize an image linearly to 0..65535 and write it as binary PGM.

    The sidecar `<path>.json` records `scale` and `offset` so that
    value = stored / scale + offset.

    Returns:
        dict: The sidecar contents
    """
    grid = _as_grid(image)
    lo, hi = float(grid.min()), float(grid.max())
    scale = PGM_MAXVAL / (hi - lo) if hi > lo else 1.0
    quantized = np.clip(np.rint((grid - lo) * scale), 0, PGM_MAXVAL).astype('>u2')

    height, width = grid.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode('ascii'))
        f.write(quantized.tobytes())

    meta = {'width': width, 'height': height, 'scale': scale, 'offset': lo}
    if isinstance(image, ImageSample) and image.seed is not None:
        meta['seed'] = image.seed
    with open(_sidecar(path), 'w') as f:
        json.dump(meta, f, indent=2)
    logger.debug(f"Wrote PGM {path} ({width}x{height}, scale={scale:.6g}, offset={lo:.6g})")
    return meta


def _pgm_header(data: bytes) -> Tuple[int, int, int, int]:
    """Parse magic, width, height, maxval; return them with the pixel data offset."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b'P5':
        raise ValueError(f"Not a binary PGM file (magic {tokens[0]!r})")
    # exactly one whitespace byte separates the header from the raster
    return int(tokens[1]), int(tokens[2]), int(tokens[3]), pos + 1


def read_pgm(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Read a PGM written by `write_pgm`, undoing the quantization when a sidecar exists.

    Returns:
        tuple: (grid as float64 (height, width), sidecar metadata or {})
    """
    path = Path(path)
    data = path.read_bytes()
    width, height, maxval, offset = _pgm_header(data)
    dtype = '>u2' if maxval > 255 else 'u1'
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset).astype(float)
    grid = raw.reshape(height, width)

    meta: Dict[str, Any] = {}
    sidecar = _sidecar(path)
    if sidecar.exists():
        with open(sidecar, 'r') as f:
            meta = json.load(f)
        grid = grid / meta.get('scale', 1.0) + meta.get('offset', 0.0)
    else:
        logger.warning(f"No sidecar for {path}; returning raw quantized counts")
    return grid, meta


# ---------------------------------------------------------------------------
# raw float64
# ---------------------------------------------------------------------------

def write_raw(image: Union[ImageSample, np.ndarray], path: PathLike) -> None:
    """Write little-endian float64 pixels (row-major) plus a JSON header `<path>.json`."""
    grid = _as_grid(image)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid.astype('<f8').tofile(path)
    header = {'width': grid.shape[1], 'height': grid.shape[0], 'dtype': '<f8'}
    if isinstance(image, ImageSample) and image.seed is not None:
        header['seed'] = image.seed
    with open(_sidecar(path), 'w') as f:
        json.dump(header, f, indent=2)


def read_raw(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    path = Path(path)
    with open(_sidecar(path), 'r') as f:
        header = json.load(f)
    values = np.fromfile(path, dtype=header.get('dtype', '<f8'))
    expected = header['width'] * header['height']
    if values.size != expected:
        raise DimensionError(
            f"{path} holds {values.size} values but its header says {header['width']} x {header['height']}"
        )
    return values.reshape(header['height'], header['width']).astype(float), header


# ---------------------------------------------------------------------------
# ground truth table
# ---------------------------------------------------------------------------

def truth_frame(truth: GroundTruth, geometry: ArrayGeometry) -> pd.DataFrame:
    rows, cols = np.divmod(np.arange(truth.n_sites), geometry.n_cols)
    return pd.DataFrame({
        'site': np.arange(truth.n_sites),
        'row': rows,
        'col': cols,
        'occupied': truth.occupied.astype(int),
        'brightness': truth.brightness_x,
    }, columns=TRUTH_COLUMNS)


def write_truth(truth: GroundTruth, geometry: ArrayGeometry, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    truth_frame(truth, geometry).to_csv(path, index=False, float_format='%.17g')


def read_truth(path: PathLike) -> GroundTruth:
    df = pd.read_csv(path)
    missing = [c for c in TRUTH_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"Truth file {path} is missing columns: {', '.join(missing)}")
    df = df.sort_values('site')
    return GroundTruth(occupied=df['occupied'].to_numpy().astype(bool),
                       brightness_x=df['brightness'].to_numpy(dtype=float))


# ---------------------------------------------------------------------------
# convenience
# ---------------------------------------------------------------------------

def save_sample(sample: ImageSample, stem: PathLike, fmt: str = 'raw') -> Dict[str, Path]:
    """
    Write an image (raw or pgm) and, when present, its truth table next to it.

    Returns:
        dict: Written paths keyed by 'image' and 'truth'
    """
    stem = Path(stem)
    written: Dict[str, Path] = {}
    if fmt == 'raw':
        written['image'] = stem.with_suffix('.raw')
        write_raw(sample, written['image'])
    elif fmt == 'pgm':
        written['image'] = stem.with_suffix('.pgm')
        write_pgm(sample, written['image'])
    else:
        raise ValueError(f"Unknown image format {fmt!r}: expected 'raw' or 'pgm'")
    if sample.truth is not None:
        written['truth'] = stem.with_name(stem.name + '_truth.csv')
        write_truth(sample.truth, sample.geometry, written['truth'])
    return written


def load_sample(path: PathLike, geometry: ArrayGeometry, truth_path: Optional[PathLike] = None) -> ImageSample:
    """Load an image file (by extension) as an ImageSample on `geometry`."""
    path = Path(path)
    if path.suffix == '.pgm':
        grid, meta = read_pgm(path)
    else:
        grid, meta = read_raw(path)
    if grid.shape != geometry.shape:
        raise DimensionError(f"Image {path} is {grid.shape[::-1]} (w x h), geometry expects "
                             f"{geometry.width} x {geometry.height}")
    truth = read_truth(truth_path) if truth_path else None
    return ImageSample(pixels_y=grid.ravel(), geometry=geometry, truth=truth, seed=meta.get('seed'))
