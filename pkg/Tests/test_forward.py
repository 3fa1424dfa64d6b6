import math

import numpy as np
import pytest
import scipy.io
from scipy.integrate import dblquad

from Forward import (build_gram, build_measurement_matrix, column_footprint_bound, export_matrix_market,
                     pixel_psf_integral)
from Model import ArrayGeometry, PsfModel, ScenarioConfig
from Tools.errors import DimensionError, GeometryError


def _gaussian(hwhm):
    sigma = hwhm / math.sqrt(2 * math.log(2))
    return lambda y, x, cx, cy: math.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2)) / (2 * math.pi * sigma ** 2)


@pytest.mark.parametrize('center, pixel', [((0.0, 0.0), (0, 0)), ((0.3, -0.2), (1, 0)), ((1.7, 2.4), (3, 2))])
def test_pixel_integral_matches_quadrature(center, pixel):
    hwhm = 1.3
    g = _gaussian(hwhm)
    i, j = pixel
    expected, _ = dblquad(lambda y, x: g(y, x, *center), j - 0.5, j + 0.5, i - 0.5, i + 0.5,
                          epsabs=1e-12, epsrel=1e-12)
    assert pixel_psf_integral(center, pixel, hwhm) == pytest.approx(expected, abs=1e-6)


def test_pixel_integral_vanishes_beyond_truncation():
    # 3 x HWHM + half diagonal ~ 3.71 for hwhm = 1
    assert pixel_psf_integral((0.0, 0.0), (0, 4), 1.0) == 0.0
    assert pixel_psf_integral((0.0, 0.0), (0, 3), 1.0) > 0.0


def test_column_sums_are_one():
    psf = PsfModel(hwhm=2.0)
    geometry = ArrayGeometry.create(6, 7, 3.0, psf, offset=(0.3, -0.4))
    M = build_measurement_matrix(geometry, psf)
    assert M.shape == (geometry.n_pixels, geometry.n_sites)
    np.testing.assert_allclose(M.column_sums(), 1.0, atol=1e-9)
    assert np.all(M.matrix.data > 0)


def test_entries_are_renormalized_pixel_integrals(tiny_geometry, psf, tiny_matrix):
    x, y = tiny_geometry.site_coordinates()
    dense = tiny_matrix.matrix.toarray()
    site = 4
    col = np.array([pixel_psf_integral((x[site], y[site]), divmod(p, tiny_geometry.width), psf.hwhm)
                    for p in range(tiny_geometry.n_pixels)])
    np.testing.assert_allclose(dense[:, site], col / col.sum(), atol=1e-12)


def test_support_respects_truncation(tiny_geometry, psf, tiny_matrix):
    x, y = tiny_geometry.site_coordinates()
    coo = tiny_matrix.matrix.tocoo()
    rows, cols = np.divmod(coo.row, tiny_geometry.width)
    dist = np.hypot(cols - x[coo.col], rows - y[coo.col])
    assert dist.max() <= psf.truncation_radius + math.sqrt(2) / 2 + 1e-12


def test_default_benchmark_columns_fit_the_pixel_centred_footprint():
    config = ScenarioConfig(n_rows=10, n_cols=10)
    psf = config.psf()
    M = build_measurement_matrix(config.geometry(), psf)
    per_col = np.diff(M.matrix.tocsc().indptr)
    assert column_footprint_bound(psf, pixel_centred=True) == 169
    assert per_col.max() <= 169


def test_fractional_sites_widen_the_footprint():
    psf = PsfModel(hwhm=2.0)
    geometry = ArrayGeometry.create(3, 3, 3.0, psf, offset=(0.5, 0.5))
    M = build_measurement_matrix(geometry, psf).matrix.tocsc()
    assert column_footprint_bound(psf) == 196
    for site in range(geometry.n_sites):
        pixels = M.indices[M.indptr[site]:M.indptr[site + 1]]
        _, cols = np.divmod(pixels, geometry.width)
        assert pixels.size <= 196
        # 14 pixel columns where a pixel-centred site has 13
        assert np.unique(cols).size == 14


def test_shifting_by_one_period_shifts_site_indices():
    psf = PsfModel(hwhm=2.0)
    a = 3.0
    base = ArrayGeometry.create(4, 4, a, psf, offset=(0.25, 0.0), extra_offset=a)
    shifted = base.perturbed(dx=a)
    M0 = build_measurement_matrix(base, psf).matrix.toarray()
    M1 = build_measurement_matrix(shifted, psf).matrix.toarray()
    for row in range(4):
        for col in range(3):
            np.testing.assert_allclose(M1[:, row * 4 + col], M0[:, row * 4 + col + 1], rtol=0, atol=1e-15)


def test_build_rejects_uncontained_psf():
    psf = PsfModel(hwhm=2.0)
    with pytest.raises(GeometryError):
        build_measurement_matrix(ArrayGeometry(3, 3, 3.0, margin=1), psf)


def test_dot_and_rdot_dimensions(tiny_matrix):
    assert tiny_matrix.dot(np.ones(tiny_matrix.n_sites)).shape == (tiny_matrix.n_pixels,)
    assert tiny_matrix.rdot(np.ones(tiny_matrix.n_pixels)).shape == (tiny_matrix.n_sites,)
    with pytest.raises(DimensionError):
        tiny_matrix.dot(np.ones(2))
    with pytest.raises(DimensionError):
        tiny_matrix.rdot(np.ones(2))


def test_gram_matches_dense_product(tiny_matrix):
    gram = build_gram(tiny_matrix)
    dense = tiny_matrix.matrix.toarray()
    np.testing.assert_allclose(gram.matrix.toarray(), dense.T @ dense, atol=1e-14)
    assert abs(gram.matrix - gram.matrix.T).max() == 0.0
    np.testing.assert_allclose(gram.diagonal, np.sum(dense ** 2, axis=0), atol=1e-14)


def test_gram_is_diagonal_when_sites_do_not_overlap():
    psf = PsfModel(hwhm=0.5)
    # truncation disks of radius 1.5 + 0.71 never share a pixel at a = 6
    geometry = ArrayGeometry.create(3, 3, 6.0, psf)
    gram = build_gram(build_measurement_matrix(geometry, psf))
    off = gram.matrix - np.diag(gram.diagonal)
    assert np.abs(off).max() == 0.0


def test_matrix_market_export(tmp_path, tiny_matrix):
    path = export_matrix_market(tiny_matrix, tmp_path / 'M', comment='test matrix')
    assert path.suffix == '.mtx'
    loaded = scipy.io.mmread(str(path))
    np.testing.assert_allclose(loaded.toarray(), tiny_matrix.matrix.toarray(), atol=1e-12)

    gram = build_gram(tiny_matrix)
    gpath = export_matrix_market(gram, tmp_path / 'gram.mtx')
    assert 'symmetric' in gpath.read_text().splitlines()[0]
    np.testing.assert_allclose(scipy.io.mmread(str(gpath)).toarray(), gram.matrix.toarray(), atol=1e-12)
