import numpy as np
import pytest
from scipy.signal import convolve2d

from Deconv import DeconvConfig, deconv_estimate, disk_extract, disk_kernel, psf_kernel, wiener_deconvolve
from Forward import build_measurement_matrix
from Model import ArrayGeometry, GroundTruth, ImageSample, PsfModel, render_noiseless
from Tools.errors import GeometryError


def test_config_validation_and_recalibration():
    config = DeconvConfig(lam=0.1, disk_radius_d=1.0)
    assert (config.gain, config.bias) == (1.0, 0.0)
    scaled = config.recalibrated(2.0, -3.0)
    assert (scaled.gain, scaled.bias) == (2.0, -3.0)
    assert DeconvConfig.from_dict(scaled.to_dict()) == scaled
    with pytest.raises(ValueError):
        DeconvConfig(lam=0.0, disk_radius_d=1.0)
    with pytest.raises(ValueError):
        DeconvConfig(lam=0.1, disk_radius_d=-1.0)
    with pytest.raises(ValueError):
        DeconvConfig(lam=0.1, disk_radius_d=1.0, gain=0.0)


def test_psf_kernel_is_normalized_and_symmetric():
    kernel = psf_kernel(1.5)
    assert kernel.sum() == pytest.approx(1.0)
    assert kernel.shape[0] % 2 == 1
    np.testing.assert_allclose(kernel, kernel.T)
    np.testing.assert_allclose(kernel, kernel[::-1, ::-1])
    assert not kernel.flags.writeable


def test_disk_kernel_area_weights():
    kernel = disk_kernel(2.0)
    assert kernel.sum() == pytest.approx(1.0)
    centre = kernel.shape[0] // 2
    # fully covered centre, uncovered corners
    assert kernel[centre, centre] == kernel.max()
    assert kernel[0, 0] == 0.0


def test_tiny_disk_degenerates_to_delta():
    kernel = disk_kernel(0.1)
    assert kernel.sum() == pytest.approx(1.0)
    assert kernel[kernel.shape[0] // 2, kernel.shape[1] // 2] == pytest.approx(1.0)


def test_wiener_rejects_bad_lambda():
    with pytest.raises(ValueError):
        wiener_deconvolve(np.zeros((10, 10)), PsfModel(1.0), 0.0)
    with pytest.raises(ValueError):
        wiener_deconvolve(np.zeros(10), PsfModel(1.0), 0.1)


def test_wiener_preserves_shape_and_sharpens_impulse():
    psf = PsfModel(hwhm=0.6)
    image = np.zeros((21, 21))
    image[10, 10] = 1.0
    blurred = convolve2d(image, psf_kernel(0.6), mode='same')
    restored = wiener_deconvolve(blurred, psf, 1e-4)
    assert restored.shape == blurred.shape
    assert np.unravel_index(np.argmax(restored), restored.shape) == (10, 10)
    assert restored[10, 10] > blurred[10, 10]


def test_wiener_vanishes_for_huge_lambda(rng):
    image = rng.normal(0.0, 10.0, size=(24, 24))
    restored = wiener_deconvolve(image, PsfModel(hwhm=1.0), 1e6)
    assert np.max(np.abs(restored)) < 1e-4 * np.max(np.abs(image))


def test_wiener_is_homogeneous(rng):
    image = rng.normal(0.0, 10.0, size=(24, 24))
    psf = PsfModel(hwhm=1.5)
    base = wiener_deconvolve(image, psf, 1e-2)
    np.testing.assert_allclose(wiener_deconvolve(-3.7 * image, psf, 1e-2), -3.7 * base,
                               rtol=1e-10, atol=1e-10 * np.abs(base).max())


def test_wiener_recovers_an_isolated_impulse():
    image = np.zeros((41, 41))
    image[20, 20] = 1.0
    blurred = convolve2d(image, psf_kernel(0.6), mode='same')
    restored = wiener_deconvolve(blurred, PsfModel(hwhm=0.6), 1e-6)
    assert restored[20, 20] > 0.99


def test_disk_extract_reads_site_values():
    psf = PsfModel(hwhm=1.0)
    geometry = ArrayGeometry.create(2, 2, 4.0, psf)
    grid = np.full(geometry.shape, 5.0)
    np.testing.assert_allclose(disk_extract(grid, geometry, 1.0), 5.0)


def test_disk_extract_matches_dense_oracle(rng):
    grid = rng.normal(size=(16, 16))
    geometry = ArrayGeometry(3, 3, 3.3, offset=(0.4, 0.7), margin=3)
    d = 2.0
    kernel = disk_kernel(d)
    half = kernel.shape[0] // 2
    padded = np.pad(grid, half, mode='symmetric')
    smoothed = np.array([[np.sum(kernel * padded[i:i + 2 * half + 1, j:j + 2 * half + 1])
                          for j in range(16)] for i in range(16)])
    x, y = geometry.site_coordinates()
    expected = []
    for xs, ys in zip(x, y):
        c0, r0 = int(np.floor(xs)), int(np.floor(ys))
        fx, fy = xs - c0, ys - r0
        expected.append((1 - fy) * ((1 - fx) * smoothed[r0, c0] + fx * smoothed[r0, c0 + 1])
                        + fy * ((1 - fx) * smoothed[r0 + 1, c0] + fx * smoothed[r0 + 1, c0 + 1]))
    np.testing.assert_allclose(disk_extract(grid, geometry, d), expected, rtol=0, atol=1e-8)


def test_disk_extract_sub_pixel_disk_reads_the_pixel(rng):
    grid = rng.normal(size=(12, 12))
    geometry = ArrayGeometry(2, 2, 4.0, offset=(0.0, 0.0), margin=3)
    x, y = geometry.site_coordinates()
    np.testing.assert_allclose(disk_extract(grid, geometry, 0.1), grid[y.astype(int), x.astype(int)])


def test_disk_extract_rejects_sites_outside():
    geometry = ArrayGeometry(2, 2, 4.0, offset=(0.0, 0.0), margin=0)
    with pytest.raises(GeometryError):
        disk_extract(np.zeros((3, 3)), geometry, 1.0)


def _single_site_image(brightness):
    psf = PsfModel(hwhm=1.0)
    geometry = ArrayGeometry.create(3, 3, 5.0, psf)
    M = build_measurement_matrix(geometry, psf)
    occupied = np.zeros(9, dtype=bool)
    occupied[4] = True
    truth = GroundTruth(occupied=occupied, brightness_x=np.where(occupied, brightness, 0.0))
    pixels = render_noiseless(M, truth, 0.0)
    return ImageSample(pixels_y=pixels, geometry=geometry, truth=truth), geometry, psf


def test_deconv_estimate_locates_the_occupied_site():
    image, geometry, psf = _single_site_image(200.0)
    estimates = deconv_estimate(image, geometry, psf, DeconvConfig(lam=1e-3, disk_radius_d=1.0))
    assert estimates.shape == (9,)
    assert int(np.argmax(estimates)) == 4


def test_deconv_is_linear_without_mean_removal():
    image, geometry, psf = _single_site_image(100.0)
    doubled, _, _ = _single_site_image(200.0)
    config = DeconvConfig(lam=1e-2, disk_radius_d=1.5)
    one = deconv_estimate(image, geometry, psf, config, remove_mean=False)
    two = deconv_estimate(doubled, geometry, psf, config, remove_mean=False)
    np.testing.assert_allclose(two, 2 * one, rtol=1e-9, atol=1e-9)


def test_gain_and_bias_are_applied():
    image, geometry, psf = _single_site_image(200.0)
    base = DeconvConfig(lam=1e-2, disk_radius_d=1.0)
    raw = deconv_estimate(image, geometry, psf, base)
    mapped = deconv_estimate(image, geometry, psf, base.recalibrated(3.0, 7.0))
    np.testing.assert_allclose(mapped, 3.0 * raw + 7.0)


def test_deconv_is_translation_consistent(rng):
    psf = PsfModel(hwhm=1.0)
    config = DeconvConfig(lam=1e-3, disk_radius_d=1.5)
    field = np.zeros((48, 48))
    field[12:36, 12:36] = rng.normal(100.0, 30.0, size=(24, 24))
    here = ArrayGeometry(3, 3, 4.0, offset=(0.0, 0.0), margin=18)
    there = ArrayGeometry(3, 3, 4.0, offset=(3.0, 2.0), margin=18)
    moved = np.roll(field, (2, 3), axis=(0, 1))
    np.testing.assert_allclose(deconv_estimate(moved, there, psf, config),
                               deconv_estimate(field, here, psf, config), rtol=0, atol=1e-8)
