# conftest.py
# Shared fixtures: small geometries, scenario configs and seeded generators.

import numpy as np
import pytest

from Forward import build_gram, build_measurement_matrix
from Model import ArrayGeometry, BrightnessModel, PsfModel, ScenarioConfig, generate_test_image
from Settings import SolverSettings


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def psf():
    return PsfModel(hwhm=1.0)


@pytest.fixture
def tiny_geometry(psf):
    """3 x 3 sites: small enough for dense reference algebra."""
    return ArrayGeometry.create(3, 3, 2.0, psf)


@pytest.fixture
def tiny_matrix(tiny_geometry, psf):
    return build_measurement_matrix(tiny_geometry, psf)


@pytest.fixture
def brightness():
    return BrightnessModel(p=0.6, mu=200.0, sigma=20.0, background_k=0.0, read_noise_r=1.0)


@pytest.fixture
def small_config():
    """The benchmark densities on a 12 x 12 array."""
    return ScenarioConfig(n_rows=12, n_cols=12, seed=7)


@pytest.fixture
def small_setup(small_config):
    geometry = small_config.geometry()
    psf = small_config.psf()
    M = build_measurement_matrix(geometry, psf)
    return geometry, psf, M, build_gram(M)


@pytest.fixture
def small_image(small_config, small_setup):
    geometry, psf, M, _ = small_setup
    return generate_test_image(geometry, psf, small_config.brightness(), seed=2024, M=M)


@pytest.fixture
def tight_settings():
    return SolverSettings(cg_rel_tol=1e-10, drop_tol=1e-4)
