from .scenario import (ArrayGeometry, BrightnessModel, PsfModel, ScenarioConfig, BENCHMARK_DEFAULTS,
                       load_scenario)
from .synthetic import (GroundTruth, ImageSample, sample_ground_truth, render_noiseless,
                        apply_noise, generate_test_image, image_seed)
from . import image_io

__all__ = [
    'ArrayGeometry', 'BrightnessModel', 'PsfModel', 'ScenarioConfig', 'BENCHMARK_DEFAULTS', 'load_scenario',
    'GroundTruth', 'ImageSample', 'sample_ground_truth', 'render_noiseless', 'apply_noise',
    'generate_test_image', 'image_seed', 'image_io',
]
