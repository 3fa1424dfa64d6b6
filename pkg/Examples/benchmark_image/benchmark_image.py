import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

# Reconstructs one image of the default benchmark scenario with all three
# estimators and prints the detection error rate of each.

# import the necessary libraries
import logging

from Bench import CalibrationCache, EstimatorKind, estimate_image
from Model import ScenarioConfig, generate_test_image, image_seed

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

# 50 x 50 sites, a = 3 px, HWHM = 2 px, p = 0.6, mu = 200
config = ScenarioConfig()
geometry, psf = config.geometry(), config.psf()
image = generate_test_image(geometry, psf, config.brightness(), image_seed(config.seed, 0))
print(f"Image: {geometry.width} x {geometry.height} px, {image.truth.n_occupied} of {geometry.n_sites} sites occupied")

# calibrate on the image itself
cache = CalibrationCache.build(image, geometry, psf, config.background_k, config.read_noise_r)
learned = cache.learned
print(f"Learned p={learned.p:.3f}, mu={learned.mu:.1f}, gamma_opt={learned.gamma_opt:.3g}, "
      f"lambda_opt={learned.lambda_opt:.3g}, d_opt={learned.d_opt:.2f}")

for kind in EstimatorKind:
    report = estimate_image(image, cache, kind)
    print(f"{kind.value:>10}: DER {report.der:.3%} (fp={report.detection.fp}, fn={report.detection.fn}), "
          f"{report.runtime_ms:.1f} ms, {report.cg_iterations} CG iterations")
