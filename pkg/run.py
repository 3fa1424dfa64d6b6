# run.py
# Description: Command-line entry point for Lattice_Recon: generate labelled images,
# calibrate the estimators, reconstruct single images and run the benchmarks.

# import the necessary libraries
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List

from dotenv import load_dotenv

from Bench import (EstimatorKind, PerturbationKind, Scenario, CalibrationCache, estimate_image,
                   run_ensemble, sweep_mu_a, runtime_scaling, robustness_sweep, write_table)
from Estimator import snr, snr_resolved_limit, ole_mse_report, prior_moments
from Forward import build_measurement_matrix
from Learn import LearnedModel
from Model import ScenarioConfig, generate_test_image, image_seed, load_scenario, image_io
from Settings import SolverSettings
from Tools import set_log_level, TRACE
from Tools.errors import ReconError

# Configure logging
logging.basicConfig(
	level=logging.INFO,
	format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()


def parse_float_list(text: str) -> List[float]:
	"""
	Parse a comma-separated list of numbers.

	Args:
		text (str): e.g. "100,200,500"

	Returns:
		list: Parsed floats

	Raises:
		argparse.ArgumentTypeError: If an entry is not a number
	"""
	try:
		values = [float(v) for v in text.split(',') if v.strip()]
	except ValueError:
		raise argparse.ArgumentTypeError(f"Expected a comma-separated list of numbers, got '{text}'")
	if not values:
		raise argparse.ArgumentTypeError("The list is empty")
	return values


def parse_int_list(text: str) -> List[int]:
	values = parse_float_list(text)
	if any(v != int(v) for v in values):
		raise argparse.ArgumentTypeError(f"Expected integers, got '{text}'")
	return [int(v) for v in values]


def load_config(args: argparse.Namespace) -> ScenarioConfig:
	"""Scenario from --config, with --seed overriding the file's master seed."""
	config = load_scenario(args.config)
	if args.seed is not None:
		config = config.with_overrides(seed=args.seed)
	if logger.isEnabledFor(logging.DEBUG):
		logger.debug(f"Scenario: {config.to_dict()}")
	return config


def make_scenario(args: argparse.Namespace) -> Scenario:
	return Scenario(config=load_config(args), ensemble=args.ensemble,
					estimators=EstimatorKind.parse(args.estimator), threads=args.threads,
					gmm_enabled=not args.no_gmm, retune=args.retune)


def make_settings(args: argparse.Namespace) -> SolverSettings:
	return SolverSettings.from_env().with_overrides(threads=args.threads)


def out_dir(args: argparse.Namespace) -> Path:
	path = Path(args.out)
	path.mkdir(parents=True, exist_ok=True)
	return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> None:
	config = load_config(args)
	psf, model = config.psf(), config.brightness()
	geometry = config.geometry()
	M = build_measurement_matrix(geometry, psf)
	out = out_dir(args)
	config.save(out / 'scenario.json')
	for idx in range(args.ensemble):
		sample = generate_test_image(geometry, psf, model, image_seed(config.seed, idx), M=M)
		written = image_io.save_sample(sample, out / f'image_{idx:04d}', fmt=args.format)
		if logger.isEnabledFor(TRACE):
			logger.trace(f"Wrote {written}")
	logger.info(f"Generated {args.ensemble} image(s) of {geometry.width}x{geometry.height} px in {out}")


def _input_image(args: argparse.Namespace, config: ScenarioConfig):
	"""The --image file, or the first image of the scenario's ensemble."""
	geometry = config.geometry()
	if args.image:
		truth_path = args.truth
		if truth_path is None:
			candidate = Path(args.image).with_suffix('')
			candidate = candidate.with_name(candidate.name + '_truth.csv')
			truth_path = candidate if candidate.exists() else None
		return image_io.load_sample(args.image, geometry, truth_path)
	return generate_test_image(geometry, config.psf(), config.brightness(), image_seed(config.seed, 0))


def cmd_calibrate(args: argparse.Namespace) -> None:
	config = load_config(args)
	image = _input_image(args, config)
	cache = CalibrationCache.build(image, config.geometry(), config.psf(), config.background_k,
								   config.read_noise_r, settings=make_settings(args), gmm_enabled=not args.no_gmm)
	learned = cache.learned
	out = out_dir(args)
	learned.save(out / 'learned.json')
	learned.gamma_curve.to_csv(out / 'gamma_curve.csv', index=False, float_format='%.10g')
	learned.deconv_curve.to_csv(out / 'deconv_curve.csv', index=False, float_format='%.10g')
	logger.info(f"Calibration written to {out / 'learned.json'}")


def cmd_estimate(args: argparse.Namespace) -> None:
	config = load_config(args)
	image = _input_image(args, config)
	learned = LearnedModel.load(args.learned) if args.learned else None
	cache = CalibrationCache.build(image, config.geometry(), config.psf(), config.background_k,
								   config.read_noise_r, settings=make_settings(args),
								   gmm_enabled=not args.no_gmm, learned=learned)
	out = out_dir(args)
	for kind in EstimatorKind.parse(args.estimator):
		report = estimate_image(image, cache, kind)
		path = report.save(out / f'estimate_{kind.value}.json')
		logger.info(f"{kind.value}: threshold {report.detection.threshold:.4g}, "
					f"{int(report.detection.labels.sum())} occupied, DER {report.der:.4%} -> {path}")


def cmd_bench(args: argparse.Namespace) -> None:
	record = run_ensemble(make_scenario(args), make_settings(args))
	write_table([record], out_dir(args) / 'bench.csv', drop_timing=args.no_timing)


def cmd_sweep(args: argparse.Namespace) -> None:
	records = sweep_mu_a(make_scenario(args), args.mu, args.a, make_settings(args),
						 include_cuts=not args.no_cuts)
	write_table(records, out_dir(args) / 'sweep.csv', drop_timing=args.no_timing)


def cmd_runtime(args: argparse.Namespace) -> None:
	result = runtime_scaling(make_scenario(args), args.sites, make_settings(args))
	out = out_dir(args)
	write_table(result.records, out / 'runtime.csv')
	result.slopes_frame().to_csv(out / 'runtime_slopes.csv', index=False, float_format='%.6g')


def cmd_robustness(args: argparse.Namespace) -> None:
	kind = PerturbationKind(args.kind)
	records = robustness_sweep(make_scenario(args), kind, args.amplitudes, make_settings(args))
	write_table(records, out_dir(args) / f'robustness_{kind.value}.csv', drop_timing=args.no_timing)


def cmd_snr(args: argparse.Namespace) -> None:
	config = load_config(args)
	settings = make_settings(args)
	geometry, psf, model = config.geometry(), config.psf(), config.brightness()
	M = build_measurement_matrix(geometry, psf)
	report = ole_mse_report(M, prior_moments(model, M), settings)
	result = {
		'snr_db': snr(model, geometry, psf, settings=settings, M=M),
		'snr_resolved_limit_db': snr_resolved_limit(model, geometry, psf, M=M),
		'mse': report.to_dict(),
		'n_sites': geometry.n_sites,
	}
	path = out_dir(args) / 'snr.json'
	with open(path, 'w') as f:
		json.dump(result, f, indent=2)
	logger.info(f"SNR {result['snr_db']:.2f} dB (resolved limit {result['snr_resolved_limit_db']:.2f} dB) -> {path}")


COMMANDS = {
	'generate': cmd_generate,
	'calibrate': cmd_calibrate,
	'estimate': cmd_estimate,
	'bench': cmd_bench,
	'sweep': cmd_sweep,
	'runtime': cmd_runtime,
	'robustness': cmd_robustness,
	'snr': cmd_snr,
}


def build_parser() -> argparse.ArgumentParser:
	# flags shared by every subcommand
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument('--config', type=str, help='JSON scenario file (defaults to the benchmark scenario)')
	common.add_argument('--seed', type=int, help='Master seed (overrides the scenario file)')
	common.add_argument('--out', type=str, default='out', help='Output directory')
	common.add_argument('--estimator', type=str, default='all', choices=['prior', 'posterior', 'deconv', 'all'],
		help='Estimator(s) to run')
	common.add_argument('--ensemble', type=int, default=100, help='Number of images')
	common.add_argument('--threads', type=int, default=1, help='Worker threads')
	common.add_argument('--no-gmm', action='store_true', help='Skip the mixture fit (disables the a posteriori OLE)')
	common.add_argument('--retune', action='store_true', help='Recalibrate on every image')
	common.add_argument('--no-timing', action='store_true', help='Drop runtime columns from CSV output')
	common.add_argument('--verbosity', type=int, choices=[1, 2, 3], default=1,
		help='Set the verbosity level (1: INFO, 2: DEBUG, 3: TRACE)')

	parser = argparse.ArgumentParser(
		description='Reconstruct site occupancy in microtrap-array images and benchmark the estimators.',
		formatter_class=argparse.RawDescriptionHelpFormatter,
		epilog="""
Examples:
  # Write 10 labelled images of the default scenario
  python run.py generate --ensemble 10 --out images

  # Calibrate on an image and keep the learned model
  python run.py calibrate --image images/image_0000.raw --out calib

  # Reconstruct one image with a saved calibration
  python run.py estimate --image images/image_0000.raw --learned calib/learned.json --estimator posterior

  # Ensemble benchmark on 4 threads
  python run.py bench --ensemble 200 --threads 4

  # (mu, a) sweep with the two cut lines
  python run.py sweep --mu 100,200,500,1000 --a 2,3,4,6,8 --ensemble 50

  # Runtime against site count
  python run.py runtime --sites 100,400,2500,10000 --ensemble 5

  # Offset robustness, amplitudes as a fraction of a
  python run.py robustness --kind offset --amplitudes 0,0.05,0.1,0.2

  # SNR of a scenario, with debug logging
  python run.py snr --config scenario.json --verbosity 2
		"""
	)
	sub = parser.add_subparsers(dest='command', required=True)
	sub.add_parser('generate', parents=[common], help='Emit labelled images and truth tables') \
		.add_argument('--format', choices=['raw', 'pgm'], default='raw', help='Image file format')
	for name, help_text in (('calibrate', 'Tune gamma, lambda and d, fit the mixture, write learned.json'),
							('estimate', 'Reconstruct a single image and write an EstimateReport')):
		p = sub.add_parser(name, parents=[common], help=help_text)
		p.add_argument('--image', type=str, help='Image file (.raw or .pgm); default: generate one')
		p.add_argument('--truth', type=str, help='Truth CSV; default: <image>_truth.csv when present')
		if name == 'estimate':
			p.add_argument('--learned', type=str, help='learned.json from a previous calibrate run')
	sub.add_parser('bench', parents=[common], help='Ensemble DER statistics')
	p = sub.add_parser('sweep', parents=[common], help='(mu, a) grid with cut lines')
	p.add_argument('--mu', type=parse_float_list, required=True, help='Comma-separated brightness values')
	p.add_argument('--a', type=parse_float_list, required=True, help='Comma-separated site spacings')
	p.add_argument('--no-cuts', action='store_true', help='Skip the mu=1000 and a=1.5 HWHM cut lines')
	p = sub.add_parser('runtime', parents=[common], help='Runtime against the number of sites')
	p.add_argument('--sites', type=parse_int_list, required=True, help='Comma-separated square site counts')
	p = sub.add_parser('robustness', parents=[common], help='DER against calibration errors')
	p.add_argument('--kind', choices=[k.value for k in PerturbationKind if k is not PerturbationKind.NONE],
		required=True, help='offset (fraction of a) or hwhm (scale factor)')
	p.add_argument('--amplitudes', type=parse_float_list, required=True, help='Comma-separated amplitudes')
	sub.add_parser('snr', parents=[common], help='SNR and its resolved-regime limit')
	return parser


def main(argv=None) -> int:
	# initialize the parser
	parser = build_parser()
	args = parser.parse_args(argv)

	try:
		# Set logging level based on verbosity
		set_log_level(args.verbosity)
		logger.debug(f"Logging level set to verbosity {args.verbosity}")
		COMMANDS[args.command](args)
	except (ReconError, ValueError) as e:
		logger.error(str(e))
		if logger.isEnabledFor(logging.DEBUG):
			logger.debug(f"Error details: {str(e)}", exc_info=True)
		return 1
	return 0


if __name__ == "__main__":
	sys.exit(main())
