import json
import math

import numpy as np
import pandas as pd
import pytest

from Bench import (BenchRecord, CalibrationCache, EstimatorKind, EstimatorStats, Perturbation, PerturbationKind,
                   Scenario, bench_stage, estimate_image, loglog_slope, read_table, records_frame,
                   robustness_sweep, run_ensemble, runtime_scaling, sweep_mu_a, write_table)
from Detect import ThresholdMode
from Learn import GmmFit, LearnedModel
from Model import ArrayGeometry, ImageSample, ScenarioConfig, generate_test_image
from Tools.errors import BenchError, ConfigError


@pytest.fixture
def small_scenario():
    return Scenario(config=ScenarioConfig(n_rows=6, n_cols=6, seed=3), ensemble=2)


def learned_for(config, gmm=True):
    """A fixed calibration close to the true parameters, so no tuning runs."""
    fit = GmmFit(phi=config.p, mu0=0.0, sigma0=15.0, mu1=config.mu, sigma1=25.0,
                 log_likelihood=-1.0, iterations=1) if gmm else None
    return LearnedModel(p=config.p if gmm else float('nan'), mu=config.mu if gmm else float('nan'),
                        sigma2=config.sigma ** 2, gamma_opt=0.02, lambda_opt=0.05, d_opt=1.0,
                        mean_brightness=config.p * config.mu, gmm=fit)


# ---------------------------------------------------------------------------
# scenario records
# ---------------------------------------------------------------------------

def test_estimator_kind_parse():
    assert EstimatorKind.parse('all') == tuple(EstimatorKind)
    assert EstimatorKind.parse('deconv') == (EstimatorKind.DECONV,)
    with pytest.raises(ConfigError, match='Unknown estimator'):
        EstimatorKind.parse('median')


def test_perturbation_semantics(psf):
    geometry = ArrayGeometry.create(3, 3, 4.0, psf, extra_offset=2.0)
    assert Perturbation().is_identity
    assert Perturbation(PerturbationKind.OFFSET, 0.0).is_identity
    assert Perturbation(PerturbationKind.HWHM_SCALE, 1.0).is_identity
    shift = Perturbation(PerturbationKind.OFFSET, 0.25)
    assert shift.margin_offset(4.0) == pytest.approx(1.0)
    moved, same_psf = shift.apply(geometry, psf)
    assert moved.site_coordinates()[0][0] == pytest.approx(geometry.site_coordinates()[0][0] + 1.0)
    assert same_psf == psf
    _, wider = Perturbation(PerturbationKind.HWHM_SCALE, 1.2).apply(geometry, psf)
    assert wider.hwhm == pytest.approx(1.2)
    with pytest.raises(ConfigError):
        Perturbation(PerturbationKind.HWHM_SCALE, 0.0)
    with pytest.raises(ConfigError):
        Perturbation(PerturbationKind.OFFSET, float('inf'))


def test_scenario_validation_and_overrides(small_scenario):
    with pytest.raises(ConfigError):
        Scenario(ensemble=0)
    with pytest.raises(ConfigError):
        Scenario(threads=0)
    with pytest.raises(ConfigError):
        Scenario(estimators=())
    changed = small_scenario.with_overrides(mu=500.0, ensemble=7, tag='x')
    assert changed.config.mu == 500.0
    assert (changed.ensemble, changed.tag) == (7, 'x')
    assert changed.config.n_rows == 6
    row = changed.to_dict()
    assert row['estimators'] == 'prior,posterior,deconv'
    assert row['perturbation'] == 'none'


def test_true_geometry_absorbs_the_offset(small_scenario):
    base = small_scenario.true_geometry()
    shifted = small_scenario.with_overrides(perturbation=Perturbation(PerturbationKind.OFFSET, 0.5))
    wide = shifted.true_geometry()
    assert wide.width > base.width
    assumed, _ = shifted.assumed()
    assumed.check_containment(shifted.true_psf())


def test_hwhm_scale_is_a_factor_on_the_assumed_psf(small_scenario):
    unit = small_scenario.with_overrides(perturbation=Perturbation(PerturbationKind.HWHM_SCALE, 1.0))
    assert unit.true_geometry() == small_scenario.true_geometry()
    assert unit.assumed() == small_scenario.assumed()
    wider = small_scenario.with_overrides(perturbation=Perturbation(PerturbationKind.HWHM_SCALE, 1.5))
    _, assumed_psf = wider.assumed()
    assert assumed_psf.hwhm == pytest.approx(1.5 * small_scenario.config.psf_hwhm)
    assert wider.true_psf() == small_scenario.true_psf()
    assert wider.true_geometry().width > small_scenario.true_geometry().width
    narrower = small_scenario.with_overrides(perturbation=Perturbation(PerturbationKind.HWHM_SCALE, 0.8))
    assert narrower.true_geometry() == small_scenario.true_geometry()


def test_estimator_stats_from_samples():
    stats = EstimatorStats.from_samples([0.1, 0.2, 0.3], [5.0, 1.0, 3.0], [10, 20, 30], [0.1, float('nan')])
    assert stats.der_mean == pytest.approx(0.2)
    assert stats.der_std == pytest.approx(0.1)
    assert stats.runtime_ms == 3.0
    assert stats.cg_iter_mean == 20.0
    assert stats.gmm_der_mean == pytest.approx(0.1)
    single = EstimatorStats.from_samples([0.5], [1.0])
    assert single.der_std == 0.0
    assert math.isnan(single.cg_iter_mean) and math.isnan(single.gmm_der_mean)


def make_record(tag='grid'):
    stats = {EstimatorKind.PRIOR: EstimatorStats(0.01, 0.004, 2.0, 12.0),
             EstimatorKind.DECONV: EstimatorStats(0.02, 0.003, 1.0)}
    return BenchRecord(scenario={**ScenarioConfig().to_dict(), 'tag': tag}, stats=stats, snr_db=15.2,
                       n_images=4, n_sites=2500)


def test_record_rows_and_pooled_std():
    record = make_record()
    row = record.to_row()
    assert row['prior_der_mean'] == 0.01
    assert math.isnan(row['posterior_der_mean'])
    assert row['n_sites'] == 2500
    expected = math.sqrt((0.004 ** 2 / 4 + 0.003 ** 2 / 4) / 2)
    assert record.pooled_std(EstimatorKind.PRIOR, EstimatorKind.DECONV) == pytest.approx(expected)


def test_write_and_read_table(tmp_path):
    path = write_table([make_record('a'), make_record('b')], tmp_path / 'out' / 'bench.csv')
    table = read_table(path)
    assert list(table['tag']) == ['a', 'b']
    assert table['prior_der_mean'].iloc[0] == pytest.approx(0.01)
    assert table['posterior_der_mean'].isna().all()

    untimed = records_frame([make_record()], drop_timing=True)
    assert not any(c.endswith('_runtime_ms') for c in untimed.columns)
    assert isinstance(untimed, pd.DataFrame)


def test_loglog_slope():
    n = np.array([100, 400, 1600])
    assert loglog_slope(n, 3.0 * n) == pytest.approx(1.0)
    assert loglog_slope(n, 0.5 * n ** 1.5) == pytest.approx(1.5)
    assert math.isnan(loglog_slope([100], [1.0]))


def test_bench_stage_wraps_failures(small_scenario):
    with pytest.raises(BenchError, match='calibration failed for scenario tag=grid'):
        with bench_stage(small_scenario, 'calibration'):
            raise ValueError('boom')


def test_runtime_scaling_rejects_non_square_counts(small_scenario):
    with pytest.raises(ValueError, match='perfect square'):
        runtime_scaling(small_scenario, [16, 20])


# ---------------------------------------------------------------------------
# per-image estimation
# ---------------------------------------------------------------------------

@pytest.fixture
def cached(small_config, small_setup, small_image):
    geometry, psf, M, gram = small_setup
    return CalibrationCache.build(small_image, geometry, psf, 0.0, 1.0, learned=learned_for(small_config),
                                  M=M, gram=gram)


@pytest.mark.parametrize('kind', list(EstimatorKind))
def test_estimate_image_reports(cached, small_image, kind, tmp_path):
    report = estimate_image(small_image, cached, kind)
    assert report.x_hat.shape == (small_image.truth.n_sites,)
    assert report.detection.mode is ThresholdMode.ORACLE
    assert 0 <= report.der <= 1
    assert report.runtime_ms > 0
    assert report.gmm_detection is not None and report.gmm_detection.mode is ThresholdMode.GMM
    if kind is EstimatorKind.POSTERIOR:
        assert report.probabilities is not None
        assert report.cg_iterations > 0
    saved = json.loads(report.save(tmp_path / 'estimate.json', include_timing=False).read_text())
    assert saved['estimator'] == kind.value
    assert 'runtime_ms' not in saved


def test_estimate_without_truth_uses_mixture_threshold(cached, small_image):
    unlabeled = ImageSample(pixels_y=small_image.pixels_y, geometry=small_image.geometry)
    report = estimate_image(unlabeled, cached, EstimatorKind.PRIOR)
    assert report.detection.mode is ThresholdMode.GMM
    assert math.isnan(report.der)


def test_posterior_falls_back_without_mixture(small_config, small_setup, small_image):
    geometry, psf, M, gram = small_setup
    cache = CalibrationCache.build(small_image, geometry, psf, 0.0, 1.0,
                                   learned=learned_for(small_config, gmm=False), M=M, gram=gram)
    assert not cache.posterior_available
    prior = estimate_image(small_image, cache, EstimatorKind.PRIOR)
    post = estimate_image(small_image, cache, EstimatorKind.POSTERIOR)
    np.testing.assert_array_equal(prior.x_hat, post.x_hat)
    assert post.probabilities is None


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def test_empty_lattice_has_zero_error():
    scenario = Scenario(config=ScenarioConfig(n_rows=6, n_cols=6, p=0.0, seed=5), ensemble=2, gmm_enabled=False)
    record = run_ensemble(scenario)
    for kind in EstimatorKind:
        assert record.der(kind) == 0.0
    assert math.isnan(record.snr_db)


def test_ensemble_is_deterministic_across_thread_counts(small_scenario):
    one = run_ensemble(small_scenario)
    two = run_ensemble(small_scenario.with_overrides(threads=2))
    for kind in EstimatorKind:
        assert one.der(kind) == two.der(kind)
        assert one.stats[kind].der_std == two.stats[kind].der_std
    assert one.n_images == 2 and one.n_sites == 36
    assert one.snr_db == pytest.approx(two.snr_db)


def test_zero_offset_robustness_reproduces_the_base(small_scenario):
    base = small_scenario.with_overrides(estimators=(EstimatorKind.PRIOR,))
    reference = run_ensemble(base)
    [record] = robustness_sweep(base, PerturbationKind.OFFSET, [0.0])
    assert record.scenario['tag'] == 'robust_offset'
    assert record.der(EstimatorKind.PRIOR) == reference.der(EstimatorKind.PRIOR)


def test_sweep_tags_and_shared_cells(small_scenario):
    base = small_scenario.with_overrides(estimators=(EstimatorKind.PRIOR,), ensemble=1)
    records = sweep_mu_a(base, mus=[200.0], spacings=[3.0])
    assert [r.scenario['tag'] for r in records] == ['grid', 'cut_A', 'cut_B']
    assert records[1].scenario['mu'] == 1000.0
    # a = 1.5 x HWHM = 3 is the grid cell itself
    assert records[2].der(EstimatorKind.PRIOR) == records[0].der(EstimatorKind.PRIOR)
    with pytest.raises(ValueError):
        sweep_mu_a(base, mus=[], spacings=[3.0])


def test_repeated_runs_write_identical_outputs(small_scenario, tmp_path):
    # timing columns and fields are the only run-to-run differences
    tables = []
    for run in ('first', 'second'):
        records = sweep_mu_a(small_scenario, mus=[200.0], spacings=[3.0])
        tables.append(write_table(records, tmp_path / run / 'sweep.csv', drop_timing=True).read_bytes())
    assert tables[0] == tables[1]
    assert b'runtime_ms' not in tables[0]

    geometry, psf = small_scenario.assumed()
    image = generate_test_image(geometry, psf, small_scenario.config.brightness(), seed=11)
    reports = []
    for run in ('first', 'second'):
        cache = CalibrationCache.build(image, geometry, psf, 0.0, 1.0)
        report = estimate_image(image, cache, EstimatorKind.POSTERIOR)
        reports.append(report.save(tmp_path / run / 'estimate.json', include_timing=False).read_bytes())
    assert reports[0] == reports[1]


def test_reused_calibration_skips_tuning(small_scenario):
    scenario = small_scenario.with_overrides(estimators=(EstimatorKind.PRIOR, EstimatorKind.DECONV))
    record = run_ensemble(scenario, learned=learned_for(scenario.config))
    assert set(record.stats) == {EstimatorKind.PRIOR, EstimatorKind.DECONV}


# ---------------------------------------------------------------------------
# benchmark reproduction (slow)
# ---------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.acceptance
def test_benchmark_der_bands():
    record = run_ensemble(Scenario(ensemble=200))
    assert 0.0 <= record.der(EstimatorKind.POSTERIOR) <= 0.006
    assert 0.003 <= record.der(EstimatorKind.PRIOR) <= 0.011
    assert 0.008 <= record.der(EstimatorKind.DECONV) <= 0.016


@pytest.mark.slow
@pytest.mark.acceptance
def test_estimator_ordering_in_the_overlap_regime():
    base = Scenario(ensemble=50, config=ScenarioConfig(n_rows=30, n_cols=30))
    for record in sweep_mu_a(base, mus=[100.0, 300.0, 1000.0], spacings=[3.0], include_cuts=False):
        slack = record.pooled_std(*EstimatorKind)
        assert record.der(EstimatorKind.POSTERIOR) <= record.der(EstimatorKind.PRIOR) + slack
        assert record.der(EstimatorKind.PRIOR) <= record.der(EstimatorKind.DECONV) + slack


@pytest.mark.slow
@pytest.mark.acceptance
def test_resolved_regime_estimators_agree():
    record = run_ensemble(Scenario(ensemble=100, config=ScenarioConfig(n_rows=30, n_cols=30, spacing_a=8.0)))
    slack = 2 * record.pooled_std(*EstimatorKind)
    ders = [record.der(kind) for kind in EstimatorKind]
    assert max(ders) - min(ders) <= slack + 1e-12


@pytest.mark.slow
@pytest.mark.acceptance
def test_equal_snr_cells_have_equal_ole_error_within_a_regime():
    base = Scenario(ensemble=20, config=ScenarioConfig(n_rows=30, n_cols=30),
                    estimators=(EstimatorKind.PRIOR, EstimatorKind.POSTERIOR))
    hwhm = base.config.psf_hwhm
    records = sweep_mu_a(base, mus=[100.0, 200.0, 400.0, 700.0, 1000.0],
                         spacings=[1.5, 2.0, 2.5, 8.0, 10.0], include_cuts=False)

    def regime(record):
        a = record.scenario['spacing_a']
        if a <= 1.25 * hwhm:
            return 'overlapping'
        return 'resolved' if a >= 4 * hwhm else 'transition'

    compared = 0
    for i, first in enumerate(records):
        for second in records[i + 1:]:
            if regime(first) != regime(second) or regime(first) == 'transition':
                continue
            if abs(first.snr_db - second.snr_db) > 0.5:
                continue
            compared += 1
            for kind in (EstimatorKind.PRIOR, EstimatorKind.POSTERIOR):
                slack = 2 * math.hypot(first.pooled_std(kind), second.pooled_std(kind))
                assert abs(first.der(kind) - second.der(kind)) <= slack + 1e-12
    assert compared > 0


@pytest.mark.slow
@pytest.mark.acceptance
def test_runtime_scales_linearly_with_the_number_of_sites():
    scaling = runtime_scaling(Scenario(ensemble=5), [400, 1600, 3600, 10000])
    for kind in (EstimatorKind.PRIOR, EstimatorKind.POSTERIOR):
        assert 0.8 <= scaling.slopes[kind] <= 1.4
    for record in scaling.records:
        deconv = record.stats[EstimatorKind.DECONV].runtime_ms
        assert deconv < record.stats[EstimatorKind.PRIOR].runtime_ms
        assert deconv < record.stats[EstimatorKind.POSTERIOR].runtime_ms
    assert scaling.records[-1].stats[EstimatorKind.POSTERIOR].runtime_ms < 100.0


@pytest.mark.slow
@pytest.mark.acceptance
@pytest.mark.parametrize('kind, amplitudes', [(PerturbationKind.OFFSET, [0.05, 0.1, 0.2]),
                                              (PerturbationKind.HWHM_SCALE, [0.8, 0.9, 1.1, 1.2])])
def test_ole_stays_as_robust_as_deconvolution(kind, amplitudes):
    base = Scenario(ensemble=30, config=ScenarioConfig(n_rows=30, n_cols=30))
    for record in robustness_sweep(base, kind, amplitudes):
        for ole in (EstimatorKind.PRIOR, EstimatorKind.POSTERIOR):
            slack = 2 * record.pooled_std(ole, EstimatorKind.DECONV)
            assert record.der(ole) <= record.der(EstimatorKind.DECONV) + slack + 1e-12
