from .records import (EstimatorKind, PerturbationKind, Perturbation, Scenario, EstimatorStats, BenchRecord,
                      records_frame, write_table, read_table)
from .pipeline import CalibrationCache, EstimateReport, estimate_image
from .harness import (run_ensemble, sweep_mu_a, runtime_scaling, robustness_sweep, RuntimeScaling,
                      loglog_slope, bench_stage)

__all__ = [
    'EstimatorKind', 'PerturbationKind', 'Perturbation', 'Scenario', 'EstimatorStats', 'BenchRecord',
    'records_frame', 'write_table', 'read_table',
    'CalibrationCache', 'EstimateReport', 'estimate_image',
    'run_ensemble', 'sweep_mu_a', 'runtime_scaling', 'robustness_sweep', 'RuntimeScaling',
    'loglog_slope', 'bench_stage',
]
