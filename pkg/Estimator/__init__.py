from .moments import MomentFlavor, MomentModel, prior_moments, posterior_moments, PROB_EPS
from .ole import (OleSolution, ole_system, ole_estimate, dense_ole_operator, dense_woodbury_operator,
                  dense_mse, dense_ole_estimate)
from .snr import (MseReport, ole_mse, ole_mse_report, snr, snr_db, snr_resolved_limit,
                  printed_limit_mse, information_matrix, weighted_gram_diagonal)

__all__ = [
    'MomentFlavor', 'MomentModel', 'prior_moments', 'posterior_moments', 'PROB_EPS',
    'OleSolution', 'ole_system', 'ole_estimate', 'dense_ole_operator', 'dense_woodbury_operator',
    'dense_mse', 'dense_ole_estimate',
    'MseReport', 'ole_mse', 'ole_mse_report', 'snr', 'snr_db', 'snr_resolved_limit',
    'printed_limit_mse', 'information_matrix', 'weighted_gram_diagonal',
]
