from .stats import estimate_mean_brightness, kurtosis, excess_kurtosis
from .gmm import GmmFit, fit_gmm, derive_model_params, posterior_probabilities
from .tuning import (GammaTuning, DeconvTuning, LearnedModel, tune_gamma, tune_deconv, calibrate,
                     tuned_prior_moments, simplified_estimate, default_gamma_grid, default_d_grid,
                     initial_gamma_ref)

__all__ = [
    'estimate_mean_brightness', 'kurtosis', 'excess_kurtosis',
    'GmmFit', 'fit_gmm', 'derive_model_params', 'posterior_probabilities',
    'GammaTuning', 'DeconvTuning', 'LearnedModel', 'tune_gamma', 'tune_deconv', 'calibrate',
    'tuned_prior_moments', 'simplified_estimate', 'default_gamma_grid', 'default_d_grid',
    'initial_gamma_ref',
]
