from .measurement_matrix import (MeasurementMatrix, GramMatrix, pixel_psf_integral, column_footprint_bound,
                                 build_measurement_matrix, build_gram, export_matrix_market)

__all__ = ['MeasurementMatrix', 'GramMatrix', 'pixel_psf_integral', 'column_footprint_bound',
           'build_measurement_matrix', 'build_gram', 'export_matrix_market']
