from .detection import (DetectionResult, ThresholdMode, classify_and_score, oracle_threshold,
                        gmm_threshold)

__all__ = ['DetectionResult', 'ThresholdMode', 'classify_and_score', 'oracle_threshold', 'gmm_threshold']
