"""APAC: online-augmented training of small neural networks plus the
optimal test-time decision rule (average of log-softmax over virtual samples).
"""

from apac.estimator import ApacClassifier

__all__ = ["ApacClassifier"]
__version__ = "0.1.0"
