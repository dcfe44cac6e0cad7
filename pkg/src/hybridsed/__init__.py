"""Hybrid sound event detection.

Acoustic-driven event boundaries (RBM -> cRBM array -> PCA -> novelty curve)
combined with posterior-based event labeling and event-based evaluation.
"""

from hybridsed.errors import DataError, NumericalError, SedError

__version__ = "0.1.0"

__all__ = ["DataError", "NumericalError", "SedError", "__version__"]
