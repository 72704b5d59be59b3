"""Backfill-aware refinement of real-time forecasts.

Load vintage data, measure how values get revised, model revision dynamics
with a graph-recurrent encoder, and use it to correct black-box forecasts
and real-time evaluation targets.
"""

__version__ = "0.1.0"

from .errors import BackfillError, ConfigError, DataError, NumericError
from .store import BackfillSequence, RevisionDataset, SignalId, VintageRecord, load_vintages
from .predictions import PredictionHistory, load_predictions

__all__ = [
    "BackfillError", "BackfillSequence", "ConfigError", "DataError", "NumericError", "PredictionHistory",
    "RevisionDataset", "SignalId", "VintageRecord", "load_predictions", "load_vintages", "__version__",
]
