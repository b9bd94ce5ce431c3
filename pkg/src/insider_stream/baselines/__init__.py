"""PCA reconstruction and isolation-forest detectors over the same user-day stream."""

from insider_stream.baselines.iforest import IsolationForest, average_path_length
from insider_stream.baselines.pca import NotFittedError, PcaModel, pca_score
from insider_stream.baselines.stream import BaselineConfig, baseline_stream

__all__ = [
    "BaselineConfig",
    "IsolationForest",
    "NotFittedError",
    "PcaModel",
    "average_path_length",
    "baseline_stream",
    "pca_score",
]
