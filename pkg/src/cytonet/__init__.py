"""Cervical cytology pipeline: segmentation, classification and risk scoring."""

__version__ = "0.1.0"

from . import errors, metrics, nn, risk, segpost

__all__ = ["errors", "metrics", "nn", "risk", "segpost", "__version__"]
