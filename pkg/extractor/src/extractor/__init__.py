"""Offline prefill hidden-state and generation-entropy extraction for the
difficulty-routing pipeline."""

__version__ = "0.1.0"

from .extract import (
    ExtractReport,
    LocalModel,
    extract_features,
    extract_generations,
)
