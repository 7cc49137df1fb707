"""Unbiased label-DP randomizers for regression."""
from .core import (
    LabelSet,
    LossKind,
    OutputGrid,
    Prior,
    RandomizerMatrix,
    RandomSource,
    ValidationReport,
    expected_output,
    load_randomizer,
    sample,
    save_randomizer,
    validate_randomizer,
)

__version__ = "0.1.0"

__all__ = [
    "LabelSet", "OutputGrid", "Prior", "RandomizerMatrix", "RandomSource", "LossKind",
    "ValidationReport", "validate_randomizer", "expected_output", "sample",
    "load_randomizer", "save_randomizer",
]
