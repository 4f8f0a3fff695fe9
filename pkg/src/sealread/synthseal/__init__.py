"""Synthetic seal images with exact ground truth."""

from .generate import CorpusConfig, generate_corpus, sample_spec
from .render import DegradationParams, LayoutError, SealSpec, degrade, generate_seal

__all__ = [
    "CorpusConfig",
    "DegradationParams",
    "LayoutError",
    "SealSpec",
    "degrade",
    "generate_corpus",
    "generate_seal",
    "sample_spec",
]
