"""sedfuse: selective pseudo-labeling, multi-model score fusion, event
decoding and collar-F1/PSDS scoring for sound event detection pipelines,
plus a seeded synthetic scenario generator for desk-scale validation.

Everything operates on model-agnostic posterior dumps and annotation
tables; no audio or trained models are touched.
"""

__version__ = "0.1.0"

from .core import (
    BinaryGrid,
    ClassVocabulary,
    Event,
    EventList,
    FrameGrid,
    ParseError,
    SedfuseError,
    SeparationManifest,
    TagPrediction,
    ValidationError,
    VocabularyError,
    WeakLabelSet,
)

__all__ = [
    "__version__",
    "BinaryGrid",
    "ClassVocabulary",
    "Event",
    "EventList",
    "FrameGrid",
    "ParseError",
    "SedfuseError",
    "SeparationManifest",
    "TagPrediction",
    "ValidationError",
    "VocabularyError",
    "WeakLabelSet",
]
