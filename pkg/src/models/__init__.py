"""Data models for the reflection separation system."""

from .models import (
    RecordKind,
    FeaturePair,
    Decomposition,
    LossBreakdown,
    SyntheticPair,
    ManifestRecord,
    DatasetManifest,
    ImageScore,
    DatasetScore,
    EvalReport
)

__all__ = [
    "RecordKind",
    "FeaturePair",
    "Decomposition",
    "LossBreakdown",
    "SyntheticPair",
    "ManifestRecord",
    "DatasetManifest",
    "ImageScore",
    "DatasetScore",
    "EvalReport"
]
