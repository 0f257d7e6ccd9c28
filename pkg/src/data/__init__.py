"""Training pair synthesis, real-pair ingestion and manifest-backed datasets."""

from .dataset import ReflectionDataset, collate
from .real_pairs import load_real_pairs, open_manifest
from .synthesis import (
    build_synthetic_dataset,
    prepare_reflection,
    sample_gammas,
    screen_blend,
    synthesize_pair,
)

__all__ = [
    "ReflectionDataset",
    "collate",
    "load_real_pairs",
    "open_manifest",
    "build_synthetic_dataset",
    "prepare_reflection",
    "sample_gammas",
    "screen_blend",
    "synthesize_pair",
]
