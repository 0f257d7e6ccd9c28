"""
Shared pytest fixtures.

Long acceptance runs carry the ``slow`` marker and are skipped unless
DSRNET_RUN_SLOW=1 is set.
"""

import os

import numpy as np
import pytest
import torch
from PIL import Image

from src.config import BackboneConfig, ModelConfig
from src.networks.backbone import build_vgg19_features


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance run (set DSRNET_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("DSRNET_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="slow run; set DSRNET_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def vgg_features():
    """Seeded random VGG-19 feature stack (no download)."""
    return build_vgg19_features(BackboneConfig(random_init=True, seed=0))


@pytest.fixture
def tiny_config():
    """Smallest model exercising every mechanism."""
    return ModelConfig(base_width=4, pyramid_widths=(4, 4, 8, 8, 8))


@pytest.fixture
def stub_extractor():
    """Identity feature extractor with a single tap."""
    return lambda x: [x]


def write_noise_images(directory, count, size=(96, 80), seed=0, prefix="img"):
    """Write smooth random RGB images and return their paths."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        coarse = rng.random((size[1] // 8 + 1, size[0] // 8 + 1, 3))
        img = Image.fromarray((coarse * 255).astype(np.uint8)).resize(size, Image.BILINEAR)
        path = directory / f"{prefix}_{i:02d}.png"
        img.save(path)
        paths.append(path)
    return paths


@pytest.fixture
def source_dir(tmp_path):
    """Folder of natural-image stand-ins for synthesis."""
    write_noise_images(tmp_path / "sources", 6)
    return tmp_path / "sources"


@pytest.fixture
def synthetic_manifest(tmp_path, source_dir):
    """Four synthetic 64×64 pairs on disk; returns the manifest path."""
    from src.config import SynthesisConfig
    from src.data.synthesis import build_synthetic_dataset

    out = tmp_path / "syn"
    build_synthetic_dataset(source_dir, out, count=4, seed=3, config=SynthesisConfig(crop_size=64))
    return out / "manifest.jsonl"


@pytest.fixture(autouse=True)
def _isolate_backbone_env(monkeypatch):
    monkeypatch.delenv("DSRNET_VGG_WEIGHTS", raising=False)
    monkeypatch.delenv("DSRNET_RANDOM_BACKBONE", raising=False)
    torch.set_default_dtype(torch.float32)
