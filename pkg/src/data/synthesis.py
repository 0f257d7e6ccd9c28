"""
Screen-blend synthesis of training pairs.

A mixed image is built as g1*T + g2*R - g1*g2*T*R, with the reflection
optionally smoothed by a Gaussian blur before blending.
"""

import logging
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from src.config import DEFAULT_SYNTHESIS_CONFIG, SynthesisConfig
from src.data.image_io import list_images, open_rgb, pil_to_array, quantize, save_image
from src.errors import ConfigurationError, DomainError, ResourceError, ShapeError
from src.models.models import DatasetManifest, ManifestRecord, RecordKind, SyntheticPair

logger = logging.getLogger(__name__)


def screen_blend(t: np.ndarray, r: np.ndarray, g1: float, g2: float) -> np.ndarray:
    """
    Blend a transmission and a reflection layer.

    Args:
        t: Transmission values in [0, 1]
        r: Reflection values in [0, 1], same shape as t
        g1: Transmission weight in [0, 1]
        g2: Reflection weight in [0, 1]

    Returns:
        g1*t + g2*r - g1*g2*t*r, elementwise, in [0, 1]

    Raises:
        ShapeError: If t and r differ in shape
        DomainError: If any input leaves [0, 1]
    """
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if t.shape != r.shape:
        raise ShapeError(f"layers differ in shape: {t.shape} vs {r.shape}")
    for name, g in (("g1", g1), ("g2", g2)):
        if not 0.0 <= g <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1] (got {g})")
    for name, layer in (("t", t), ("r", r)):
        if layer.size and (layer.min() < 0.0 or layer.max() > 1.0):
            raise DomainError(f"{name} values must lie in [0, 1]")
    return g1 * t + g2 * r - g1 * g2 * t * r


def sample_gammas(rng: np.random.Generator,
                  config: SynthesisConfig = DEFAULT_SYNTHESIS_CONFIG) -> Tuple[float, float]:
    """Draw (g1, g2) uniformly from the configured ranges."""
    g1 = float(rng.uniform(*config.gamma1_range))
    g2 = float(rng.uniform(*config.gamma2_range))
    return g1, g2


def prepare_reflection(img: np.ndarray, rng: np.random.Generator,
                       config: SynthesisConfig = DEFAULT_SYNTHESIS_CONFIG) -> np.ndarray:
    """
    Smooth a reflection layer with a Gaussian of random width.

    Raises:
        ConfigurationError: If blurring is on and the sigma range is not positive
    """
    if not config.blur:
        return np.array(img, dtype=np.float64, copy=True)
    lo, hi = config.blur_sigma
    if not 0.0 < lo <= hi:
        raise ConfigurationError(f"blur sigma range must be positive (got {config.blur_sigma})")
    sigma = float(rng.uniform(lo, hi))
    return gaussian_filter(np.asarray(img, dtype=np.float64), sigma=(sigma, sigma, 0), mode="reflect")


def synthesize_pair(t_img: np.ndarray, r_img: np.ndarray, rng: np.random.Generator,
                    config: SynthesisConfig = DEFAULT_SYNTHESIS_CONFIG,
                    t_source: str = "", r_source: str = "") -> SyntheticPair:
    """
    Build one synthetic pair from two natural images of equal size.

    Layers are quantized to 8 bits before blending so the stored ground
    truths are exactly the layers the mixed image was built from.
    """
    gt_t = quantize(t_img)
    gt_r = quantize(prepare_reflection(r_img, rng, config))
    g1, g2 = sample_gammas(rng, config)
    mixed = screen_blend(gt_t, gt_r, g1, g2)
    return SyntheticPair(mixed, gt_t, gt_r, g1, g2, t_source, r_source)


def crop_source(img: Image.Image, size: int, rng: np.random.Generator, flip: bool = True) -> np.ndarray:
    """Random size×size crop; images with a shorter side are upscaled first."""
    w, h = img.size
    if min(w, h) < size:
        scale = size / min(w, h)
        img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))), Image.BICUBIC)
        w, h = img.size
    left = int(rng.integers(0, w - size + 1))
    top = int(rng.integers(0, h - size + 1))
    arr = pil_to_array(img.crop((left, top, left + size, top + size)))
    if flip and rng.random() < 0.5:
        arr = arr[:, ::-1, :]
    return np.ascontiguousarray(arr)


def pair_indices(n: int, count: int, rng: np.random.Generator) -> Iterator[Tuple[int, int]]:
    """
    Draw (t, r) source index pairs without replacement from a shuffled pool.

    The pool is refilled once exhausted; t and r always differ.
    """
    if n < 2:
        raise ResourceError(f"need at least 2 source images (found {n})")
    pool: List[int] = []

    def draw(exclude: Optional[int] = None) -> int:
        if not pool:
            pool.extend(int(i) for i in rng.permutation(n))
        for k in range(len(pool) - 1, -1, -1):
            if pool[k] != exclude:
                return pool.pop(k)
        pool.extend(int(i) for i in rng.permutation(n))
        return draw(exclude)

    for _ in range(count):
        t = draw()
        yield t, draw(exclude=t)


def build_synthetic_dataset(source_dir: Union[str, Path], out_dir: Union[str, Path], count: int,
                            seed: int = 0,
                            config: SynthesisConfig = DEFAULT_SYNTHESIS_CONFIG) -> DatasetManifest:
    """
    Synthesize a manifested training set from a folder of natural images.

    Each record gets its own random stream split off the seed, so the output
    is fully determined by (source images, count, seed, config).

    Args:
        source_dir: Directory of natural images (any size)
        out_dir: Output directory for images and manifest.jsonl
        count: Number of pairs
        seed: Random seed
        config: Synthesis settings (crop size, gamma ranges, blur)

    Returns:
        The written manifest

    Raises:
        ResourceError: If the source directory is missing or holds fewer than 2 images
    """
    config.validate()
    if count < 1:
        raise ConfigurationError(f"count must be >= 1 (got {count})")
    sources = list_images(source_dir)
    if len(sources) < 2:
        raise ResourceError(f"{source_dir}: need at least 2 source images (found {len(sources)})")

    out_dir = Path(out_dir)
    streams = np.random.SeedSequence(seed).spawn(count + 1)
    pairing_rng = np.random.default_rng(streams[0])

    logger.info("=" * 80)
    logger.info("Synthesizing %d pairs from %d source images (seed=%d)", count, len(sources), seed)
    logger.info("=" * 80)

    records = []
    for i, (ti, ri) in enumerate(pair_indices(len(sources), count, pairing_rng)):
        rng = np.random.default_rng(streams[i + 1])
        t_img = crop_source(open_rgb(sources[ti]), config.crop_size, rng, config.flip)
        r_img = crop_source(open_rgb(sources[ri]), config.crop_size, rng, config.flip)
        pair = synthesize_pair(t_img, r_img, rng, config, sources[ti].name, sources[ri].name)

        record_id = f"syn_{i:05d}"
        paths = {}
        for folder, arr in (("mixed", pair.mixed), ("transmission", pair.gt_t), ("reflection", pair.gt_r)):
            rel = f"{folder}/{record_id}.png"
            save_image(out_dir / rel, arr)
            paths[folder] = rel
        records.append(ManifestRecord(
            id=record_id,
            kind=RecordKind.SYNTHETIC,
            mixed_path=paths["mixed"],
            t_path=paths["transmission"],
            r_path=paths["reflection"],
            gamma1=pair.gamma1,
            gamma2=pair.gamma2,
            extra={
                "t_source": pair.t_source,
                "r_source": pair.r_source,
                "gamma1_range": list(config.gamma1_range),
                "gamma2_range": list(config.gamma2_range),
                "blur": config.blur,
            },
        ))

    manifest = DatasetManifest(records=records, root=out_dir)
    manifest.save(str(out_dir / "manifest.jsonl"))
    logger.info("✅ Wrote %d records to %s", len(records), out_dir / "manifest.jsonl")
    return manifest
