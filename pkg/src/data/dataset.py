"""
Torch dataset over manifest records with deterministic augmentation.
"""

import logging
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset, default_collate

from src.data.image_io import load_image, to_tensor
from src.errors import ShapeError
from src.models.models import DatasetManifest, ManifestRecord

logger = logging.getLogger(__name__)


class ReflectionDataset(Dataset):
    """
    Samples of (mixed, transmission, reflection) tensors.

    Augmentation (random crop after an optional upscale, horizontal flip) draws
    from a generator keyed on (seed, epoch, index), so any sample can be
    reproduced without replaying the ones before it.
    """

    def __init__(self, manifest: DatasetManifest, image_size: Optional[int] = None,
                 flip: bool = False, seed: int = 0):
        self.manifest = manifest
        self.records: List[ManifestRecord] = list(manifest)
        self.image_size = image_size
        self.flip = flip
        self.seed = seed
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.records)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _load(self, record: ManifestRecord) -> List[torch.Tensor]:
        mixed = to_tensor(load_image(self.manifest.resolve(record.mixed_path)))
        gt_t = to_tensor(load_image(self.manifest.resolve(record.t_path)))
        if record.has_reflection:
            gt_r = to_tensor(load_image(self.manifest.resolve(record.r_path)))
        else:
            gt_r = torch.zeros_like(gt_t)
        if not mixed.shape == gt_t.shape == gt_r.shape:
            raise ShapeError(f"{record.id}: layer sizes differ")
        return [mixed, gt_t, gt_r]

    def _augment(self, layers: List[torch.Tensor], rng: np.random.Generator) -> List[torch.Tensor]:
        size = self.image_size
        if size is not None:
            h, w = layers[0].shape[-2:]
            if min(h, w) < size:
                scale = size / min(h, w)
                new_size = (max(size, round(h * scale)), max(size, round(w * scale)))
                layers = [F.interpolate(x[None], size=new_size, mode="bilinear",
                                        align_corners=False)[0] for x in layers]
                h, w = new_size
            top = int(rng.integers(0, h - size + 1))
            left = int(rng.integers(0, w - size + 1))
            layers = [x[:, top:top + size, left:left + size] for x in layers]
        if self.flip and rng.random() < 0.5:
            layers = [x.flip(-1) for x in layers]
        return [x.contiguous() for x in layers]

    def __getitem__(self, idx: int) -> Dict[str, object]:
        record = self.records[idx]
        rng = np.random.default_rng([self.seed, self.epoch, idx])
        mixed, gt_t, gt_r = self._augment(self._load(record), rng)
        return {
            "id": record.id,
            "mixed": mixed,
            "gt_t": gt_t,
            "gt_r": gt_r,
            "has_r": torch.tensor(record.has_reflection),
        }


def collate(samples: List[Dict[str, object]]) -> Dict[str, object]:
    """Stack samples into a batch; sizes must agree."""
    return default_collate(samples)
