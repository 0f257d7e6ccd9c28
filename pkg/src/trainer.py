"""
Training engine.

Adam with a fixed learning rate over a uniformly shuffled concatenation of
manifests. Every epoch's order and every sample's augmentation are derived
from the seed, so a run resumed from any checkpoint follows the same
trajectory as an uninterrupted one.
"""

import json
import logging
import random
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from src.checkpoint import Checkpoint, capture, load_checkpoint, save_checkpoint
from src.config import TrainConfig
from src.data.dataset import ReflectionDataset, collate
from src.data.real_pairs import open_manifest
from src.errors import DivergenceError, DomainError, IncompatibleCheckpointError
from src.losses import DSRNetCriterion
from src.models.models import DatasetManifest, LossBreakdown
from src.networks.backbone import (
    VGGFeatureExtractor,
    build_backbone,
    build_perceptual_extractor,
    build_vgg19_features,
)
from src.networks.dsrnet import DSRNet, dsrnet_forward, init_model_params

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOG_FILENAME = "train_log.jsonl"


def seed_everything(seed: int) -> None:
    """Seed Python, numpy and torch generators."""
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def build_optimizer(model: nn.Module, learning_rate: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)


def training_step(batch: dict, model: DSRNet, optimizer: torch.optim.Optimizer,
                  criterion: DSRNetCriterion, backbone: Optional[VGGFeatureExtractor] = None,
                  grad_clip: Optional[float] = None) -> LossBreakdown:
    """
    One Adam update on the total loss.

    Args:
        batch: Collated sample dict (mixed, gt_t, gt_r, has_r)
        model: Network being trained (updated in place)
        optimizer: Optimizer over the model parameters (updated in place)
        criterion: Loss bundle; its reconstruction mode decides whether the LRM runs
        backbone: Frozen extractor for the pyramid encoders
        grad_clip: Optional max gradient norm

    Returns:
        Pre-update loss breakdown (detached)

    Raises:
        DivergenceError: If any loss term is non-finite; parameters are left untouched
    """
    model.train()
    optimizer.zero_grad(set_to_none=True)
    mixed = batch["mixed"]
    decomposition = dsrnet_forward(mixed, model, backbone,
                                   with_residue=criterion.reconstruction == "residual")
    breakdown = criterion(mixed, decomposition, batch["gt_t"], batch["gt_r"],
                          r_mask=batch["has_r"])
    if not breakdown.is_finite():
        raise DivergenceError(f"non-finite loss: {breakdown.to_dict()}", breakdown)

    breakdown.total.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return LossBreakdown(*(t.detach() for t in (breakdown.pixel, breakdown.perceptual,
                                                breakdown.exclusion, breakdown.reconstruction,
                                                breakdown.total)))


def load_manifests(paths: List[str]) -> DatasetManifest:
    """
    Concatenate manifests (JSON-lines files or real-pair directories).

    Raises:
        DomainError: If no records are found
    """
    manifest = DatasetManifest.concatenate([open_manifest(p) for p in paths])
    if len(manifest) == 0:
        raise DomainError("training manifests contain no records")
    return manifest


class Trainer:
    """
    Owns the model, optimizer, data and bookkeeping of one training run.

    Checkpoints are written to <checkpoint_dir>/epoch_XXX.ckpt after each
    epoch. The step log <checkpoint_dir>/train_log.jsonl holds one line per
    step taken: a fresh run starts it empty, a resumed run keeps the lines up
    to the checkpoint step and appends from there.
    """

    def __init__(self, config: TrainConfig, features: Optional[nn.Sequential] = None):
        config.validate()
        self.config = config
        seed_everything(config.seed)

        self.model_config = config.model_config()
        self.model = init_model_params(self.model_config, config.seed)
        features = features if features is not None else build_vgg19_features(config.backbone)
        self.backbone = build_backbone(features=features) if self.model.requires_backbone else None
        self.criterion = DSRNetCriterion(
            config.weights,
            build_perceptual_extractor(features=features),
            config.ablation.reconstruction,
        )
        self.optimizer = build_optimizer(self.model, config.learning_rate)

        self.manifest = load_manifests(config.manifests)
        self.dataset = ReflectionDataset(self.manifest, config.image_size, flip=True, seed=config.seed)
        self.checkpoint_dir = Path(config.checkpoint_dir)
        self.log_path = self.checkpoint_dir / LOG_FILENAME
        self.epoch = 0
        self.step = 0

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.dataset) // self.config.batch_size)

    def resume(self, path: str) -> Checkpoint:
        """
        Restore model, optimizer and counters from a checkpoint.

        Raises:
            IncompatibleCheckpointError: If the checkpoint was built for another model shape
        """
        ckpt = load_checkpoint(path)
        if ckpt.model_config != self.model_config.to_dict():
            raise IncompatibleCheckpointError(
                f"checkpoint model config {ckpt.model_config} differs from {self.model_config.to_dict()}"
            )
        self.model.load_state_dict(ckpt.model_state)
        if ckpt.optimizer_state is not None:
            self.optimizer.load_state_dict(ckpt.optimizer_state)
        self.epoch = ckpt.epoch
        self.step = ckpt.step
        logger.info("Resumed from %s at epoch %d, step %d", path, self.epoch, self.step)
        return ckpt

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.config.seed, epoch]).permutation(len(self.dataset))

    def _prepare_log(self) -> None:
        kept: List[str] = []
        if self.step > 0 and self.log_path.is_file():
            kept = self.log_path.read_text(encoding="utf-8").splitlines(keepends=True)[:self.step]
        self.log_path.write_text("".join(kept), encoding="utf-8")

    def _write_log(self, epoch: int, breakdown: LossBreakdown, wall_ms: float) -> None:
        entry = {"step": self.step, "epoch": epoch, **breakdown.to_dict(), "wall_ms": round(wall_ms, 3)}
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")

    def _snapshot(self, epoch: int) -> Checkpoint:
        return capture(self.model, self.model_config, self.optimizer, self.config,
                       epoch=epoch, step=self.step)

    def train(self) -> Checkpoint:
        """
        Run the remaining epochs (or until max_steps).

        Returns:
            The last checkpoint written
        """
        config = self.config
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self._prepare_log()
        logger.info("=" * 80)
        logger.info("Training: %d records, %d epochs, batch %d, lr %g, ablation %s",
                    len(self.dataset), config.epochs, config.batch_size,
                    config.learning_rate, config.ablation)
        logger.info("=" * 80)

        total_steps = config.epochs * self.batches_per_epoch
        if config.max_steps is not None:
            total_steps = min(total_steps, config.max_steps)
        pbar = tqdm(initial=self.step, total=total_steps, desc="Training", disable=not config.progress)

        last = self._snapshot(self.epoch)
        try:
            for epoch in range(self.epoch, config.epochs):
                self.dataset.set_epoch(epoch)
                order = self.epoch_order(epoch)
                done_in_epoch = self.step - epoch * self.batches_per_epoch
                for b in range(max(0, done_in_epoch), self.batches_per_epoch):
                    if config.max_steps is not None and self.step >= config.max_steps:
                        last = self._snapshot(epoch)
                        save_checkpoint(self.checkpoint_dir / f"step_{self.step:07d}.ckpt", last)
                        logger.info("⚠️  Stopped at max_steps=%d", config.max_steps)
                        return last
                    indices = order[b * config.batch_size:(b + 1) * config.batch_size]
                    batch = collate([self.dataset[int(i)] for i in indices])
                    started = time.perf_counter()
                    breakdown = training_step(batch, self.model, self.optimizer, self.criterion,
                                              self.backbone, config.grad_clip)
                    self.step += 1
                    self._write_log(epoch, breakdown, (time.perf_counter() - started) * 1000.0)
                    pbar.update(1)
                    pbar.set_postfix(total=f"{float(breakdown.total):.4f}")

                self.epoch = epoch + 1
                last = self._snapshot(self.epoch)
                path = save_checkpoint(self.checkpoint_dir / f"epoch_{self.epoch:03d}.ckpt", last)
                logger.info("✅ Epoch %d/%d done (step %d) -> %s", self.epoch, config.epochs, self.step, path)
        finally:
            pbar.close()
        return last


def train(config: TrainConfig, resume: Optional[str] = None,
          features: Optional[nn.Sequential] = None) -> Checkpoint:
    """Build a Trainer, optionally resume, and run it to completion."""
    trainer = Trainer(config, features=features)
    if resume:
        trainer.resume(resume)
    return trainer.train()
