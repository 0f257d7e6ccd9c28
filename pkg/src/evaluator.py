"""
Benchmark evaluation.

Scores predicted transmissions against ground truth per image, averages per
dataset and aggregates across datasets weighted by image count. The ablation
study trains every preset under one protocol and reports the presets side by
side in the same format.
"""

import json
import logging
import math
import re
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import yaml

from src.checkpoint import load_model
from src.config import ABLATION_PRESETS, ABLATION_ROWS, BackboneConfig, TrainConfig
from src.data.image_io import load_image, to_array, to_tensor
from src.data.real_pairs import open_manifest
from src.errors import ConfigurationError, DomainError, ResourceError, ShapeError
from src.metrics import build_report, dataset_score, psnr, ssim
from src.models.models import DatasetManifest, DatasetScore, EvalReport, ImageScore, ManifestRecord
from src.networks.backbone import build_backbone, build_vgg19_features
from src.networks.dsrnet import DSRNet, dsrnet_forward
from src.trainer import Trainer, load_manifests

logger = logging.getLogger(__name__)

OVERFIT_STEPS = 500

Predictor = Callable[[ManifestRecord, DatasetManifest], np.ndarray]


def dataset_name(path: Union[str, Path]) -> str:
    """Report name of a manifest: its directory for manifest.jsonl files, else the file stem."""
    path = Path(path)
    if path.is_dir():
        return path.resolve().name
    if path.stem == "manifest":
        return path.resolve().parent.name
    return path.stem


def model_predictor(model: DSRNet, backbone=None) -> Predictor:
    """Predict transmissions with the residue module disabled."""

    def predict(record: ManifestRecord, manifest: DatasetManifest) -> np.ndarray:
        image = to_tensor(load_image(manifest.resolve(record.mixed_path)))[None]
        with torch.no_grad():
            decomposition = dsrnet_forward(image, model, backbone, with_residue=False)
        return to_array(decomposition.clipped().transmission[0])

    return predict


def directory_predictor(predictions_dir: Union[str, Path]) -> Predictor:
    """Read precomputed transmissions named <record id>_T.png."""
    predictions_dir = Path(predictions_dir)

    def predict(record: ManifestRecord, manifest: DatasetManifest) -> np.ndarray:
        path = predictions_dir / f"{record.id}_T.png"
        if not path.is_file():
            raise ResourceError(f"Missing prediction for {record.id}: {path}")
        return load_image(path)

    return predict


def score_manifest(name: str, manifest: DatasetManifest, predict: Predictor,
                   ssim_mode: str = "color") -> List[ImageScore]:
    """
    Score every record of one dataset.

    Raises:
        DomainError: If the manifest is empty
        ShapeError: If a prediction's size differs from its ground truth
    """
    if len(manifest) == 0:
        raise DomainError(f"dataset '{name}' has no records")
    rows = []
    for record in manifest:
        gt_t = load_image(manifest.resolve(record.t_path))
        pred_t = predict(record, manifest)
        if pred_t.shape != gt_t.shape:
            raise ShapeError(f"{record.id}: prediction {pred_t.shape} vs ground truth {gt_t.shape}")
        rows.append(ImageScore(name, record.id, psnr(pred_t, gt_t), ssim(pred_t, gt_t, ssim_mode)))
    return rows


def evaluate_with(predict: Predictor, manifests: Sequence[Union[str, Path]],
                  ssim_mode: str = "color") -> EvalReport:
    """Evaluate any predictor over one or more manifests."""
    if not manifests:
        raise DomainError("no manifests to evaluate")
    datasets: List[DatasetScore] = []
    rows: List[ImageScore] = []
    for path in manifests:
        name = dataset_name(path)
        dataset_rows = score_manifest(name, open_manifest(path, split="test"), predict, ssim_mode)
        score = dataset_score(name, dataset_rows)
        logger.info("%-20s %4d images  PSNR %.2f  SSIM %.4f",
                    name, score.image_count, score.mean_psnr, score.mean_ssim)
        datasets.append(score)
        rows.extend(dataset_rows)
    report = build_report(datasets, rows, ssim_mode)
    logger.info("✅ Weighted average: PSNR %.2f  SSIM %.4f", report.weighted_psnr, report.weighted_ssim)
    return report


def evaluate(checkpoint_path: Union[str, Path], manifests: Sequence[Union[str, Path]],
             backbone_config: Optional[BackboneConfig] = None,
             ssim_mode: str = "color") -> EvalReport:
    """
    Run inference from a checkpoint and score the transmission predictions.

    Raises:
        ResourceError: If the checkpoint cannot be read
        DomainError: If a manifest is empty
    """
    model, ckpt = load_model(checkpoint_path)
    backbone = None
    if model.requires_backbone:
        backbone = build_backbone(backbone_config or ckpt.backbone_config())
    return evaluate_with(model_predictor(model, backbone), manifests, ssim_mode)


def evaluate_predictions(predictions_dir: Union[str, Path], manifests: Sequence[Union[str, Path]],
                         ssim_mode: str = "color") -> EvalReport:
    """Score precomputed <id>_T.png predictions."""
    return evaluate_with(directory_predictor(predictions_dir), manifests, ssim_mode)


def evaluate_summaries(path: Union[str, Path]) -> EvalReport:
    """
    Re-aggregate published per-dataset means.

    The file is JSON or YAML: a list of {name, image_count, mean_psnr, mean_ssim}.

    Raises:
        ResourceError: If the file is missing
        DomainError: If it lists no datasets
    """
    path = Path(path)
    if not path.is_file():
        raise ResourceError(f"Summary file not found: {path}")
    text = path.read_text(encoding="utf-8")
    entries = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if not entries:
        raise DomainError(f"{path} lists no datasets")
    datasets = [DatasetScore(name=str(e["name"]), image_count=int(e["image_count"]),
                             mean_psnr=float(e["mean_psnr"]), mean_ssim=float(e.get("mean_ssim", 0.0)))
                for e in entries]
    return build_report(datasets)


def preset_slug(name: str) -> str:
    """Directory-safe form of a preset name ("w/o Recons. Loss" -> "w_o_recons_loss")."""
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def run_ablation_study(config: TrainConfig, presets: Sequence[str] = ABLATION_ROWS,
                       steps: int = OVERFIT_STEPS, features: Optional[nn.Sequential] = None,
                       ssim_mode: str = "color") -> EvalReport:
    """
    Train each ablation preset under one protocol and score it on its training pairs.

    Every preset starts from the same seed, trains for exactly `steps` steps
    into <checkpoint_dir>/<preset slug>/ and is then evaluated at native
    resolution on the records it was trained on.

    Args:
        config: Shared run settings (data, learning rate, widths, backbone)
        presets: Names from ABLATION_PRESETS, in report order
        steps: Optimizer steps per preset
        features: Optional prebuilt VGG-19 stack shared by all runs
        ssim_mode: "color" or "gray"

    Returns:
        EvalReport with one dataset entry per preset and per-image rows
        tagged with the preset name

    Raises:
        ConfigurationError: For unknown or missing presets, or steps < 1
    """
    presets = list(presets)
    if not presets:
        raise ConfigurationError("no ablation presets to compare")
    unknown = [name for name in presets if name not in ABLATION_PRESETS]
    if unknown:
        raise ConfigurationError(f"unknown ablation presets {unknown} (choose from {list(ABLATION_PRESETS)})")
    if steps < 1:
        raise ConfigurationError(f"steps must be >= 1 (got {steps})")

    records = len(load_manifests(config.manifests))
    batches_per_epoch = math.ceil(records / config.batch_size)
    epochs = math.ceil(steps / batches_per_epoch)
    features = features if features is not None else build_vgg19_features(config.backbone)
    root = Path(config.checkpoint_dir)

    logger.info("=" * 80)
    logger.info("Ablation study: %d presets, %d steps each on %d records", len(presets), steps, records)
    logger.info("=" * 80)

    datasets: List[DatasetScore] = []
    rows: List[ImageScore] = []
    for name in presets:
        run_config = replace(config, ablation=ABLATION_PRESETS[name], epochs=epochs,
                             max_steps=steps, checkpoint_dir=str(root / preset_slug(name)))
        trainer = Trainer(run_config, features=features)
        trainer.train()
        predict = model_predictor(trainer.model.eval(), trainer.backbone)
        preset_rows = score_manifest(name, trainer.manifest, predict, ssim_mode)
        score = dataset_score(name, preset_rows)
        logger.info("✅ %-20s PSNR %.2f  SSIM %.4f", name, score.mean_psnr, score.mean_ssim)
        datasets.append(score)
        rows.extend(preset_rows)
    return build_report(datasets, rows, ssim_mode)
