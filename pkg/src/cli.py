"""
Command-line interface.

Subcommands: synthesize, train, ablate, infer, evaluate, montage.

Exit codes: 0 success, 1 usage or configuration error, 2 missing or
unreadable resource, 3 numerical divergence.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.checkpoint import load_model
from src.config import (
    ABLATION_PRESETS,
    ABLATION_ROWS,
    ENCODER_MODES,
    INTERACTION_MODES,
    PERCEPTUAL_OMEGA,
    RECONSTRUCTION_MODES,
    AblationFlags,
    BackboneConfig,
    LossWeights,
    SynthesisConfig,
    TrainConfig,
)
from src.data.image_io import IMAGE_EXTENSIONS, load_image, save_image, to_array, to_tensor
from src.data.synthesis import build_synthetic_dataset
from src.errors import (
    ConfigurationError,
    DivergenceError,
    DSRNetError,
    ResourceError,
    UsageError,
)
from src.evaluator import (
    OVERFIT_STEPS,
    evaluate,
    evaluate_predictions,
    evaluate_summaries,
    run_ablation_study,
)
from src.exporters.report_exporter import export_report
from src.metrics import SSIM_MODES
from src.models.models import EvalReport
from src.montage import rows_from_results, save_montage
from src.networks.backbone import build_backbone
from src.networks.dsrnet import dsrnet_forward
from src.trainer import train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RESOURCE = 2
EXIT_DIVERGENCE = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class RunConfig(BaseModel):
    """
    Flat training configuration as read from a YAML file.

    Every key maps onto a TrainConfig field (loss weights and ablation
    switches are flattened). Unknown keys are rejected.
    """
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, ge=0.0, description="Fixed Adam learning rate")
    batch_size: int = Field(1, ge=1)
    epochs: int = Field(20, ge=1)
    seed: int = 0
    manifests: List[str] = Field(default_factory=list, description="Manifest files or real-pair dirs")
    checkpoint_dir: str = "checkpoints"
    image_size: Optional[int] = Field(224, ge=16, description="Random crop side; null keeps native size")
    base_width: int = Field(64, ge=2)
    pyramid_widths: Optional[List[int]] = Field(
        None, description="Encoder width per backbone tap; null derives them from base_width")
    dsd_levels: int = Field(3, ge=1)
    blocks_per_level: int = Field(2, ge=1)
    grad_clip: Optional[float] = Field(None, gt=0.0)
    max_steps: Optional[int] = Field(None, ge=0)
    progress: bool = False

    alpha: float = Field(2.0, ge=0.0)
    beta1: float = Field(0.01, ge=0.0)
    beta2: float = Field(1.0, ge=0.0)
    beta3: float = Field(0.2, ge=0.0)
    omega: List[float] = Field(default_factory=lambda: list(PERCEPTUAL_OMEGA))
    exclusion_levels: int = Field(3, ge=1)
    eta_policy: str = "balance_second"
    fixed_eta: Tuple[float, float] = (1.0, 1.0)

    reconstruction: str = "residual"
    interaction: str = "mugi"
    encoder: str = "dsfnet"

    vgg_weights: Optional[str] = None
    random_backbone: bool = False
    backbone_seed: int = 0

    def to_train_config(self) -> TrainConfig:
        """
        Build the validated TrainConfig.

        Raises:
            ConfigurationError: If values are inconsistent
        """
        env = BackboneConfig.from_env()
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            weights=LossWeights(
                alpha=self.alpha, beta1=self.beta1, beta2=self.beta2, beta3=self.beta3,
                omega=tuple(self.omega), exclusion_levels=self.exclusion_levels,
                eta_policy=self.eta_policy, fixed_eta=tuple(self.fixed_eta),
            ),
            ablation=AblationFlags(self.reconstruction, self.interaction, self.encoder),
            manifests=list(self.manifests),
            checkpoint_dir=self.checkpoint_dir,
            image_size=self.image_size,
            base_width=self.base_width,
            pyramid_widths=tuple(self.pyramid_widths) if self.pyramid_widths is not None else None,
            dsd_levels=self.dsd_levels,
            blocks_per_level=self.blocks_per_level,
            grad_clip=self.grad_clip,
            max_steps=self.max_steps,
            backbone=BackboneConfig(
                weights_path=self.vgg_weights or env.weights_path,
                random_init=self.random_backbone or env.random_init,
                seed=self.backbone_seed,
            ),
            progress=self.progress,
        )
        config.validate()
        return config


def load_run_config(path: Optional[str], overrides: Dict[str, object]) -> RunConfig:
    """
    Read a YAML config file and apply command-line overrides on top.

    Raises:
        ResourceError: If the file is missing
        UsageError: If the file is malformed or has unknown keys
    """
    data: Dict[str, object] = {}
    if path:
        config_file = Path(path)
        if not config_file.is_file():
            raise ResourceError(f"Config file not found: {config_file}")
        try:
            data = yaml.safe_load(config_file.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise UsageError(f"Cannot parse {config_file}: {e}") from e
        if not isinstance(data, dict):
            raise UsageError(f"{config_file} must hold a flat key/value mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise UsageError(f"Invalid configuration: {e}") from e


def parse_range(text: str) -> Tuple[float, float]:
    """Parse "lo:hi" into a float pair."""
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got '{text}'")
    return lo, hi


def parse_ablations(items: List[str], preset: Optional[str]) -> Dict[str, str]:
    """
    Turn --preset and --ablate KEY=VALUE flags into config overrides.

    Raises:
        UsageError: For unknown presets, keys or values
    """
    choices = {"reconstruction": RECONSTRUCTION_MODES, "interaction": INTERACTION_MODES,
               "encoder": ENCODER_MODES}
    result: Dict[str, str] = {}
    if preset is not None:
        if preset not in ABLATION_PRESETS:
            raise UsageError(f"unknown preset '{preset}' (choose from {list(ABLATION_PRESETS)})")
        flags = ABLATION_PRESETS[preset]
        result.update(reconstruction=flags.reconstruction, interaction=flags.interaction,
                      encoder=flags.encoder)
    for item in items or []:
        key, _, value = item.partition("=")
        if key not in choices or value not in choices[key]:
            allowed = ", ".join(f"{k}={'|'.join(v)}" for k, v in choices.items())
            raise UsageError(f"--ablate expects one of {allowed} (got '{item}')")
        result[key] = value
    return result


def backbone_for(args: argparse.Namespace) -> Optional[BackboneConfig]:
    """Backbone named by command-line flags, or None to defer to the checkpoint/environment."""
    if args.vgg_weights or args.random_backbone:
        seed = args.backbone_seed if args.backbone_seed is not None else 0
        return BackboneConfig(weights_path=args.vgg_weights, random_init=args.random_backbone, seed=seed)
    return None


def cmd_synthesize(args: argparse.Namespace) -> int:
    config = SynthesisConfig(
        gamma1_range=args.gamma1_range,
        gamma2_range=args.gamma2_range,
        blur=not args.no_blur,
        blur_sigma=args.blur_sigma,
        crop_size=args.crop_size,
        flip=not args.no_flip,
    )
    manifest = build_synthetic_dataset(args.source_dir, args.out, args.count, args.seed, config)
    print(f"✅ {len(manifest)} pairs written to {args.out}")
    return EXIT_OK


def parse_widths(text: str) -> List[int]:
    """Parse "a,b,c,d,e" into a list of widths."""
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _training_overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "manifests": args.manifest,
        "checkpoint_dir": args.checkpoint_dir,
        "image_size": args.image_size,
        "base_width": args.base_width,
        "pyramid_widths": args.pyramid_widths,
        "grad_clip": args.grad_clip,
        "progress": True if args.progress else None,
        "vgg_weights": args.vgg_weights,
        "random_backbone": True if args.random_backbone else None,
        "backbone_seed": args.backbone_seed,
    }


def _load_training_config(args: argparse.Namespace, overrides: Dict[str, object]) -> RunConfig:
    run_config = load_run_config(args.config, overrides)
    if args.native_size:
        run_config = run_config.model_copy(update={"image_size": None})
    if not run_config.manifests:
        raise UsageError(f"{args.command} needs at least one --manifest (or 'manifests' in the config file)")
    logger.info("Effective configuration:\n%s", yaml.safe_dump(run_config.model_dump(), sort_keys=True))
    return run_config


def _print_report(report: EvalReport) -> None:
    for d in report.datasets:
        print(f"{d.name:<20} {d.image_count:>5}  PSNR {d.mean_psnr:6.2f}  SSIM {d.mean_ssim:.4f}")
    print(f"{'Average':<20} {sum(d.image_count for d in report.datasets):>5}  "
          f"PSNR {report.weighted_psnr:6.2f}  SSIM {report.weighted_ssim:.4f}")


def cmd_train(args: argparse.Namespace) -> int:
    overrides = _training_overrides(args)
    overrides.update(epochs=args.epochs, max_steps=args.max_steps)
    overrides.update(parse_ablations(args.ablate, args.preset))
    run_config = _load_training_config(args, overrides)

    ckpt = train(run_config.to_train_config(), resume=args.resume)
    print(f"✅ Training finished at epoch {ckpt.epoch}, step {ckpt.step}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    presets = args.preset or list(ABLATION_ROWS)
    unknown = [name for name in presets if name not in ABLATION_PRESETS]
    if unknown:
        raise UsageError(f"unknown presets {unknown} (choose from {list(ABLATION_PRESETS)})")
    run_config = _load_training_config(args, _training_overrides(args))

    report = run_ablation_study(run_config.to_train_config(), presets, args.steps,
                                ssim_mode=args.ssim_mode)
    written = export_report(report, args.out, stem="ablation", excel=args.excel)
    _print_report(report)
    print(f"✅ Ablation report written to {written['json']}")
    return EXIT_OK


def _collect_inputs(paths: List[str]) -> List[Path]:
    inputs: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            inputs.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS))
        elif path.is_file():
            inputs.append(path)
        else:
            raise ResourceError(f"Input not found: {path}")
    return inputs


def cmd_infer(args: argparse.Namespace) -> int:
    model, ckpt = load_model(args.checkpoint)
    backbone = build_backbone(backbone_for(args) or ckpt.backbone_config()) if model.requires_backbone else None
    out_dir = Path(args.out)
    inputs = _collect_inputs(args.inputs)
    for path in inputs:
        image = to_tensor(load_image(path))[None]
        with torch.no_grad():
            result = dsrnet_forward(image, model, backbone, with_residue=args.with_residue).clipped()
        save_image(out_dir / f"{path.stem}_T.png", to_array(result.transmission[0]))
        save_image(out_dir / f"{path.stem}_R.png", to_array(result.reflection[0]))
        if args.with_residue:
            save_image(out_dir / f"{path.stem}_residue.png", to_array((result.residue[0] + 1.0) / 2.0))
        logger.info("Separated %s", path.name)
    print(f"✅ {len(inputs)} images separated into {out_dir}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    sources = [s for s in (args.checkpoint, args.predictions_dir, args.summaries) if s]
    if len(sources) != 1:
        raise UsageError("evaluate needs exactly one of --checkpoint, --predictions-dir, --summaries")
    if args.summaries:
        report = evaluate_summaries(args.summaries)
    elif not args.manifest:
        raise UsageError("evaluate needs at least one --manifest")
    elif args.predictions_dir:
        report = evaluate_predictions(args.predictions_dir, args.manifest, args.ssim_mode)
    else:
        report = evaluate(args.checkpoint, args.manifest, backbone_for(args), args.ssim_mode)

    written = export_report(report, args.out, excel=args.excel)
    _print_report(report)
    print(f"✅ Report written to {written['json']}")
    return EXIT_OK


def cmd_montage(args: argparse.Namespace) -> int:
    rows = rows_from_results(_collect_inputs(args.inputs), args.results_dir, args.gt_dir)
    save_montage(rows, args.out)
    print(f"✅ Montage with {len(rows)} rows written to {args.out}")
    return EXIT_OK


class CLIParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_backbone_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--vgg-weights", help="VGG-19 state dict (default: $DSRNET_VGG_WEIGHTS)")
    parser.add_argument("--random-backbone", action="store_true",
                        help="Seeded random backbone weights (test mode)")
    parser.add_argument("--backbone-seed", type=int, default=None)


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat YAML config file")
    parser.add_argument("--manifest", action="append", help="Manifest file or real-pair dir (repeatable)")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--checkpoint-dir")
    parser.add_argument("--image-size", type=int)
    parser.add_argument("--native-size", action="store_true", help="Train on uncropped images")
    parser.add_argument("--base-width", type=int)
    parser.add_argument("--pyramid-widths", type=parse_widths, metavar="W1,...,W5",
                        help="Encoder width per backbone tap")
    parser.add_argument("--grad-clip", type=float)
    parser.add_argument("--progress", action="store_true", help="Show a progress bar")
    _add_backbone_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = CLIParser(prog="dsrnet", description="Single-image reflection separation")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="Build a screen-blended training set")
    p.add_argument("--source-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop-size", type=int, default=224)
    p.add_argument("--gamma1-range", type=parse_range, default=(0.8, 1.0))
    p.add_argument("--gamma2-range", type=parse_range, default=(0.4, 1.0))
    p.add_argument("--blur-sigma", type=parse_range, default=(1.0, 5.0))
    p.add_argument("--no-blur", action="store_true")
    p.add_argument("--no-flip", action="store_true")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="Train a model")
    _add_training_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--ablate", action="append", metavar="KEY=VALUE",
                   help="reconstruction=off|linear|residual, interaction=off|ytmt|mugi, "
                        "encoder=off|hypercolumn|dsfnet")
    p.add_argument("--preset", help=f"Ablation preset: {', '.join(repr(k) for k in ABLATION_PRESETS)}")
    p.add_argument("--resume", help="Checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="Train and score every ablation preset under one protocol")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="Report directory")
    p.add_argument("--steps", type=int, default=OVERFIT_STEPS, help="Steps per preset")
    p.add_argument("--preset", action="append",
                   help="Preset to include (repeatable; default: every ablation row)")
    p.add_argument("--ssim-mode", choices=SSIM_MODES, default="color")
    p.add_argument("--excel", action="store_true", help="Also write an Excel workbook")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="Separate images with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", nargs="+", required=True, help="Images or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--with-residue", action="store_true")
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="Score transmission predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions-dir", help="Directory of <id>_T.png predictions")
    p.add_argument("--summaries", help="JSON/YAML list of per-dataset means to re-aggregate")
    p.add_argument("--manifest", action="append", help="Manifest file or real-pair dir (repeatable)")
    p.add_argument("--out", required=True, help="Report directory")
    p.add_argument("--ssim-mode", choices=SSIM_MODES, default="color")
    p.add_argument("--excel", action="store_true", help="Also write an Excel workbook")
    _add_backbone_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("montage", help="Compose a comparison grid")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--results-dir", required=True, help="Directory written by infer")
    p.add_argument("--gt-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_montage)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT, stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        logger.error("❌ %s", e)
        return EXIT_USAGE
    except DivergenceError as e:
        logger.error("❌ Training diverged: %s", e)
        return EXIT_DIVERGENCE
    except ResourceError as e:
        logger.error("❌ %s", e)
        return EXIT_RESOURCE
    except DSRNetError as e:
        logger.error("❌ %s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
