"""
Configuration for the reflection separation system.
"""

import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from src.errors import ConfigurationError


INTERACTION_MODES = ("mugi", "ytmt", "off")
ENCODER_MODES = ("dsfnet", "hypercolumn", "off")
RECONSTRUCTION_MODES = ("residual", "linear", "off")
ETA_POLICIES = ("balance_second", "balance_first", "fixed")

# Perceptual taps (relu1_1 .. relu5_1) and their combining weights
PERCEPTUAL_TAPS = (2, 7, 12, 21, 30)
PERCEPTUAL_OMEGA = (1 / 2.6, 1 / 4.8, 1 / 3.7, 1 / 5.6, 10 / 1.5)

# Backbone taps (relu1_2 .. relu5_4), strides 1, 2, 4, 8, 16
BACKBONE_TAPS = (4, 9, 18, 27, 36)
BACKBONE_CHANNELS = (64, 128, 256, 512, 512)


def _require_even(name: str, value: int) -> None:
    if value < 2 or value % 2:
        raise ConfigurationError(f"{name} must be an even width >= 2 (got {value})")


def _require_choice(name: str, value: str, choices: Tuple[str, ...]) -> None:
    if value not in choices:
        raise ConfigurationError(f"{name} must be one of {choices} (got '{value}')")


@dataclass
class BlockConfig:
    """Configuration for a single dual-stream block."""

    width: int = 64
    interaction: str = "mugi"  # mugi | ytmt | off
    residual_scale_init: float = 1.0
    tied_streams: bool = False  # copy t-stream weights into the r-stream after init

    def validate(self) -> None:
        """Raise ConfigurationError if the block cannot be built."""
        _require_even("gate width", self.width)
        _require_choice("interaction", self.interaction, INTERACTION_MODES)


@dataclass
class ModelConfig:
    """Configuration for the full two-stage network and its residue module."""

    base_width: int = 64
    pyramid_widths: Optional[Tuple[int, ...]] = None  # one per backbone tap
    dsd_levels: int = 3
    blocks_per_level: int = 2
    interaction: str = "mugi"
    encoder: str = "dsfnet"  # dsfnet | hypercolumn | off
    residual_scale_init: float = 1.0
    tied_streams: bool = False

    @property
    def scale_widths(self) -> Tuple[int, ...]:
        """Per-scale widths used by the pyramid encoder."""
        if self.pyramid_widths is not None:
            return tuple(self.pyramid_widths)
        b = self.base_width
        return (b, 2 * b, 4 * b, 4 * b, 4 * b)

    @property
    def pad_multiple(self) -> int:
        """Input sides must be multiples of this after padding."""
        return max(16, 2 ** (self.dsd_levels - 1))

    def block(self, width: int) -> BlockConfig:
        return BlockConfig(
            width=width,
            interaction=self.interaction,
            residual_scale_init=self.residual_scale_init,
            tied_streams=self.tied_streams,
        )

    def validate(self) -> None:
        """Raise ConfigurationError for inconsistent widths or unknown modes."""
        _require_even("base_width", self.base_width)
        widths = self.scale_widths
        if len(widths) != len(BACKBONE_TAPS):
            raise ConfigurationError(
                f"pyramid_widths needs {len(BACKBONE_TAPS)} entries (got {len(widths)})"
            )
        for i, w in enumerate(widths):
            _require_even(f"pyramid width {i}", w)
        if self.dsd_levels < 1:
            raise ConfigurationError(f"dsd_levels must be >= 1 (got {self.dsd_levels})")
        if self.blocks_per_level < 1:
            raise ConfigurationError(
                f"blocks_per_level must be >= 1 (got {self.blocks_per_level})"
            )
        _require_choice("interaction", self.interaction, INTERACTION_MODES)
        _require_choice("encoder", self.encoder, ENCODER_MODES)

    def to_dict(self) -> dict:
        data = asdict(self)
        if data["pyramid_widths"] is not None:
            data["pyramid_widths"] = list(data["pyramid_widths"])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        data = dict(data)
        if data.get("pyramid_widths") is not None:
            data["pyramid_widths"] = tuple(data["pyramid_widths"])
        return cls(**data)


@dataclass
class BackboneConfig:
    """Where the VGG-19 backbone weights come from."""

    weights_path: Optional[str] = None  # torchvision state dict file
    random_init: bool = False  # seeded random weights, test mode only
    seed: int = 0

    @classmethod
    def from_env(cls) -> 'BackboneConfig':
        """
        Create config from environment variables.

        Environment variables:
            DSRNET_VGG_WEIGHTS: Path to a VGG-19 state dict file
            DSRNET_RANDOM_BACKBONE: "1" to use seeded random weights
        """
        return cls(
            weights_path=os.getenv("DSRNET_VGG_WEIGHTS") or None,
            random_init=os.getenv("DSRNET_RANDOM_BACKBONE", "0") == "1",
        )


@dataclass
class LossWeights:
    """Weights of the four training objectives."""

    alpha: float = 2.0  # gradient term of the pixel loss
    beta1: float = 0.01  # perceptual
    beta2: float = 1.0  # exclusion
    beta3: float = 0.2  # reconstruction
    omega: Tuple[float, ...] = PERCEPTUAL_OMEGA
    exclusion_levels: int = 3
    eta_policy: str = "balance_second"
    fixed_eta: Tuple[float, float] = (1.0, 1.0)

    def validate(self) -> None:
        for name in ("alpha", "beta1", "beta2", "beta3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if any(w < 0 for w in self.omega):
            raise ConfigurationError("perceptual weights must be non-negative")
        if self.exclusion_levels < 1:
            raise ConfigurationError("exclusion_levels must be >= 1")
        _require_choice("eta_policy", self.eta_policy, ETA_POLICIES)


@dataclass
class SynthesisConfig:
    """Settings for screen-blend training pair synthesis."""

    gamma1_range: Tuple[float, float] = (0.8, 1.0)
    gamma2_range: Tuple[float, float] = (0.4, 1.0)
    blur: bool = True
    blur_sigma: Tuple[float, float] = (1.0, 5.0)
    crop_size: int = 224
    flip: bool = True

    def validate(self) -> None:
        for name in ("gamma1_range", "gamma2_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigurationError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        lo, hi = self.blur_sigma
        if self.blur and not 0.0 < lo <= hi:
            raise ConfigurationError("blur_sigma range must be positive")
        if self.crop_size < 1:
            raise ConfigurationError("crop_size must be >= 1")


@dataclass
class AblationFlags:
    """Switches that rewire model and losses for the ablation table."""

    reconstruction: str = "residual"  # residual | linear | off
    interaction: str = "mugi"  # mugi | ytmt | off
    encoder: str = "dsfnet"  # dsfnet | hypercolumn | off

    def validate(self) -> None:
        _require_choice("reconstruction", self.reconstruction, RECONSTRUCTION_MODES)
        _require_choice("interaction", self.interaction, INTERACTION_MODES)
        _require_choice("encoder", self.encoder, ENCODER_MODES)


# The six ablation rows plus the full model
ABLATION_PRESETS: Dict[str, AblationFlags] = {
    "w/o Recons. Loss": AblationFlags(reconstruction="off"),
    "w/ Linear Recons.": AblationFlags(reconstruction="linear"),
    "w/o Feature Inter.": AblationFlags(interaction="off"),
    "w/ YTMT Inter.": AblationFlags(interaction="ytmt"),
    "w/o Feature Enc.": AblationFlags(encoder="off"),
    "w/ HyperColumn": AblationFlags(encoder="hypercolumn"),
    "full": AblationFlags(),
}

# Presets compared by the ablation study, in table order
ABLATION_ROWS: Tuple[str, ...] = tuple(name for name in ABLATION_PRESETS if name != "full")


@dataclass
class TrainConfig:
    """Configuration for a training run."""

    learning_rate: float = 1e-4  # fixed, no schedule
    batch_size: int = 1
    epochs: int = 20
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    manifests: List[str] = field(default_factory=list)
    checkpoint_dir: str = "checkpoints"
    image_size: Optional[int] = 224  # random crop side, None keeps native size
    base_width: int = 64
    pyramid_widths: Optional[Tuple[int, ...]] = None  # derived from base_width when unset
    dsd_levels: int = 3
    blocks_per_level: int = 2
    grad_clip: Optional[float] = None  # max gradient norm, off by default
    max_steps: Optional[int] = None
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    progress: bool = False

    def validate(self) -> None:
        """Raise ConfigurationError if the run cannot start."""
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be > 0, or exactly 0 for a frozen run")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive")
        self.weights.validate()
        self.ablation.validate()
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        """Model configuration implied by the width and ablation settings."""
        return ModelConfig(
            base_width=self.base_width,
            pyramid_widths=tuple(self.pyramid_widths) if self.pyramid_widths is not None else None,
            dsd_levels=self.dsd_levels,
            blocks_per_level=self.blocks_per_level,
            interaction=self.ablation.interaction,
            encoder=self.ablation.encoder,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["weights"]["omega"] = list(self.weights.omega)
        data["weights"]["fixed_eta"] = list(self.weights.fixed_eta)
        if self.pyramid_widths is not None:
            data["pyramid_widths"] = list(self.pyramid_widths)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        data = dict(data)
        weights = dict(data.pop("weights", {}))
        for key in ("omega", "fixed_eta"):
            if key in weights:
                weights[key] = tuple(weights[key])
        if data.get("pyramid_widths") is not None:
            data["pyramid_widths"] = tuple(data["pyramid_widths"])
        known = {f.name for f in fields(cls)}
        return cls(
            weights=LossWeights(**weights),
            ablation=AblationFlags(**data.pop("ablation", {})),
            backbone=BackboneConfig(**data.pop("backbone", {})),
            **{k: v for k, v in data.items() if k in known},
        )


DEFAULT_MODEL_CONFIG = ModelConfig()
DEFAULT_LOSS_WEIGHTS = LossWeights()
DEFAULT_SYNTHESIS_CONFIG = SynthesisConfig()
DEFAULT_TRAIN_CONFIG = TrainConfig()
