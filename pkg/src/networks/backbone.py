"""
VGG-19 feature taps used by the semantic encoder and the perceptual loss.

A tap index i means "the activation after the first i layers of the VGG-19
feature stack". Weights come from a state dict file, torchvision's published
ImageNet weights, or a seeded random draw (test mode).
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
from torchvision.models import VGG19_Weights
from torchvision.models.vgg import cfgs, make_layers

from src.config import BACKBONE_TAPS, PERCEPTUAL_TAPS, BackboneConfig
from src.errors import ResourceError, ShapeError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class VGGFeatureExtractor(nn.Module):
    """
    Frozen feature extractor returning the activations at the requested taps.

    Several extractors may share one feature stack (backbone and perceptual
    loss use the same weights with different taps).
    """

    def __init__(self, features: nn.Sequential, taps: Sequence[int], normalize: bool = True):
        super().__init__()
        if not taps or max(taps) > len(features) or min(taps) < 1:
            raise ShapeError(f"taps {tuple(taps)} out of range for {len(features)} layers")
        self.features = features
        self.taps = tuple(sorted(taps))
        self.normalize = normalize
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        if self.normalize:
            x = (x - self.mean) / self.std
        outputs = []
        for i, layer in enumerate(self.features[: self.taps[-1]], start=1):
            x = layer(x)
            if i in self.taps:
                outputs.append(x)
        return outputs


def _strip_prefix(state: dict) -> dict:
    if any(k.startswith("features.") for k in state):
        return {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
    return state


def build_vgg19_features(config: Optional[BackboneConfig] = None) -> nn.Sequential:
    """
    Build the frozen VGG-19 feature stack.

    Args:
        config: Backbone weight source (defaults to environment settings)

    Returns:
        nn.Sequential of 37 layers in eval mode with gradients disabled

    Raises:
        ResourceError: If the weights file is missing or cannot be loaded
    """
    config = config or BackboneConfig.from_env()
    features = make_layers(cfgs["E"], batch_norm=False)

    if config.weights_path:
        weights_file = Path(config.weights_path)
        if not weights_file.is_file():
            raise ResourceError(f"Backbone weights not found: {weights_file}")
        try:
            state = torch.load(str(weights_file), map_location="cpu", weights_only=True)
            features.load_state_dict(_strip_prefix(state))
        except Exception as e:
            raise ResourceError(f"Cannot load backbone weights from {weights_file}: {e}") from e
        logger.info("Loaded VGG-19 weights from %s", weights_file)
    elif config.random_init:
        # He-uniform keeps activations alive through all 16 convolutions
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            with torch.no_grad():
                for m in features.modules():
                    if isinstance(m, nn.Conv2d):
                        bound = (6.0 / m.weight[0].numel()) ** 0.5
                        m.weight.uniform_(-bound, bound)
                        m.bias.zero_()
        logger.debug("Using seeded random VGG-19 weights (seed=%d)", config.seed)
    else:
        try:
            state = VGG19_Weights.IMAGENET1K_V1.get_state_dict(progress=False)
        except Exception as e:
            raise ResourceError(
                f"Cannot fetch VGG-19 ImageNet weights ({e}); set DSRNET_VGG_WEIGHTS to a local file"
            ) from e
        features.load_state_dict(_strip_prefix(state))
        logger.info("Loaded torchvision VGG-19 ImageNet weights")

    for p in features.parameters():
        p.requires_grad_(False)
    return features.eval()


def build_backbone(config: Optional[BackboneConfig] = None,
                   features: Optional[nn.Sequential] = None) -> VGGFeatureExtractor:
    """Extractor for the five pre-pooling stages (strides 1, 2, 4, 8, 16)."""
    return VGGFeatureExtractor(features if features is not None else build_vgg19_features(config),
                               BACKBONE_TAPS)


def build_perceptual_extractor(config: Optional[BackboneConfig] = None,
                               features: Optional[nn.Sequential] = None,
                               taps: Sequence[int] = PERCEPTUAL_TAPS) -> VGGFeatureExtractor:
    """Extractor for the perceptual loss taps (relu1_1 .. relu5_1)."""
    return VGGFeatureExtractor(features if features is not None else build_vgg19_features(config),
                               taps)


def extract_backbone_features(image: torch.Tensor, backbone: VGGFeatureExtractor) -> List[torch.Tensor]:
    """
    Extract the five hierarchical feature grids of an image batch.

    Args:
        image: (N, 3, H, W) tensor with H, W divisible by 16
        backbone: Extractor built by build_backbone

    Returns:
        Five tensors at strides 1, 2, 4, 8, 16, never resampled to a common scale

    Raises:
        ShapeError: If H or W is not divisible by 16
        ResourceError: If no backbone is supplied
    """
    if backbone is None:
        raise ResourceError("No backbone available for feature extraction")
    h, w = image.shape[-2:]
    if h % 16 or w % 16:
        raise ShapeError(f"backbone input must have sides divisible by 16 (got {h}x{w})")
    return backbone(image)
