"""
Two-stage dual-stream reflection separation network.

Stage 1 (DSFNet) fuses the backbone pyramid bottom-up into a coarse
transmission/reflection feature pair. Stage 2 (DSDNet) refines the pair with a
U-shaped stack of MuGI blocks and predicts both layers. The learnable residue
module (LRM) reads the features before the output heads and predicts the
residue of the superposition; it never feeds back into the layer predictions.
"""

import logging
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.config import BACKBONE_CHANNELS, ModelConfig
from src.errors import ChannelCountError, ResourceError, ShapeError
from src.models.models import Decomposition, FeaturePair
from src.networks.backbone import VGGFeatureExtractor, extract_backbone_features
from src.networks.blocks import (
    DSFBlock,
    DualFuse,
    MuGIBlock,
    dual_conv,
    reset_parameters,
    tie_streams,
)

logger = logging.getLogger(__name__)


def _duplicate(x: torch.Tensor) -> FeaturePair:
    return FeaturePair(x, x)


class RGBStem(nn.Module):
    """Two 3x3 convolutions on the input image."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.gelu(self.conv1(image)))


class DSFNet(nn.Module):
    """
    Pyramid fusion encoder.

    Each backbone grid is reduced to its pyramid width and passed through a
    MuGI block with both streams equal. Starting from the deepest scale, DSF
    blocks merge each scale into the next shallower one, each followed by a
    MuGI block. The RGB stem joins at full resolution.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = config.scale_widths
        b = config.base_width
        self.widths = widths
        self.reduce = nn.ModuleList(
            nn.Conv2d(c, w, 1) for c, w in zip(BACKBONE_CHANNELS, widths)
        )
        self.scale_blocks = nn.ModuleList(MuGIBlock(config.block(w)) for w in widths)
        self.fusions = nn.ModuleList()
        self.fusion_blocks = nn.ModuleList()
        for i in range(len(widths) - 2, -1, -1):
            self.fusions.append(DSFBlock(widths[i + 1], widths[i], widths[i]))
            self.fusion_blocks.append(MuGIBlock(config.block(widths[i])))
        self.stem = RGBStem(b)
        self.top_fuse = DualFuse(widths[0], b, b)
        self.top_block = MuGIBlock(config.block(b))

    def forward(self, image: torch.Tensor, feats: Optional[List[torch.Tensor]]) -> FeaturePair:
        if feats is None or len(feats) != len(self.widths):
            raise ShapeError(f"pyramid encoder needs {len(self.widths)} backbone grids")
        h, w = image.shape[-2:]
        for i, f in enumerate(feats):
            expected = (h // 2 ** i, w // 2 ** i)
            if tuple(f.shape[-2:]) != expected:
                raise ShapeError(f"backbone grid {i} is {tuple(f.shape[-2:])}, expected {expected}")
            if f.shape[1] != BACKBONE_CHANNELS[i]:
                raise ShapeError(f"backbone grid {i} has {f.shape[1]} channels, expected {BACKBONE_CHANNELS[i]}")

        scales = [block(_duplicate(reduce(f)))
                  for f, reduce, block in zip(feats, self.reduce, self.scale_blocks)]
        deep = scales[-1]
        for k, (fusion, block) in enumerate(zip(self.fusions, self.fusion_blocks)):
            shallow = scales[len(scales) - 2 - k]
            deep = block(fusion(deep, shallow))
        return self.top_block(self.top_fuse(deep, _duplicate(self.stem(image))))


class HyperColumnEncoder(nn.Module):
    """Ablation encoder: every backbone grid upsampled to full size, stacked with the image."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.project = nn.Conv2d(sum(BACKBONE_CHANNELS) + 3, config.base_width, 1)
        self.block = MuGIBlock(config.block(config.base_width))

    def forward(self, image: torch.Tensor, feats: Optional[List[torch.Tensor]]) -> FeaturePair:
        if feats is None:
            raise ShapeError("hypercolumn encoder needs backbone grids")
        size = image.shape[-2:]
        column = [image] + [F.interpolate(f, size=size, mode="bilinear", align_corners=False)
                            for f in feats]
        return self.block(_duplicate(self.project(torch.cat(column, dim=1))))


class StemEncoder(nn.Module):
    """Ablation encoder without semantic features: RGB stem only."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.stem = RGBStem(config.base_width)
        self.block = MuGIBlock(config.block(config.base_width))

    def forward(self, image: torch.Tensor, feats: Optional[List[torch.Tensor]] = None) -> FeaturePair:
        return self.block(_duplicate(self.stem(image)))


ENCODERS = {
    "dsfnet": DSFNet,
    "hypercolumn": HyperColumnEncoder,
    "off": StemEncoder,
}


class DSDNet(nn.Module):
    """
    U-shaped dual-stream decomposition network.

    Level l runs at width base * 2**l and stride 2**l. Downsampling is a 2x2
    stride-2 convolution, upsampling is nearest x2 followed by a 3x3
    convolution; skips are fused by concatenation and a 1x1 convolution.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        b = config.base_width
        self.width = b
        self.levels = config.dsd_levels
        widths = [b * 2 ** level for level in range(self.levels)]

        def stack(w: int) -> nn.ModuleList:
            return nn.ModuleList(MuGIBlock(config.block(w)) for _ in range(config.blocks_per_level))

        self.encoders = nn.ModuleList(stack(w) for w in widths)
        self.downs = nn.ModuleList(dual_conv(widths[l], widths[l + 1], kernel=2, stride=2)
                                   for l in range(self.levels - 1))
        self.ups = nn.ModuleList(dual_conv(widths[l + 1], widths[l], kernel=3)
                                 for l in range(self.levels - 1))
        self.skips = nn.ModuleList(DualFuse(widths[l], widths[l], widths[l])
                                   for l in range(self.levels - 1))
        self.decoders = nn.ModuleList(stack(widths[l]) for l in range(self.levels - 1))
        self.head = dual_conv(b, 3, kernel=3)

    def forward(self, pair: FeaturePair) -> Tuple[FeaturePair, FeaturePair, Tuple[torch.Tensor, torch.Tensor]]:
        if pair.channels != self.width:
            raise ShapeError(f"decomposition network expects width {self.width} (got {pair.channels})")
        factor = 2 ** (self.levels - 1)
        h, w = pair.spatial
        if h % factor or w % factor:
            raise ShapeError(f"feature size {h}x{w} not divisible by {factor}")

        x = pair
        skips = []
        for level, blocks in enumerate(self.encoders):
            for block in blocks:
                x = block(x)
            if level < self.levels - 1:
                skips.append(x)
                x = self.downs[level](x)

        for level in range(self.levels - 2, -1, -1):
            x = self.ups[level](x.map(lambda t: F.interpolate(t, scale_factor=2, mode="nearest")))
            x = self.skips[level](x, skips[level])
            for block in self.decoders[level]:
                x = block(x)

        refined = x
        prefinal = FeaturePair(pair.t_stream + refined.t_stream, pair.r_stream + refined.r_stream)
        outputs = self.head(prefinal)
        return refined, prefinal, (outputs.t_stream, outputs.r_stream)


class LRM(nn.Module):
    """Learnable residue module: interactive MuGI block, stream concatenation, fusion convolutions, tanh."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        b = config.base_width
        self.width = b
        self.interact = MuGIBlock(config.block(b))
        self.fuse1 = nn.Conv2d(2 * b, b, 3, padding=1)
        self.fuse2 = nn.Conv2d(b, 3, 3, padding=1)

    def forward(self, prefinal: FeaturePair) -> torch.Tensor:
        if prefinal.channels != self.width:
            raise ShapeError(f"residue module expects width {self.width} (got {prefinal.channels})")
        x = self.interact(prefinal)
        x = torch.cat([x.t_stream, x.r_stream], dim=1)
        x = torch.tanh(self.fuse2(F.gelu(self.fuse1(x))))
        # tanh rounds to +-1 in low precision; keep the range open
        bound = 1.0 - torch.finfo(x.dtype).eps
        return x.clamp(-bound, bound)


class DSRNet(nn.Module):
    """Encoder, decomposition network and residue module; the backbone lives outside."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder = ENCODERS[config.encoder](config)
        self.decoder = DSDNet(config)
        self.lrm = LRM(config)

    @property
    def requires_backbone(self) -> bool:
        return self.config.encoder != "off"

    def forward(self, image: torch.Tensor, feats: Optional[List[torch.Tensor]] = None,
                with_residue: bool = True) -> Decomposition:
        pair = dsfnet_forward(image, feats, self.encoder)
        _, prefinal, (pred_t, pred_r) = dsdnet_forward(pair, self.decoder)
        if with_residue:
            residue = lrm_forward(prefinal, self.lrm)
        else:
            residue = torch.zeros_like(pred_t)
        return Decomposition(pred_t, pred_r, residue)


def dsfnet_forward(image: torch.Tensor, feats: Optional[List[torch.Tensor]], encoder: nn.Module) -> FeaturePair:
    """Coarse dual-stream features at full input resolution."""
    return encoder(image, feats)


def dsdnet_forward(pair: FeaturePair, decoder: DSDNet):
    """
    Refine a feature pair and predict both layers.

    Returns:
        (refined, prefinal, (pred_t, pred_r)); prefinal feeds the output heads and the LRM
    """
    return decoder(pair)


def lrm_forward(prefinal: FeaturePair, lrm: LRM) -> torch.Tensor:
    """Residue grid with every entry strictly inside (-1, 1)."""
    return lrm(prefinal)


def _pad_to_multiple(image: torch.Tensor, multiple: int) -> torch.Tensor:
    h, w = image.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return image
    mode = "reflect" if pad_h < h and pad_w < w else "replicate"
    return F.pad(image, (0, pad_w, 0, pad_h), mode=mode)


def dsrnet_forward(image: torch.Tensor, model: DSRNet,
                   backbone: Optional[VGGFeatureExtractor] = None,
                   with_residue: bool = True) -> Decomposition:
    """
    Full two-stage forward pass on an image batch of any size.

    The input is padded on the bottom/right to a multiple of the model's
    pad size and the outputs are cropped back.

    Args:
        image: (N, 3, H, W) tensor in [0, 1]
        model: Network built by init_model_params
        backbone: Frozen VGG-19 extractor (unused by the stem-only ablation)
        with_residue: Run the residue module; when off the residue is all-zero

    Returns:
        Decomposition with the input's spatial size

    Raises:
        ShapeError: If the input is not a 4-D batch
        ChannelCountError: If the input does not have 3 channels
        ResourceError: If the model needs a backbone and none is supplied
    """
    if image.dim() != 4:
        raise ShapeError(f"expected an (N, 3, H, W) batch (got shape {tuple(image.shape)})")
    if image.shape[1] != 3:
        raise ChannelCountError(f"expected 3 channels (got {image.shape[1]})")
    h, w = image.shape[-2:]
    padded = _pad_to_multiple(image, model.config.pad_multiple)

    feats = None
    if model.requires_backbone:
        if backbone is None:
            raise ResourceError(f"encoder '{model.config.encoder}' requires a backbone")
        feats = extract_backbone_features(padded, backbone)

    return model(padded, feats, with_residue=with_residue).crop(h, w)


def init_model_params(config: ModelConfig, seed: int) -> DSRNet:
    """
    Build the network with deterministic parameters.

    Args:
        config: Model configuration
        seed: Any 64-bit integer

    Returns:
        Initialized DSRNet (tied streams if configured)

    Raises:
        ConfigurationError: If widths are inconsistent or a gate width is odd
    """
    model = reset_parameters(DSRNet(config), seed, config.residual_scale_init)
    if config.tied_streams:
        tie_streams(model)
    logger.info("Built DSRNet (encoder=%s, interaction=%s, width=%d, params=%s)",
                config.encoder, config.interaction, config.base_width,
                f"{count_parameters(model):,}")
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
