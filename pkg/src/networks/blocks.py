"""
Dual-stream building blocks.

Provides:
- mugi_gate: mutually-gated interaction between the two streams
- MuGIBlock: the dual-stream conversion of a NAF-style restoration block
- DSFBlock: dual-stream fusion of two adjacent pyramid scales
- init_block_params: seeded construction with optional tied streams
"""

import logging
from typing import Callable, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.config import BlockConfig
from src.errors import ChannelCountError, ShapeError
from src.models.models import FeaturePair

logger = logging.getLogger(__name__)


def mugi_gate(f_t: torch.Tensor, f_r: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mutually-gated interaction.

    Each stream's former channel half is multiplied by the sibling stream's
    latter half.

    Args:
        f_t: Transmission-stream features (N, C, H, W), C even
        f_r: Reflection-stream features, same shape as f_t

    Returns:
        (out_t, out_r), each with C/2 channels

    Raises:
        ShapeError: If the streams differ in shape
        ChannelCountError: If C is odd
    """
    if f_t.shape != f_r.shape:
        raise ShapeError(f"gate inputs differ: {tuple(f_t.shape)} vs {tuple(f_r.shape)}")
    if f_t.shape[1] % 2:
        raise ChannelCountError(f"gate needs an even channel count (got {f_t.shape[1]})")
    t1, t2 = f_t.chunk(2, dim=1)
    r1, r2 = f_r.chunk(2, dim=1)
    return t1 * r2, r1 * t2


def ytmt_exchange(f_t: torch.Tensor, f_r: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Keep each stream's active part and hand its inactive part to the sibling."""
    pos_t, pos_r = F.relu(f_t), F.relu(f_r)
    return pos_t + (f_r - pos_r), pos_r + (f_t - pos_t)


class LayerNorm2d(nn.Module):
    """Normalizes across channels at every position, learned per-channel scale/shift."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return self.weight.view(1, -1, 1, 1) * y + self.bias.view(1, -1, 1, 1)


class ChannelAttention(nn.Module):
    """Global average pool -> 1x1 convolution -> per-channel scale."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"channel attention expects {self.channels} channels (got {x.shape[1]})")
        return x * self.conv(F.adaptive_avg_pool2d(x, 1))


def channel_attention(f: torch.Tensor, module: ChannelAttention) -> torch.Tensor:
    """Reweight channels of f by the attention module's learned descriptor map."""
    return module(f)


class ResidualScale(nn.Module):
    """Learnable per-channel scale on a residual branch."""

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(1, channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scale


class DualStream(nn.Module):
    """Two parallel copies of a module, one per stream."""

    def __init__(self, factory: Callable[[], nn.Module]):
        super().__init__()
        self.t = factory()
        self.r = factory()

    def forward(self, pair: FeaturePair) -> FeaturePair:
        return FeaturePair(self.t(pair.t_stream), self.r(pair.r_stream))


def dual_conv(in_ch: int, out_ch: int, kernel: int = 1, stride: int = 1, groups: int = 1) -> DualStream:
    return DualStream(lambda: nn.Conv2d(in_ch, out_ch, kernel, stride=stride,
                                        padding=kernel // 2 if stride == 1 else 0,
                                        groups=groups))


class GateSite(nn.Module):
    """
    Where the two streams meet inside a block: 2c channels in, c out.

    mode "mugi" uses mugi_gate; "ytmt" exchanges inactive parts and halves with a
    per-stream 1x1 convolution; "off" only halves, so the streams never meet.
    """

    def __init__(self, width: int, mode: str = "mugi"):
        super().__init__()
        self.mode = mode
        self.halve = dual_conv(2 * width, width) if mode != "mugi" else None

    def forward(self, pair: FeaturePair) -> FeaturePair:
        if self.mode == "mugi":
            return FeaturePair(*mugi_gate(pair.t_stream, pair.r_stream))
        if self.mode == "ytmt":
            pair = FeaturePair(*ytmt_exchange(pair.t_stream, pair.r_stream))
        return self.halve(pair)


class MuGIBlock(nn.Module):
    """
    Dual-stream NAF-style block.

    Sub-stage 1: norm -> 1x1 expand (x2) -> 3x3 depthwise -> gate -> channel
    attention -> 1x1 fuse -> scaled residual.
    Sub-stage 2: norm -> 1x1 expand (x2) -> gate -> 1x1 fuse -> scaled residual.
    """

    def __init__(self, config: BlockConfig):
        super().__init__()
        config.validate()
        c = config.width
        self.width = c

        self.norm1 = DualStream(lambda: LayerNorm2d(c))
        self.expand1 = dual_conv(c, 2 * c)
        self.spatial = dual_conv(2 * c, 2 * c, kernel=3, groups=2 * c)
        self.gate1 = GateSite(c, config.interaction)
        self.attention = DualStream(lambda: ChannelAttention(c))
        self.fuse1 = dual_conv(c, c)
        self.scale1 = DualStream(lambda: ResidualScale(c))

        self.norm2 = DualStream(lambda: LayerNorm2d(c))
        self.expand2 = dual_conv(c, 2 * c)
        self.gate2 = GateSite(c, config.interaction)
        self.fuse2 = dual_conv(c, c)
        self.scale2 = DualStream(lambda: ResidualScale(c))

    def forward(self, pair: FeaturePair) -> FeaturePair:
        if pair.channels != self.width:
            raise ShapeError(f"block expects width {self.width} (got {pair.channels})")
        x = self.spatial(self.expand1(self.norm1(pair)))
        x = self.scale1(self.fuse1(self.attention(self.gate1(x))))
        skip = FeaturePair(pair.t_stream + x.t_stream, pair.r_stream + x.r_stream)

        y = self.gate2(self.expand2(self.norm2(skip)))
        y = self.scale2(self.fuse2(y))
        return FeaturePair(skip.t_stream + y.t_stream, skip.r_stream + y.r_stream)


def mugi_block_forward(pair: FeaturePair, block: MuGIBlock) -> FeaturePair:
    """Run one MuGI block; output keeps the input's shape."""
    return block(pair)


class DualFuse(nn.Module):
    """Per-stream channel concatenation of two pairs followed by a 1x1 convolution."""

    def __init__(self, first_width: int, second_width: int, out_width: int):
        super().__init__()
        self.first_width = first_width
        self.second_width = second_width
        self.conv = dual_conv(first_width + second_width, out_width)

    def forward(self, first: FeaturePair, second: FeaturePair) -> FeaturePair:
        if first.channels != self.first_width or second.channels != self.second_width:
            raise ShapeError(
                f"fusion expects widths ({self.first_width}, {self.second_width}) "
                f"(got ({first.channels}, {second.channels}))"
            )
        if first.spatial != second.spatial:
            raise ShapeError(f"fusion inputs differ spatially: {first.spatial} vs {second.spatial}")
        return self.conv(FeaturePair(
            torch.cat([first.t_stream, second.t_stream], dim=1),
            torch.cat([first.r_stream, second.r_stream], dim=1),
        ))


class DSFBlock(nn.Module):
    """
    Dual-stream fusion of a deep scale into the next shallower one.

    Per stream: nearest x2 upscaling and a 3x3 convolution on the deep
    features, channel concatenation [deep, shallow], 1x1 fusion to out_width.
    """

    def __init__(self, deep_width: int, shallow_width: int, out_width: int):
        super().__init__()
        self.deep_width = deep_width
        self.up_conv = dual_conv(deep_width, deep_width, kernel=3)
        self.fuse = DualFuse(deep_width, shallow_width, out_width)

    def forward(self, deep: FeaturePair, shallow: FeaturePair) -> FeaturePair:
        dh, dw = deep.spatial
        sh, sw = shallow.spatial
        if (2 * dh, 2 * dw) != (sh, sw):
            raise ShapeError(f"deep features {deep.spatial} must be half of shallow {shallow.spatial}")
        if deep.channels != self.deep_width:
            raise ShapeError(f"deep features expect width {self.deep_width} (got {deep.channels})")
        up = self.up_conv(deep.map(lambda x: F.interpolate(x, scale_factor=2, mode="nearest")))
        return self.fuse(up, shallow)


def dsf_block_forward(deep: FeaturePair, shallow: FeaturePair, block: DSFBlock) -> FeaturePair:
    """Fuse deep features into the shallower scale; output takes shallow's size."""
    return block(deep, shallow)


def reset_parameters(module: nn.Module, seed: int, residual_scale_init: float = 1.0) -> nn.Module:
    """
    Deterministically initialize every parameter of a module tree.

    Kernels draw fan-in-scaled uniform values, biases start at zero,
    normalization starts at scale 1 / shift 0. The global RNG is left untouched.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        with torch.no_grad():
            for m in module.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.weight[0].numel()
                    bound = 1.0 / fan_in ** 0.5
                    m.weight.uniform_(-bound, bound)
                    if m.bias is not None:
                        m.bias.zero_()
                elif isinstance(m, LayerNorm2d):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
                elif isinstance(m, ResidualScale):
                    m.scale.fill_(residual_scale_init)
    return module


def tie_streams(module: nn.Module) -> nn.Module:
    """Copy every t-stream parameter into its r-stream twin."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, DualStream):
                m.r.load_state_dict(m.t.state_dict())
    return module


def init_block_params(config: BlockConfig, seed: int) -> MuGIBlock:
    """
    Build a MuGI block with deterministic parameters.

    Args:
        config: Block configuration (width must be even)
        seed: Any 64-bit integer

    Returns:
        Initialized MuGIBlock

    Raises:
        ConfigurationError: If the declared gate width is odd
    """
    config.validate()
    block = reset_parameters(MuGIBlock(config), seed, config.residual_scale_init)
    if config.tied_streams:
        tie_streams(block)
    logger.debug("Initialized MuGI block (width=%d, interaction=%s, seed=%d, tied=%s)",
                 config.width, config.interaction, seed, config.tied_streams)
    return block


def zero_convolutions(module: nn.Module) -> nn.Module:
    """Zero every convolution kernel and bias (test helper for residual identity)."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.zero_()
                if m.bias is not None:
                    m.bias.zero_()
    return module
