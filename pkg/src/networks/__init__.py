"""Dual-stream networks: blocks, backbone taps and the two-stage model."""

from .backbone import (
    VGGFeatureExtractor,
    build_backbone,
    build_perceptual_extractor,
    build_vgg19_features,
    extract_backbone_features,
)
from .blocks import (
    DSFBlock,
    MuGIBlock,
    channel_attention,
    dsf_block_forward,
    init_block_params,
    mugi_block_forward,
    mugi_gate,
)
from .dsrnet import (
    DSRNet,
    dsdnet_forward,
    dsfnet_forward,
    dsrnet_forward,
    init_model_params,
    lrm_forward,
)

__all__ = [
    "VGGFeatureExtractor",
    "build_backbone",
    "build_perceptual_extractor",
    "build_vgg19_features",
    "extract_backbone_features",
    "DSFBlock",
    "MuGIBlock",
    "channel_attention",
    "dsf_block_forward",
    "init_block_params",
    "mugi_block_forward",
    "mugi_gate",
    "DSRNet",
    "dsdnet_forward",
    "dsfnet_forward",
    "dsrnet_forward",
    "init_model_params",
    "lrm_forward",
]
