"""
Training objectives: pixel, perceptual, exclusion and residue-rectified
reconstruction losses, plus their weighted combination.

All norms are reduced with means so magnitudes do not depend on resolution.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.config import RECONSTRUCTION_MODES, LossWeights
from src.errors import ConfigurationError, ResourceError, ShapeError
from src.models.models import Decomposition, LossBreakdown

logger = logging.getLogger(__name__)

FeatureExtractor = Callable[[torch.Tensor], List[torch.Tensor]]

_ETA_EPS = 1e-6


def _require_same_shape(*tensors: torch.Tensor) -> None:
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"loss inputs differ in shape: {sorted(shapes)}")


def image_gradients(img: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Forward differences over the valid region.

    Args:
        img: (..., H, W) tensor with H, W >= 2

    Returns:
        (dx, dy) with shapes (..., H, W-1) and (..., H-1, W)

    Raises:
        ShapeError: If either spatial axis has fewer than 2 pixels
    """
    h, w = img.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"gradients need at least 2 pixels per axis (got {h}x{w})")
    dx = img[..., :, 1:] - img[..., :, :-1]
    dy = img[..., 1:, :] - img[..., :-1, :]
    return dx, dy


def _per_sample_mean(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(1).mean(dim=1)


def _gradient_l1(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    pdx, pdy = image_gradients(pred)
    gdx, gdy = image_gradients(gt)
    return (_per_sample_mean((pdx - gdx).abs()) + _per_sample_mean((pdy - gdy).abs())) / 2


def pixel_loss(pred_t: torch.Tensor, pred_r: torch.Tensor, gt_t: torch.Tensor, gt_r: torch.Tensor,
               alpha: float = 2.0, r_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Squared error on both layers plus alpha-weighted L1 on their gradients.

    Args:
        pred_t, pred_r, gt_t, gt_r: (N, C, H, W) tensors of equal shape
        alpha: Weight of the gradient term
        r_mask: Optional (N,) mask; samples with 0 contribute no reflection terms

    Returns:
        Scalar loss
    """
    _require_same_shape(pred_t, pred_r, gt_t, gt_r)
    term_t = _per_sample_mean((pred_t - gt_t) ** 2) + alpha * _gradient_l1(pred_t, gt_t)
    term_r = _per_sample_mean((pred_r - gt_r) ** 2) + alpha * _gradient_l1(pred_r, gt_r)
    if r_mask is not None:
        term_r = term_r * r_mask.to(term_r.dtype)
    return (term_t + term_r).mean()


def perceptual_loss(pred_t: torch.Tensor, gt_t: torch.Tensor,
                    extractor: Optional[FeatureExtractor],
                    omega: Sequence[float]) -> torch.Tensor:
    """
    Weighted L1 distance between feature taps of prediction and ground truth.

    Args:
        pred_t: Predicted transmission (N, 3, H, W)
        gt_t: Ground-truth transmission, same shape
        extractor: Callable returning one feature tensor per tap
        omega: One weight per tap

    Raises:
        ResourceError: If no extractor is available
        ConfigurationError: If omega does not match the number of taps
    """
    _require_same_shape(pred_t, gt_t)
    if extractor is None:
        raise ResourceError("perceptual loss needs a feature extractor")
    pred_feats = extractor(pred_t)
    with torch.no_grad():
        gt_feats = extractor(gt_t)
    if len(pred_feats) != len(omega):
        raise ConfigurationError(
            f"perceptual weights ({len(omega)}) do not match extractor taps ({len(pred_feats)})"
        )
    loss = pred_t.new_zeros(())
    for w, pf, gf in zip(omega, pred_feats, gt_feats):
        loss = loss + w * F.l1_loss(pf, gf)
    return loss


def _etas(grad_t: torch.Tensor, grad_r: torch.Tensor, policy: str,
          fixed: Tuple[float, float]) -> Tuple[torch.Tensor, torch.Tensor]:
    one = grad_t.new_ones(())
    if policy == "balance_second":
        return one, grad_t.abs().mean() / (grad_r.abs().mean() + _ETA_EPS)
    if policy == "balance_first":
        return grad_r.abs().mean() / (grad_t.abs().mean() + _ETA_EPS), one
    if policy == "fixed":
        return one * fixed[0], one * fixed[1]
    raise ConfigurationError(f"unknown eta policy '{policy}'")


def exclusion_loss(pred_t: torch.Tensor, pred_r: torch.Tensor, levels: int = 3,
                   eta_policy: str = "balance_second",
                   fixed_eta: Tuple[float, float] = (1.0, 1.0)) -> torch.Tensor:
    """
    Gradient-independence prior averaged over dyadic scales.

    At every scale and direction, psi = tanh(eta1 |grad T|) * tanh(eta2 |grad R|)
    and the term is mean(psi^2); directions are averaged, then scales.
    Scale n is reached by n rounds of 2x2 average pooling.

    Raises:
        ShapeError: If the coarsest scale has fewer than 2 pixels on an axis
    """
    _require_same_shape(pred_t, pred_r)
    if levels < 1:
        raise ConfigurationError(f"exclusion levels must be >= 1 (got {levels})")
    h, w = pred_t.shape[-2:]
    coarse = 2 ** (levels - 1)
    if -(-h // coarse) < 2 or -(-w // coarse) < 2:
        raise ShapeError(f"{h}x{w} image too small for {levels} exclusion scales")

    t, r = pred_t, pred_r
    total = pred_t.new_zeros(())
    for n in range(levels):
        if n:
            t = F.avg_pool2d(t, 2, ceil_mode=True)
            r = F.avg_pool2d(r, 2, ceil_mode=True)
        level = pred_t.new_zeros(())
        for grad_t, grad_r in zip(image_gradients(t), image_gradients(r)):
            eta1, eta2 = _etas(grad_t, grad_r, eta_policy, fixed_eta)
            psi = torch.tanh(eta1 * grad_t.abs()) * torch.tanh(eta2 * grad_r.abs())
            level = level + (psi ** 2).mean()
        total = total + level / 2
    return total / levels


def r3_loss(input_img: torch.Tensor, pred_t: torch.Tensor, pred_r: torch.Tensor,
            residue: torch.Tensor) -> torch.Tensor:
    """Mean absolute value of I - T - R - residue."""
    _require_same_shape(input_img, pred_t, pred_r, residue)
    return (input_img - pred_t - pred_r - residue).abs().mean()


def total_loss(input_img: torch.Tensor, decomposition: Decomposition,
               gt_t: torch.Tensor, gt_r: Optional[torch.Tensor],
               weights: LossWeights, extractor: Optional[FeatureExtractor],
               reconstruction: str = "residual",
               r_mask: Optional[torch.Tensor] = None) -> LossBreakdown:
    """
    All four training terms and their weighted sum.

    Args:
        input_img: Mixed image (N, 3, H, W)
        decomposition: Network output
        gt_t: Ground-truth transmission
        gt_r: Ground-truth reflection, or None when no sample has one
        weights: Loss weights
        extractor: Perceptual feature extractor
        reconstruction: "residual" uses the predicted residue, "linear" assumes
            a zero residue, "off" drops the term
        r_mask: Optional (N,) mask of samples that carry a reflection layer

    Returns:
        LossBreakdown with total = pixel + b1*perceptual + b2*exclusion + b3*reconstruction
    """
    if reconstruction not in RECONSTRUCTION_MODES:
        raise ConfigurationError(f"unknown reconstruction mode '{reconstruction}'")
    pred_t, pred_r = decomposition.transmission, decomposition.reflection
    if gt_r is None:
        gt_r = torch.zeros_like(gt_t)
        r_mask = gt_t.new_zeros(gt_t.shape[0])

    pixel = pixel_loss(pred_t, pred_r, gt_t, gt_r, weights.alpha, r_mask)
    perceptual = perceptual_loss(pred_t, gt_t, extractor, weights.omega)
    exclusion = exclusion_loss(pred_t, pred_r, weights.exclusion_levels,
                               weights.eta_policy, weights.fixed_eta)
    if reconstruction == "off":
        rec = pred_t.new_zeros(())
    else:
        residue = decomposition.residue if reconstruction == "residual" else torch.zeros_like(pred_t)
        rec = r3_loss(input_img, pred_t, pred_r, residue)

    total = (pixel + weights.beta1 * perceptual + weights.beta2 * exclusion
             + weights.beta3 * rec)
    return LossBreakdown(pixel, perceptual, exclusion, rec, total)


class DSRNetCriterion(nn.Module):
    """Bundles loss weights, the perceptual extractor and the reconstruction mode."""

    def __init__(self, weights: LossWeights, extractor: Optional[FeatureExtractor],
                 reconstruction: str = "residual"):
        super().__init__()
        weights.validate()
        self.weights = weights
        self.extractor = extractor
        self.reconstruction = reconstruction

    def forward(self, input_img: torch.Tensor, decomposition: Decomposition,
                gt_t: torch.Tensor, gt_r: Optional[torch.Tensor],
                r_mask: Optional[torch.Tensor] = None) -> LossBreakdown:
        return total_loss(input_img, decomposition, gt_t, gt_r, self.weights,
                          self.extractor, self.reconstruction, r_mask)
