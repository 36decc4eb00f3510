"""Loss functions for the heavily class-imbalanced neuron/background task.

Both losses take B x H x W x 2 per-pixel probabilities (background, neuron)
and a B x H x W binary target. log_loss with fn_weight=1 is standard
cross-entropy; fn_weight > 1 multiplies the loss on neuron pixels, trading
precision for recall. mdc_loss is the modified Dice coefficient with
squared terms in the denominator.
"""

from __future__ import annotations

import torch

CLAMP_EPS = 1e-7
DICE_SMOOTH = 1e-6


def _check_shapes(pred, target):
    if pred.ndim != 4 or pred.shape[-1] != 2:
        raise ValueError(f"pred must be B x H x W x 2, got {tuple(pred.shape)}")
    if tuple(target.shape) != tuple(pred.shape[:-1]):
        raise ValueError(
            f"target shape {tuple(target.shape)} does not match pred {tuple(pred.shape[:-1])}"
        )


def log_loss(pred: torch.Tensor, target: torch.Tensor, fn_weight: float = 1.0) -> torch.Tensor:
    """Pixel-mean weighted logarithmic loss.

    Per pixel: -(w * t * log p1 + (1 - t) * log p0), with w = fn_weight on
    neuron pixels and 1 elsewhere. Probabilities are clamped to
    [1e-7, 1 - 1e-7] before the log.
    """
    _check_shapes(pred, target)
    if fn_weight < 1.0:
        raise ValueError("fn_weight must be >= 1")
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    t = target.to(p.dtype)
    pixel = -(fn_weight * t * torch.log(p[..., 1]) + (1.0 - t) * torch.log(p[..., 0]))
    return pixel.mean()


def mdc_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Modified Dice loss on the neuron channel, averaged over the batch.

    1 - (2 * sum(p*t) + s) / (sum(p^2) + sum(t^2) + s); the smoothing term
    s makes the empty-prediction/empty-target case come out as loss 0.
    """
    _check_shapes(pred, target)
    p = pred[..., 1]
    t = target.to(p.dtype)
    dims = tuple(range(1, p.ndim))
    num = 2.0 * (p * t).sum(dim=dims) + DICE_SMOOTH
    den = (p * p).sum(dim=dims) + (t * t).sum(dim=dims) + DICE_SMOOTH
    return (1.0 - num / den).mean()
