"""Training objectives: mask BCE, dual-region L1, consistency, weighted total."""
from dataclasses import dataclass
import math

import torch

from .errors import ConfigError, DimensionError, TrainingAborted, ValidationError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    mask: float = 3.0
    completion: float = 5.0
    consistency: float = 0.02

    def __post_init__(self):
        if min(self.mask, self.completion, self.consistency) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class SoftBinarizer:
    """Differentiable stand-in for hard binarization of a frame difference.

    ``b(z) = clamp(kappa * (mean_c |z| - tau), 0, 1)``; it saturates to 1
    once the channel-mean absolute difference reaches ``tau + 1/kappa``.
    """

    tau: float = 2.0 / 255.0
    kappa: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")

    def __call__(self, diff: torch.Tensor) -> torch.Tensor:
        return (self.kappa * (diff.abs().mean(dim=-1, keepdim=True) - self.tau)).clamp(0.0, 1.0)

    def hard(self, diff: torch.Tensor) -> torch.Tensor:
        return (diff.abs().mean(dim=-1, keepdim=True) > self.tau).to(diff.dtype)


def _same_shape(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def _bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = pred.clamp(EPS, 1 - EPS)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def mask_loss(m_s: torch.Tensor, m_l: torch.Tensor, m_gt: torch.Tensor) -> torch.Tensor:
    """Mean BCE of the short-term plus the refined masks against the truth."""
    _same_shape(m_s, m_l, m_gt)
    for name, t in (("M_s", m_s), ("M_l", m_l), ("M_gt", m_gt)):
        if t.min() < 0 or t.max() > 1:
            raise ValidationError(f"{name} has values outside [0, 1]")
    return _bce(m_s, m_gt) + _bce(m_l, m_gt)


def completion_loss(y_hat: torch.Tensor, y: torch.Tensor, m_gt: torch.Tensor) -> torch.Tensor:
    """L1 inside the hole plus L1 outside it, each averaged over its own pixels.

    ``m_gt`` is ``(..., 1)`` and is broadcast over colour channels. An empty
    region contributes zero.
    """
    _same_shape(y_hat, y)
    if m_gt.shape[:-1] != y.shape[:-1] or m_gt.shape[-1] != 1:
        raise DimensionError(f"mask {tuple(m_gt.shape)} misaligned with frames {tuple(y.shape)}")
    err = (y_hat - y).abs().mean(dim=-1, keepdim=True)
    total = y_hat.new_zeros(())
    for weight in (m_gt, 1 - m_gt):
        area = weight.sum()
        if area > 0:
            total = total + (err * weight).sum() / area
    return total


def consistency_loss(m_l, m_gt, y_hat, x, binarizer: SoftBinarizer = SoftBinarizer()) -> torch.Tensor:
    """Both masks should agree with where the output changed the input."""
    _same_shape(m_l, m_gt)
    _same_shape(y_hat, x)
    changed = binarizer(y_hat - x)
    _same_shape(changed, m_l)
    return (m_l - changed).abs().mean() + (m_gt - changed).abs().mean()


def total_loss(l_m, l_v, l_c, weights: LossWeights = LossWeights()):
    parts = [float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for v in (l_m, l_v, l_c)]
    if not all(math.isfinite(v) for v in parts):
        raise TrainingAborted(f"non-finite loss component(s): {parts}")
    return weights.mask * l_m + weights.completion * l_v + weights.consistency * l_c
