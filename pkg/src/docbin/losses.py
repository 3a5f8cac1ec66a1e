"""Training objectives.  All losses are mean-reduced over every element."""
from __future__ import annotations

from dataclasses import dataclass

import torch

KINDS = ("charbonnier", "bce", "mse", "mae")
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    kind: str = "charbonnier"
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"loss kind must be one of {KINDS}, got {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")


def charbonnier(pred: torch.Tensor, target: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """Mean of ``sqrt((target - pred)^2 + epsilon^2)``.

    Behaves like MSE (up to scale and offset) for errors well below epsilon
    and like MAE above it, while staying smooth at zero error.
    """
    _check(pred, target)
    diff = target - pred
    return torch.sqrt(diff * diff + epsilon * epsilon).mean()


def alternative_losses(pred: torch.Tensor, target: torch.Tensor, kind: str) -> torch.Tensor:
    """BCE, MSE or MAE.  BCE clamps predictions to ``[1e-7, 1 - 1e-7]``."""
    _check(pred, target)
    if kind == "mse":
        return ((target - pred) ** 2).mean()
    if kind == "mae":
        return (target - pred).abs().mean()
    if kind == "bce":
        p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
        return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()
    raise ValueError(f"unknown loss kind {kind!r}")


def compute_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    if cfg.kind == "charbonnier":
        return charbonnier(pred, target, cfg.epsilon)
    return alternative_losses(pred, target, cfg.kind)
