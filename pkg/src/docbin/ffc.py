"""Fast Fourier Convolution layers.

Feature maps use the torch ``(N, C, H, W)`` layout.  An FFC layer carries a
:class:`DualTensor` whose ``local`` part is processed by spatial
convolutions and whose ``glob`` part additionally goes through a
:class:`SpectralTransform`, giving every output pixel an image-wide
receptive field.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn


class ConfigurationError(ValueError):
    """Raised when tensors do not match the channel layout of a layer."""


class NumericError(FloatingPointError):
    """Raised when a layer produces NaN or Inf activations."""


def check_finite(tensor: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericError(f"non-finite activations in layer {layer!r}")
    return tensor


class DualTensor(NamedTuple):
    local: torch.Tensor
    glob: torch.Tensor

    @property
    def channels(self) -> int:
        return self.local.shape[1] + self.glob.shape[1]

    def merge(self) -> torch.Tensor:
        return torch.cat([self.local, self.glob], dim=1)

    @classmethod
    def split(cls, x: torch.Tensor, global_channels: int) -> "DualTensor":
        n_local = x.shape[1] - global_channels
        return cls(x[:, :n_local], x[:, n_local:])


@dataclass(frozen=True)
class FfcConfig:
    total_channels: int
    global_ratio: float = 0.5
    local_kernel: int = 3
    use_batch_norm: bool = True

    def __post_init__(self):
        if not 0.0 <= self.global_ratio <= 1.0:
            raise ConfigurationError(f"global_ratio must lie in [0, 1], got {self.global_ratio}")
        if self.local_kernel < 1 or self.local_kernel % 2 == 0:
            raise ConfigurationError(f"local_kernel must be a positive odd int, got {self.local_kernel}")
        if self.total_channels < 1:
            raise ConfigurationError("total_channels must be >= 1")

    @property
    def global_channels(self) -> int:
        return int(round(self.global_ratio * self.total_channels))

    @property
    def local_channels(self) -> int:
        return self.total_channels - self.global_channels


def _norm(channels: int, enabled: bool) -> nn.Module:
    return nn.BatchNorm2d(channels) if enabled else nn.Identity()


class SpectralTransform(nn.Module):
    """Pointwise convolution applied to the real 2-D spectrum of a feature map.

    rfft2 -> stack (real, imag) as 2C channels -> Conv1x1 -> BN -> ReLU ->
    re-pair as complex -> irfft2.  Both transforms use orthonormal scaling,
    so with an identity pointwise map the block reproduces its input.
    """

    def __init__(self, channels: int, use_batch_norm: bool = True):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(2 * channels, 2 * channels, kernel_size=1)
        self.bn = _norm(2 * channels, use_batch_norm)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        spectrum = torch.fft.rfft2(x, norm="ortho")
        stacked = torch.cat([spectrum.real, spectrum.imag], dim=1)
        stacked = self.act(self.bn(self.conv(stacked)))
        real, imag = stacked.chunk(2, dim=1)
        out = torch.fft.irfft2(torch.complex(real, imag), s=(height, width), norm="ortho")
        return check_finite(out, "spectral_transform")


class FFC(nn.Module):
    """Dual-branch convolution with local->local, local->global,
    global->local and global->global paths.

    The global->global path is a :class:`SpectralTransform`; with
    ``spectral=False`` it is a 1x1 convolution instead, which is the
    convolution-only baseline.
    """

    def __init__(self, cfg: FfcConfig, spectral: bool = True):
        super().__init__()
        self.cfg = cfg
        c_l, c_g, k = cfg.local_channels, cfg.global_channels, cfg.local_kernel

        def conv(c_in, c_out):
            if c_in == 0 or c_out == 0:
                return None
            return nn.Conv2d(c_in, c_out, kernel_size=k, padding=k // 2)

        self.l2l = conv(c_l, c_l)
        self.l2g = conv(c_l, c_g)
        self.g2l = conv(c_g, c_l)
        if c_g == 0:
            self.g2g = None
        elif spectral:
            self.g2g = SpectralTransform(c_g, cfg.use_batch_norm)
        else:
            self.g2g = nn.Conv2d(c_g, c_g, kernel_size=1)
        self.bn_l = _norm(c_l, cfg.use_batch_norm) if c_l else None
        self.bn_g = _norm(c_g, cfg.use_batch_norm) if c_g else None
        self.act = nn.ReLU()

    def forward(self, x: DualTensor) -> DualTensor:
        c_l, c_g = self.cfg.local_channels, self.cfg.global_channels
        if x.local.shape[1] != c_l or x.glob.shape[1] != c_g:
            raise ConfigurationError(
                f"expected {c_l} local + {c_g} global channels, "
                f"got {x.local.shape[1]} + {x.glob.shape[1]}"
            )
        if x.local.shape[-2:] != x.glob.shape[-2:] and c_l and c_g:
            raise ConfigurationError("local and global maps differ in spatial size")

        out_l = x.local[:, :0]
        out_g = x.glob[:, :0]
        if c_l:
            out_l = self.l2l(x.local)
            if c_g:
                out_l = out_l + self.g2l(x.glob)
            out_l = self.act(self.bn_l(out_l))
        if c_g:
            out_g = self.g2g(x.glob)
            if c_l:
                out_g = out_g + self.l2g(x.local)
            out_g = self.act(self.bn_g(out_g))
        return DualTensor(out_l, out_g)


class FFCResidualBlock(nn.Module):
    """Two FFC layers with a branch-wise additive skip after the second."""

    def __init__(self, cfg: FfcConfig, spectral: bool = True):
        super().__init__()
        self.ffc1 = FFC(cfg, spectral)
        self.ffc2 = FFC(cfg, spectral)

    def forward(self, x: DualTensor) -> DualTensor:
        y = self.ffc2(self.ffc1(x))
        return DualTensor(y.local + x.local, y.glob + x.glob)
