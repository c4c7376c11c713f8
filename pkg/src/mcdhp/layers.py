"""Shared building blocks: squeeze-excitation, fused inverted-bottleneck conv,
channel/spatial attention gates, and the causally masked convolution."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


class SqueezeExcite(nn.Module):
    """Per-channel gating from a globally average-pooled descriptor."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.reduce = nn.Conv2d(channels, hidden, 1)
        self.expand = nn.Conv2d(hidden, channels, 1)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.expand(F.relu(self.reduce(s))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class FusedMBConv(nn.Module):
    """Depthwise 3x3 conv -> GELU -> squeeze-excitation -> 1x1 conv, residual.

    With all learned weights zeroed the block is the identity map.
    """

    def __init__(self, channels: int, se_reduction: int = 4):
        super().__init__()
        self.channels = channels
        self.depthwise = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.act = nn.GELU()
        self.se = SqueezeExcite(channels, se_reduction)
        self.pointwise = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"expected {self.channels} channels, got {x.shape[1]}"
            )
        h = self.se(self.act(self.depthwise(x)))
        return self.pointwise(h) + x


class ChannelAttentionGate(nn.Module):
    """CBAM-style channel gate: avg- and max-pooled descriptors through a
    shared bottleneck, summed, squashed to (0, 1), applied per channel."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1),
        )

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(2, 3), keepdim=True)
        mx = x.amax(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class SpatialAttentionGate(nn.Module):
    """CBAM-style spatial gate: channel-pooled (mean, max) maps through a 7x7
    conv and sigmoid, applied per position."""

    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


def raster_causal_kernel_mask(kernel: int, dtype=torch.float32) -> torch.Tensor:
    """[k, k] mask passing strictly-earlier raster positions; center and all
    raster-later taps are zero."""
    if kernel % 2 == 0:
        raise ConfigurationError("causal kernel must be odd")
    mask = torch.zeros(kernel, kernel, dtype=dtype)
    center = kernel // 2
    mask[:center, :] = 1
    mask[center, :center] = 1
    return mask


class MaskedConv2d(nn.Conv2d):
    """Conv whose kernel is structurally zero at the center tap and at every
    raster-later tap, so outputs depend only on already-decoded positions."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 5):
        super().__init__(in_channels, out_channels, kernel, padding=kernel // 2)
        self.register_buffer("mask", raster_causal_kernel_mask(kernel))
        with torch.no_grad():
            self.weight.mul_(self.mask)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self.weight * self.mask, self.bias)
