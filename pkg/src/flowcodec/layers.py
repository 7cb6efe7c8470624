"""Shared differentiable building blocks.

Divisive normalization (GDN/IGDN), PReLU residual blocks, GDN residual
stacks and 2x upsampling. All blocks are plain nn.Modules over NCHW
tensors; stride-1 convolutions always preserve spatial size.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

BETA_FLOOR = 1e-6


def conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1, dilation: int = 1) -> nn.Conv2d:
    """Conv2d padded so spatial size changes only via stride."""
    pad = dilation * (kernel - 1) // 2
    return nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=pad, dilation=dilation)


def deconv(in_ch: int, out_ch: int, kernel: int = 5) -> nn.ConvTranspose2d:
    """Stride-2 transposed conv that exactly doubles spatial size."""
    return nn.ConvTranspose2d(
        in_ch, out_ch, kernel, stride=2, padding=(kernel - 1) // 2, output_padding=1
    )


def prelu(x: torch.Tensor, slope: torch.Tensor) -> torch.Tensor:
    """max(x, 0) + slope * min(x, 0), slope broadcast per channel."""
    s = slope.view(1, -1, *([1] * (x.dim() - 2)))
    return torch.clamp(x, min=0) + s * torch.clamp(x, max=0)


def divisive_norm(
    x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor, inverse: bool = False
) -> torch.Tensor:
    """y_c = x_c / sqrt(beta_c + sum_j gamma_cj * x_j^2); inverse multiplies.

    beta is (C,), gamma is (C, C); both must already be valid (beta > 0,
    gamma >= 0).
    """
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(
            f"params for {tuple(beta.shape)}/{tuple(gamma.shape)} do not match {c} channels"
        )
    norm = F.conv2d(x * x, gamma.view(c, c, 1, 1), beta)
    norm = torch.sqrt(norm)
    return x * norm if inverse else x / norm


class GDN(nn.Module):
    """Generalized divisive normalization with non-negative reparameterization.

    beta = beta_raw^2 + BETA_FLOOR and gamma = gamma_raw^2, so the
    constraints beta >= 1e-6 and gamma >= 0 survive any optimizer step.
    """

    def __init__(self, channels: int, inverse: bool = False,
                 beta_init: float = 1.0, gamma_init: float = 0.1):
        super().__init__()
        self.channels = channels
        self.inverse = inverse
        self.beta_raw = nn.Parameter(
            torch.full((channels,), math.sqrt(beta_init - BETA_FLOOR))
        )
        gamma0 = gamma_init * torch.eye(channels)
        self.gamma_raw = nn.Parameter(torch.sqrt(gamma0))

    @property
    def beta(self) -> torch.Tensor:
        return self.beta_raw * self.beta_raw + BETA_FLOOR

    @property
    def gamma(self) -> torch.Tensor:
        return self.gamma_raw * self.gamma_raw

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"expected NCHW input with {self.channels} channels, got {tuple(x.shape)}"
            )
        return divisive_norm(x, self.beta, self.gamma, inverse=self.inverse)


def gdn_forward(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    return divisive_norm(x, beta, gamma, inverse=False)


def igdn_forward(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    return divisive_norm(x, beta, gamma, inverse=True)


class ResidualBlock(nn.Module):
    """Identity-skip block of three convolutions and three PReLUs.

    PReLU follows the first two convolutions; the third activation is
    applied after the summation with the input. Channel count is preserved
    by the identity shortcut.
    """

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.conv1 = conv(channels, channels, kernel)
        self.conv2 = conv(channels, channels, kernel)
        self.conv3 = conv(channels, channels, kernel)
        self.act1 = nn.PReLU(channels, init=0.25)
        self.act2 = nn.PReLU(channels, init=0.25)
        self.act_out = nn.PReLU(channels, init=0.25)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.conv1.in_channels:
            raise ValueError(
                f"expected {self.conv1.in_channels} channels, got {x.shape[1]}"
            )
        h = self.act1(self.conv1(x))
        h = self.act2(self.conv2(h))
        h = self.conv3(h)
        return self.act_out(x + h)


class ResidualGDNBlock(nn.Module):
    """Identity shortcut around a conv-GDN-conv-GDN stack.

    With inverse=True the normalizations are IGDN.
    """

    def __init__(self, channels: int, inverse: bool = False, kernel: int = 3):
        super().__init__()
        self.conv1 = conv(channels, channels, kernel)
        self.conv2 = conv(channels, channels, kernel)
        self.norm1 = GDN(channels, inverse=inverse)
        self.norm2 = GDN(channels, inverse=inverse)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.conv1.in_channels:
            raise ValueError(
                f"expected {self.conv1.in_channels} channels, got {x.shape[1]}"
            )
        h = self.norm1(self.conv1(x))
        h = self.norm2(self.conv2(h))
        return x + h


def upsample2x(x: torch.Tensor, mode: str = "nearest") -> torch.Tensor:
    """Double H and W. mode is 'nearest' or 'bilinear' (corners not aligned)."""
    mode = mode.lower()
    if mode == "nearest":
        return F.interpolate(x, scale_factor=2, mode="nearest")
    if mode == "bilinear":
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    raise ValueError(f"unknown upsample mode {mode!r}")
