"""Residual computation, compression and filtering, plus final reconstruction."""

from __future__ import annotations

import torch
import torch.nn as nn

from .flow import warp
from .layers import GDN, ResidualBlock, conv, deconv, upsample2x


def compute_residual(frame: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Elementwise difference between the source frame and the prediction."""
    if frame.shape != predicted.shape:
        raise ValueError(
            f"frame {tuple(frame.shape)} and prediction {tuple(predicted.shape)} disagree"
        )
    return frame - predicted


def reconstruct(predicted: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """Final frame: prediction plus filtered residual, clamped to [0, 1]."""
    if predicted.shape != residual.shape:
        raise ValueError(
            f"prediction {tuple(predicted.shape)} and residual {tuple(residual.shape)} disagree"
        )
    return torch.clamp(predicted + residual, 0.0, 1.0)


class ResidualEncoder(nn.Module):
    """Four 5x5 stride-2 convolutions with GDN after the first three."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.conv1 = conv(3, channels, 5, stride=2)
        self.conv2 = conv(channels, channels, 5, stride=2)
        self.conv3 = conv(channels, channels, 5, stride=2)
        self.conv4 = conv(channels, channels, 5, stride=2)
        self.norm1 = GDN(channels)
        self.norm2 = GDN(channels)
        self.norm3 = GDN(channels)

    def forward(self, residual: torch.Tensor) -> torch.Tensor:
        if residual.dim() != 4 or residual.shape[1] != 3:
            raise ValueError(f"expected N3HW residual, got {tuple(residual.shape)}")
        if residual.shape[2] % 16 or residual.shape[3] % 16:
            raise ValueError(
                f"residual dims must be multiples of 16, got "
                f"{residual.shape[2]}x{residual.shape[3]}"
            )
        x = self.norm1(self.conv1(residual))
        x = self.norm2(self.conv2(x))
        x = self.norm3(self.conv3(x))
        return self.conv4(x)


class ResidualDecoder(nn.Module):
    """Mirror of ResidualEncoder with IGDN, output 3 channels, no activation."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.deconv1 = deconv(channels, channels)
        self.deconv2 = deconv(channels, channels)
        self.deconv3 = deconv(channels, channels)
        self.deconv4 = deconv(channels, 3)
        self.norm1 = GDN(channels, inverse=True)
        self.norm2 = GDN(channels, inverse=True)
        self.norm3 = GDN(channels, inverse=True)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        x = self.norm1(self.deconv1(latent))
        x = self.norm2(self.deconv2(x))
        x = self.norm3(self.deconv3(x))
        return self.deconv4(x)


class ResidualFilter(nn.Module):
    """Additive hourglass filter removing residual quantization artifacts.

    Input is the decoded residual stacked with the warped reference and the
    predicted frame. Two stride-2 convolutions push the six residual blocks
    to quarter resolution; two upsample+conv stages restore size. The final
    convolution carries no activation. Zero weights give the identity.
    """

    def __init__(self, trunk_channels: int = 64, n_blocks: int = 6):
        super().__init__()
        self.down1 = conv(9, trunk_channels, 3, stride=2)
        self.down2 = conv(trunk_channels, trunk_channels, 3, stride=2)
        self.act1 = nn.PReLU(trunk_channels, init=0.25)
        self.act2 = nn.PReLU(trunk_channels, init=0.25)
        self.blocks = nn.Sequential(
            *[ResidualBlock(trunk_channels) for _ in range(n_blocks)]
        )
        self.up_conv = conv(trunk_channels, trunk_channels, 3)
        self.act_up = nn.PReLU(trunk_channels, init=0.25)
        self.out_conv = conv(trunk_channels, 3, 3)

    def forward(
        self,
        residual: torch.Tensor,
        predicted: torch.Tensor,
        ref: torch.Tensor,
        flow: torch.Tensor,
    ) -> torch.Tensor:
        shapes = {residual.shape[2:], predicted.shape[2:], ref.shape[2:], flow.shape[2:]}
        if len(shapes) != 1:
            raise ValueError(f"input spatial sizes disagree: {sorted(map(tuple, shapes))}")
        warped_ref = warp(ref, flow)
        h = self.act1(self.down1(torch.cat([residual, warped_ref, predicted], dim=1)))
        h = self.act2(self.down2(h))
        h = self.blocks(h)
        h = self.act_up(self.up_conv(upsample2x(h, "nearest")))
        correction = self.out_conv(upsample2x(h, "nearest"))
        return residual + correction
