"""Hyper-latent transforms: a second, smaller latent whose decoded output
parameterizes the Gaussian model of the main latent."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gaussian import SCALE_FLOOR


def hyper_latent_dims(latent_h: int, latent_w: int) -> tuple[int, int]:
    """Spatial size after the two stride-2 hyper-encoder convolutions."""
    h = (latent_h + 1) // 2
    w = (latent_w + 1) // 2
    return (h + 1) // 2, (w + 1) // 2


class HyperEncoder(nn.Module):
    def __init__(self, latent_channels: int, hyper_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(latent_channels, hyper_channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(hyper_channels, hyper_channels, 3, stride=2, padding=1)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(torch.abs(latent)))
        return self.conv2(h)


class HyperDecoder(nn.Module):
    """Maps the quantized hyper-latent to per-element (mean, scale).

    The transposed convolutions up-sample by 4x; the output is cropped to
    the main latent's spatial size (they differ when that size is not a
    multiple of 4). Scales are softplus-mapped and floored at SCALE_FLOOR.
    """

    def __init__(self, latent_channels: int, hyper_channels: int):
        super().__init__()
        self.latent_channels = latent_channels
        self.deconv1 = nn.ConvTranspose2d(
            hyper_channels, hyper_channels, 3, stride=2, padding=1, output_padding=1
        )
        self.deconv2 = nn.ConvTranspose2d(
            hyper_channels, 2 * latent_channels, 3, stride=2, padding=1, output_padding=1
        )

    def forward(self, q_hyper: torch.Tensor, latent_hw: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.deconv1(q_hyper))
        out = self.deconv2(h)
        lh, lw = latent_hw
        if out.shape[2] < lh or out.shape[3] < lw:
            raise ValueError(
                f"hyper decoder output {tuple(out.shape[2:])} smaller than latent {latent_hw}"
            )
        out = out[:, :, :lh, :lw]
        mean, scale_raw = torch.chunk(out, 2, dim=1)
        scale = SCALE_FLOOR + F.softplus(scale_raw)
        return mean, scale
