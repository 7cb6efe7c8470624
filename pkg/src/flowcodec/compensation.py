"""Motion compensation: warp the reference by the filtered flow, then refine
with PReLU residual blocks. The refinement is additive over the warped
frame, so zero refinement weights reduce the operation to a plain warp."""

from __future__ import annotations

import torch
import torch.nn as nn

from .flow import warp
from .layers import ResidualBlock, conv


class MotionCompensator(nn.Module):
    def __init__(self, trunk_channels: int = 64, n_blocks: int = 4):
        super().__init__()
        self.conv_in = conv(8, trunk_channels, 3)
        self.blocks = nn.Sequential(*[ResidualBlock(trunk_channels) for _ in range(n_blocks)])
        self.conv_out = conv(trunk_channels, 3, 3)

    def forward(self, ref: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
        if ref.shape[2:] != flow.shape[2:] or ref.shape[0] != flow.shape[0]:
            raise ValueError(
                f"reference {tuple(ref.shape)} and flow {tuple(flow.shape)} disagree"
            )
        warped = warp(ref, flow)
        h = self.conv_in(torch.cat([warped, ref, flow], dim=1))
        h = self.blocks(h)
        return warped + self.conv_out(h)
