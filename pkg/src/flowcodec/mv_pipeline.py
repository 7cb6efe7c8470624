"""Motion-vector compression (GDN autoencoder with residual GDN stacks) and
post-decode flow filtering."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import GDN, ResidualGDNBlock, conv, deconv

FLOW_SCALE = 20.0  # pixel-unit flows are divided by this before encoding


def _check_mv_input(flow: torch.Tensor):
    if flow.dim() != 4 or flow.shape[1] != 2:
        raise ValueError(f"expected N2HW flow, got {tuple(flow.shape)}")
    if flow.shape[2] % 16 or flow.shape[3] % 16:
        raise ValueError(
            f"flow dims must be multiples of 16, got {flow.shape[2]}x{flow.shape[3]}"
        )


class MvEncoder(nn.Module):
    """Four 5x5 stride-2 convolutions; GDN after the first three, with
    residual GDN stacks after layers 2 and 3. Downsamples 16x overall."""

    def __init__(self, channels: int = 64, flow_scale: float = FLOW_SCALE):
        super().__init__()
        self.flow_scale = flow_scale
        self.conv1 = conv(2, channels, 5, stride=2)
        self.conv2 = conv(channels, channels, 5, stride=2)
        self.conv3 = conv(channels, channels, 5, stride=2)
        self.conv4 = conv(channels, channels, 5, stride=2)
        self.norm1 = GDN(channels)
        self.norm2 = GDN(channels)
        self.norm3 = GDN(channels)
        self.res2 = ResidualGDNBlock(channels)
        self.res3 = ResidualGDNBlock(channels)

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        _check_mv_input(flow)
        x = flow / self.flow_scale
        x = self.norm1(self.conv1(x))
        x = self.res2(self.norm2(self.conv2(x)))
        x = self.res3(self.norm3(self.conv3(x)))
        return self.conv4(x)


class MvDecoder(nn.Module):
    """Mirror of MvEncoder: four 5x5 stride-2 transposed convolutions, IGDN
    after the first three, residual IGDN stacks after layers 1 and 2, and a
    2-channel linear output."""

    def __init__(self, channels: int = 64, flow_scale: float = FLOW_SCALE):
        super().__init__()
        self.flow_scale = flow_scale
        self.deconv1 = deconv(channels, channels)
        self.deconv2 = deconv(channels, channels)
        self.deconv3 = deconv(channels, channels)
        self.deconv4 = deconv(channels, 2)
        self.norm1 = GDN(channels, inverse=True)
        self.norm2 = GDN(channels, inverse=True)
        self.norm3 = GDN(channels, inverse=True)
        self.res1 = ResidualGDNBlock(channels, inverse=True)
        self.res2 = ResidualGDNBlock(channels, inverse=True)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        x = self.res1(self.norm1(self.deconv1(latent)))
        x = self.res2(self.norm2(self.deconv2(x)))
        x = self.norm3(self.deconv3(x))
        return self.deconv4(x) * self.flow_scale


class MvFilter(nn.Module):
    """Additive correction of the decoded flow, guided by the reference frame.

    Six 3x3 stride-1 convolutions over the concatenated (flow, reference)
    stack, channels (32,32,32,32,32,2) with dilations (1,2,4,4,2,1) and a
    PReLU after each layer except the last. Zero weights give the identity.
    """

    _CHANNELS = (32, 32, 32, 32, 32, 2)
    _DILATIONS = (1, 2, 4, 4, 2, 1)

    def __init__(self):
        super().__init__()
        layers = []
        in_ch = 5
        for i, (out_ch, dil) in enumerate(zip(self._CHANNELS, self._DILATIONS)):
            layers.append(conv(in_ch, out_ch, 3, dilation=dil))
            if i < len(self._CHANNELS) - 1:
                layers.append(nn.PReLU(out_ch, init=0.25))
            in_ch = out_ch
        self.net = nn.Sequential(*layers)

    def forward(self, flow: torch.Tensor, ref_frame: torch.Tensor) -> torch.Tensor:
        if flow.shape[2:] != ref_frame.shape[2:] or flow.shape[0] != ref_frame.shape[0]:
            raise ValueError(
                f"flow {tuple(flow.shape)} and reference {tuple(ref_frame.shape)} disagree"
            )
        correction = self.net(torch.cat([flow, ref_frame], dim=1))
        return flow + correction
