"""Dense motion estimation and backward warping.

Flow fields are N x 2 x H x W tensors in pixel units: channel 0 is the
horizontal sampling offset (positive samples from the right), channel 1
the vertical offset (positive samples from below).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import conv, prelu, upsample2x


def warp(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp: out(p) = bilinear sample of image at p + flow(p).

    Sampling positions are clamped to the image border. Differentiable in
    both arguments; zero flow reproduces the input bit for bit.
    """
    if image.dim() != 4 or flow.dim() != 4:
        raise ValueError("warp expects NCHW image and N2HW flow")
    n, c, h, w = image.shape
    if flow.shape[0] != n or flow.shape[1] != 2 or flow.shape[2:] != image.shape[2:]:
        raise ValueError(
            f"flow shape {tuple(flow.shape)} does not match image {tuple(image.shape)}"
        )
    dtype = image.dtype
    flow = flow.to(dtype)
    dev = image.device

    base_x = torch.arange(w, dtype=dtype, device=dev).view(1, 1, w)
    base_y = torch.arange(h, dtype=dtype, device=dev).view(1, h, 1)
    px = (base_x + flow[:, 0]).clamp(0, w - 1)
    py = (base_y + flow[:, 1]).clamp(0, h - 1)

    x0f = torch.floor(px)
    y0f = torch.floor(py)
    wx = (px - x0f).unsqueeze(1)
    wy = (py - y0f).unsqueeze(1)
    x0 = x0f.long()
    y0 = y0f.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = image.reshape(n, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(n, 1, h * w).expand(n, c, h * w)
        return torch.gather(flat, 2, idx).reshape(n, c, h, w)

    v00 = gather(y0, x0)
    v01 = gather(y0, x1)
    v10 = gather(y1, x0)
    v11 = gather(y1, x1)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


class _FeatureLevel(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = conv(in_ch, out_ch, 5, stride=stride)
        self.conv2 = conv(out_ch, out_ch, 5)
        self.act1 = nn.PReLU(out_ch, init=0.25)
        self.act2 = nn.PReLU(out_ch, init=0.25)

    def forward(self, x):
        return self.act2(self.conv2(self.act1(self.conv1(x))))


class _FlowHead(nn.Module):
    """Predicts a residual flow from current features, warped reference
    features and the upsampled coarser flow."""

    def __init__(self, feat_ch: int):
        super().__init__()
        self.conv1 = conv(2 * feat_ch + 2, 32, 5)
        self.conv2 = conv(32, 16, 5)
        self.conv3 = conv(16, 2, 5)
        self.act1 = nn.PReLU(32, init=0.25)
        self.act2 = nn.PReLU(16, init=0.25)

    def forward(self, x):
        h = self.act1(self.conv1(x))
        h = self.act2(self.conv2(h))
        return self.conv3(h)


class PyramidFlowNet(nn.Module):
    """Minimal 3-level coarse-to-fine flow estimator.

    At each level the reference features are warped by the upsampled coarser
    flow and a small head predicts a residual correction; the finest level
    runs at full resolution so the output matches the input size.
    """

    def __init__(self, widths: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        w0, w1, w2 = widths
        self.level0 = _FeatureLevel(3, w0, stride=1)
        self.level1 = _FeatureLevel(w0, w1, stride=2)
        self.level2 = _FeatureLevel(w1, w2, stride=2)
        self.head2 = _FlowHead(w2)
        self.head1 = _FlowHead(w1)
        self.head0 = _FlowHead(w0)

    def extract(self, frame: torch.Tensor) -> list[torch.Tensor]:
        f0 = self.level0(frame)
        f1 = self.level1(f0)
        f2 = self.level2(f1)
        return [f0, f1, f2]

    def forward(self, current: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        if current.shape != reference.shape:
            raise ValueError(
                f"frame shapes differ: {tuple(current.shape)} vs {tuple(reference.shape)}"
            )
        feats_c = self.extract(current)
        feats_r = self.extract(reference)

        flow = torch.zeros(
            current.shape[0], 2, *feats_c[2].shape[2:],
            dtype=current.dtype, device=current.device,
        )
        for level, head in ((2, self.head2), (1, self.head1), (0, self.head0)):
            if level < 2:
                flow = upsample2x(flow, "bilinear") * 2.0
            warped = warp(feats_r[level], flow)
            delta = head(torch.cat([feats_c[level], warped, flow], dim=1))
            flow = flow + delta
        return flow
