"""Quantization: additive-noise training surrogate and inference rounding."""

from __future__ import annotations

import torch


def quantize_noise(z: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Training surrogate: z + U with U iid Uniform[-0.5, 0.5).

    The gradient w.r.t. z is the identity (the noise does not depend on z).
    """
    noise = torch.rand(z.shape, dtype=z.dtype, device=z.device, generator=generator) - 0.5
    return z + noise


def quantize_round(z: torch.Tensor) -> torch.Tensor:
    """Round half away from zero, elementwise. Returns integral floats."""
    return torch.sign(z) * torch.floor(torch.abs(z) + 0.5)
