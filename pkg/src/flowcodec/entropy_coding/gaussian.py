"""Gaussian conditional bit estimation for quantized latents.

Each latent element is modeled as N(mean, scale^2) integrated over its unit
quantization bin. Scales are floored at SCALE_FLOOR and bin masses at
MIN_BIN_MASS so estimates stay finite.
"""

from __future__ import annotations

import math

import torch

SCALE_FLOOR = 1e-3
MIN_BIN_MASS = 2.0 ** -16

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_LOG2 = math.log(2.0)


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    # erfc keeps precision in the tails where 1 - erf underflows.
    return 0.5 * torch.erfc(-x * _INV_SQRT2)


def gaussian_bin_mass(q: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """P(q - 0.5 <= X < q + 0.5) for X ~ N(mean, scale^2), elementwise."""
    if q.shape != mean.shape or q.shape != scale.shape:
        raise ValueError(
            f"shape mismatch: q {tuple(q.shape)}, mean {tuple(mean.shape)}, "
            f"scale {tuple(scale.shape)}"
        )
    scale = scale.clamp(min=SCALE_FLOOR)
    # The bin mass is symmetric in (q - mean), so evaluate both CDF points on
    # the left tail where the subtraction is well conditioned.
    v = torch.abs(q - mean)
    upper = _std_normal_cdf((0.5 - v) / scale)
    lower = _std_normal_cdf((-0.5 - v) / scale)
    return upper - lower


def estimate_bits(q: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Total bits: -sum log2 of per-element bin masses. Strictly positive."""
    mass = gaussian_bin_mass(q, mean, scale).clamp(min=MIN_BIN_MASS)
    return -torch.sum(torch.log(mass)) / _LOG2
