"""Learned per-channel factorized prior for hyper-latents.

Each channel carries an independent univariate density whose CDF is a small
monotone network (softplus-constrained matrices, tanh-gated skips). Bin
masses are CDF differences over unit bins, exactly as used for range-coder
table construction.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gaussian import MIN_BIN_MASS

_LOG2 = math.log(2.0)


class FactorizedPrior(nn.Module):
    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3),
                 init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        self.filters = tuple(filters)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(self.filters) + 1))

        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self._matrices.append(
                nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init))
            )
            bias = torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)
            self._biases.append(nn.Parameter(bias))
            if i < len(dims) - 2:
                self._factors.append(
                    nn.Parameter(torch.zeros(channels, dims[i + 1], 1))
                )

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        """Logits of the cumulative density; x is (channels, 1, n)."""
        h = x
        for i, matrix in enumerate(self._matrices):
            h = torch.bmm(F.softplus(matrix), h) + self._biases[i]
            if i < len(self._factors):
                h = h + torch.tanh(self._factors[i]) * torch.tanh(h)
        return h

    def bin_mass(self, x: torch.Tensor) -> torch.Tensor:
        """Mass of the unit bin centered on each element of x (NCHW)."""
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"expected NCHW input with {self.channels} channels, got {tuple(x.shape)}"
            )
        n, c, h, w = x.shape
        flat = x.permute(1, 0, 2, 3).reshape(c, 1, n * h * w)
        lower = self._logits_cdf(flat - 0.5)
        upper = self._logits_cdf(flat + 0.5)
        # Evaluate both sigmoids on whichever tail is better conditioned.
        sign = -torch.sign(lower + upper).detach()
        mass = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return mass.reshape(c, n, h, w).permute(1, 0, 2, 3)

    def bits(self, x: torch.Tensor) -> torch.Tensor:
        mass = self.bin_mass(x).clamp(min=MIN_BIN_MASS)
        return -torch.sum(torch.log(mass)) / _LOG2

    @torch.no_grad()
    def integer_masses(self, qmin: int, qmax: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel bin masses on the integer grid [qmin, qmax].

        Returns (masses (C, qmax-qmin+1), tail_mass (C,)) in float64; the
        tail is the probability outside the grid, used for the escape bucket.
        """
        grid = torch.arange(qmin, qmax + 1, dtype=torch.float64)
        n = grid.numel()
        x = grid.view(1, 1, n).expand(self.channels, 1, n)
        params_dtype = self._biases[0].dtype
        lower = self._logits_cdf((x - 0.5).to(params_dtype)).double()
        upper = self._logits_cdf((x + 0.5).to(params_dtype)).double()
        sign = -torch.sign(lower + upper)
        masses = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        masses = masses.reshape(self.channels, n)
        left = torch.sigmoid(lower[:, 0, 0])
        right = torch.sigmoid(-upper[:, 0, -1])
        return masses, left + right
