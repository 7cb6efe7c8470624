"""Quantized CDF tables shared bit-exactly by range encoder and decoder.

Symbol support is the integer interval [QMIN, QMAX]; anything outside is
routed through a final escape bucket and coded verbatim. Tables are rows of
cumulative counts of total 2^PRECISION with every bin strictly positive.
"""

from __future__ import annotations

import numpy as np
import torch

from .gaussian import SCALE_FLOOR

PRECISION = 16
TOTAL = 1 << PRECISION

QMIN = -64
QMAX = 63
SUPPORT_SIZE = QMAX - QMIN + 1
ESCAPE_INDEX = SUPPORT_SIZE  # one extra bucket past the support
N_BINS = SUPPORT_SIZE + 1


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Turn float PMFs (rows) into cumulative count rows summing to TOTAL.

    Every bin gets at least one count so every symbol stays codable.
    Deterministic: the rounding deficit lands on each row's largest bin.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    p = np.maximum(p, 0.0)
    sums = p.sum(axis=1, keepdims=True)
    sums[sums <= 0.0] = 1.0
    p = p / sums

    counts = np.maximum(np.floor(p * TOTAL).astype(np.int64), 1)
    deficit = TOTAL - counts.sum(axis=1)
    top = np.argmax(counts, axis=1)
    rows = np.arange(counts.shape[0])
    counts[rows, top] += deficit
    if (counts < 1).any():
        raise ValueError("pmf too degenerate for 16-bit quantization")

    cdf = np.zeros((counts.shape[0], counts.shape[1] + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])
    return cdf


def gaussian_tables(mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Per-element CDF rows for N(mean, scale^2) over the integer support."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    scale = np.maximum(np.asarray(scale, dtype=np.float64).reshape(-1), SCALE_FLOOR)
    edges = np.arange(QMIN, QMAX + 2, dtype=np.float64) - 0.5  # SUPPORT_SIZE + 1 edges
    z = (edges[None, :] - mean[:, None]) / scale[:, None]
    cdf = torch.special.ndtr(torch.from_numpy(z)).numpy()
    pmf = np.empty((mean.size, N_BINS), dtype=np.float64)
    pmf[:, :SUPPORT_SIZE] = np.diff(cdf, axis=1)
    pmf[:, ESCAPE_INDEX] = cdf[:, 0] + (1.0 - cdf[:, -1])
    return quantize_pmf(pmf)


def factorized_tables(prior) -> np.ndarray:
    """Per-channel CDF rows for a FactorizedPrior over the integer support."""
    masses, tail = prior.integer_masses(QMIN, QMAX)
    pmf = np.empty((prior.channels, N_BINS), dtype=np.float64)
    pmf[:, :SUPPORT_SIZE] = masses.numpy()
    pmf[:, ESCAPE_INDEX] = tail.numpy()
    return quantize_pmf(pmf)
