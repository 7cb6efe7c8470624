"""Quality and rate metrics: PSNR, MS-SSIM, sequence aggregation, and
Bjontegaard delta bitrate over rate-distortion curves.

PSNR and MS-SSIM operate on 8-bit-quantized RGB values and average over
channels; sequence scores are arithmetic means of per-frame values. PSNR of
identical frames is reported as the 99.0 dB sentinel.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .video_io import Frame, RawVideo, to_uint8

PSNR_SENTINEL_DB = 99.0

# Standard 5-scale exponents; window 11x11, sigma 1.5.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WIN_SIZE = 11
_WIN_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


class QualityKind(enum.Enum):
    PSNR_DB = "psnr_db"
    MS_SSIM = "ms_ssim"


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    quality: float
    quality_kind: QualityKind

    def __post_init__(self):
        if not (math.isfinite(self.bpp) and math.isfinite(self.quality)):
            raise ValueError("RD point values must be finite")
        if self.bpp < 0:
            raise ValueError(f"bpp must be >= 0, got {self.bpp}")


@dataclass
class RdCurve:
    label: str
    points: list[RdPoint]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError(f"curve {self.label!r} needs >= 2 points")
        bpps = [p.bpp for p in self.points]
        if any(b1 <= b0 for b0, b1 in zip(bpps, bpps[1:])):
            raise ValueError(f"curve {self.label!r} bpp values must strictly increase")
        quals = [p.quality for p in self.points]
        if any(q1 < q0 for q0, q1 in zip(quals, quals[1:])):
            warnings.warn(
                f"curve {self.label!r}: quality is not monotone in bpp", stacklevel=2
            )

    @property
    def bpp(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def quality(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])


def _as_pixels(a) -> np.ndarray:
    return a.pixels if isinstance(a, Frame) else np.asarray(a)


def psnr(a, b) -> float:
    """PSNR in dB on 8-bit-quantized [0,1] values; 99.0 if identical."""
    pa, pb = _as_pixels(a), _as_pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    qa = to_uint8(pa).astype(np.float64) / 255.0
    qb = to_uint8(pb).astype(np.float64) / 255.0
    mse = float(np.mean((qa - qb) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_SENTINEL_DB)


def _gaussian_window(dtype, device) -> torch.Tensor:
    half = (_WIN_SIZE - 1) / 2.0
    coords = torch.arange(_WIN_SIZE, dtype=dtype, device=device) - half
    g = torch.exp(-(coords ** 2) / (2.0 * _WIN_SIGMA ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of usable scales: each halving must keep the 11-pixel window."""
    side = min(height, width)
    scales = 0
    while scales < len(MS_SSIM_WEIGHTS) and side >= _WIN_SIZE:
        scales += 1
        side //= 2
    if scales == 0:
        raise ValueError(f"image {height}x{width} is smaller than the SSIM window")
    return scales


def _downsample2(x: torch.Tensor) -> torch.Tensor:
    h, w = x.shape[2] // 2 * 2, x.shape[3] // 2 * 2
    x = x[:, :, :h, :w]
    return F.avg_pool2d(x, kernel_size=2)


def ms_ssim_tensor(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Differentiable MS-SSIM on NCHW tensors in [0, 1], averaged over channels.

    Uses as many of the 5 standard scales as the image size allows, with the
    exponent vector renormalized to the usable prefix.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    n_scales = ms_ssim_scales(x.shape[2], x.shape[3])
    weights = torch.tensor(
        MS_SSIM_WEIGHTS[:n_scales], dtype=x.dtype, device=x.device
    )
    weights = weights / weights.sum()

    c = x.shape[1]
    win = _gaussian_window(x.dtype, x.device).expand(c, 1, _WIN_SIZE, _WIN_SIZE)

    def ssim_pass(a, b):
        mu_a = F.conv2d(a, win, groups=c)
        mu_b = F.conv2d(b, win, groups=c)
        mu_aa = mu_a * mu_a
        mu_bb = mu_b * mu_b
        mu_ab = mu_a * mu_b
        var_a = F.conv2d(a * a, win, groups=c) - mu_aa
        var_b = F.conv2d(b * b, win, groups=c) - mu_bb
        cov = F.conv2d(a * b, win, groups=c) - mu_ab
        cs_map = (2 * cov + _C2) / (var_a + var_b + _C2)
        lum_map = (2 * mu_ab + _C1) / (mu_aa + mu_bb + _C1)
        return lum_map.mean(), torch.relu(cs_map).mean()

    result = torch.ones((), dtype=x.dtype, device=x.device)
    for s in range(n_scales):
        lum, cs = ssim_pass(x, y)
        if s < n_scales - 1:
            result = result * cs ** weights[s]
            x, y = _downsample2(x), _downsample2(y)
        else:
            result = result * (lum * cs) ** weights[s]
    return result


def ms_ssim(a, b) -> float:
    """MS-SSIM on 8-bit-quantized frames (numpy HxWx3 or Frame inputs)."""
    pa, pb = _as_pixels(a), _as_pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    ta = torch.from_numpy(to_uint8(pa).astype(np.float64) / 255.0).permute(2, 0, 1)[None]
    tb = torch.from_numpy(to_uint8(pb).astype(np.float64) / 255.0).permute(2, 0, 1)[None]
    return float(ms_ssim_tensor(ta, tb))


def sequence_metrics(
    orig: RawVideo, recon: RawVideo, total_bits: float
) -> tuple[RdPoint, RdPoint, list[dict]]:
    """Per-frame metric table plus sequence RD points.

    Sequence PSNR/MS-SSIM are means of the per-frame values; bpp is
    total_bits over all source pixels.
    """
    if len(orig.frames) != len(recon.frames):
        raise ValueError(
            f"length mismatch: {len(orig.frames)} vs {len(recon.frames)} frames"
        )
    rows = []
    for i, (fo, fr) in enumerate(zip(orig.frames, recon.frames)):
        rows.append({"frame": i, "psnr_db": psnr(fo, fr), "ms_ssim": ms_ssim(fo, fr)})
    bpp = total_bits / (len(orig.frames) * orig.width * orig.height)
    mean_psnr = float(np.mean([r["psnr_db"] for r in rows]))
    mean_msssim = float(np.mean([r["ms_ssim"] for r in rows]))
    return (
        RdPoint(bpp, mean_psnr, QualityKind.PSNR_DB),
        RdPoint(bpp, mean_msssim, QualityKind.MS_SSIM),
        rows,
    )


def _fit_log_rate(curve: RdCurve) -> np.ndarray:
    if len(curve.points) < 4:
        raise ValueError(
            f"curve {curve.label!r} has {len(curve.points)} points, need >= 4 for the cubic fit"
        )
    return np.polyfit(curve.quality, np.log10(curve.bpp), 3)


def bdbr(anchor: RdCurve, test: RdCurve) -> float:
    """Bjontegaard delta bitrate of `test` against `anchor`, in percent.

    Cubic fits of log10(rate) as a function of quality are integrated over
    the overlapping quality interval; negative values mean rate savings.
    """
    return bdbr_report(anchor, test)["bdbr_percent"]


def bdbr_report(anchor: RdCurve, test: RdCurve) -> dict:
    """BDBR plus the fit coefficients and integration interval, for audit."""
    coef_a = _fit_log_rate(anchor)
    coef_t = _fit_log_rate(test)
    lo = max(anchor.quality.min(), test.quality.min())
    hi = min(anchor.quality.max(), test.quality.max())
    if hi <= lo:
        raise ValueError(
            f"quality ranges do not overlap: anchor "
            f"[{anchor.quality.min():.4g}, {anchor.quality.max():.4g}] vs test "
            f"[{test.quality.min():.4g}, {test.quality.max():.4g}]"
        )
    int_a = np.polyint(coef_a)
    int_t = np.polyint(coef_t)
    avg_a = (np.polyval(int_a, hi) - np.polyval(int_a, lo)) / (hi - lo)
    avg_t = (np.polyval(int_t, hi) - np.polyval(int_t, lo)) / (hi - lo)
    delta = float(10.0 ** (avg_t - avg_a) - 1.0) * 100.0
    return {
        "bdbr_percent": delta,
        "anchor_label": anchor.label,
        "test_label": test.label,
        "quality_interval": [float(lo), float(hi)],
        "anchor_fit_coefficients": [float(v) for v in coef_a],
        "test_fit_coefficients": [float(v) for v in coef_t],
    }


def format_bdbr(value: float) -> str:
    return f"{value:.2f}%"


def rd_curve_to_csv(curve: RdCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bpp", "quality", "quality_kind"])
        for p in curve.points:
            writer.writerow([f"{p.bpp:.10g}", f"{p.quality:.10g}", p.quality_kind.value])


def rd_curve_from_csv(path, label: str | None = None) -> RdCurve:
    path = Path(path)
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for ln, row in enumerate(reader, start=1):
            if ln == 1 and row and row[0].strip().lower() == "bpp":
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{ln}: expected at least bpp,quality columns")
            try:
                bpp = float(row[0])
                quality = float(row[1])
            except ValueError as e:
                raise ValueError(f"{path}:{ln}: non-numeric value ({e})") from e
            kind = QualityKind(row[2].strip()) if len(row) > 2 and row[2].strip() else QualityKind.PSNR_DB
            points.append(RdPoint(bpp, quality, kind))
    points.sort(key=lambda p: p.bpp)
    return RdCurve(label or path.stem, points)


def per_frame_table_to_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("empty per-frame table")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
