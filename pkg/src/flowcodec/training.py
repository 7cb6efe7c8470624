"""Rate-distortion training: loss, recurrent clip unrolling, stage schedule.

Quantization is replaced by additive uniform noise during training; the
rate term is the estimated bit count normalized to bits per pixel, so the
distortion weight alpha is resolution-independent.
"""

from __future__ import annotations

import copy
import csv
import enum
import math
import subprocess
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
import torch

from . import evaluation
from .codec import CodecConfig, CodecModels, encode_video, save_checkpoint
from .entropy_coding import estimate_bits, quantize_noise
from .residual_pipeline import compute_residual, reconstruct
from .video_io import RawVideo, SyntheticKind, make_synthetic_sequence

GRAD_CLIP_NORM = 1.0


class TrainingDiverged(RuntimeError):
    """Raised after restoring the last good weights on a non-finite loss."""


class DistortionMode(enum.Enum):
    MSE = "mse"
    MS_SSIM = "ms_ssim"


class Stage(enum.Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclass
class RdLossValue:
    """total == alpha * distortion + rate_bits, rate in bits per pixel."""

    total: object
    distortion: object
    rate_bits: object
    alpha: float

    def detached(self) -> "RdLossValue":
        def val(x):
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        return RdLossValue(val(self.total), val(self.distortion), val(self.rate_bits), self.alpha)


@dataclass
class TrainConfig:
    distortion_mode: DistortionMode = DistortionMode.MSE
    alpha: float = 256.0
    stage: Stage = Stage.PRETRAIN
    steps: int = 20000
    lr_initial: float = 4e-5
    lr_final: float = 1e-5
    batch: int = 4
    clip_len: int = 4
    seed: int = 0
    crop_size: int = 64
    log_every: int = 50
    snapshot_every: int = 100

    def __post_init__(self):
        if isinstance(self.distortion_mode, str):
            self.distortion_mode = DistortionMode(self.distortion_mode.lower())
        if isinstance(self.stage, str):
            self.stage = Stage(self.stage.lower())
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must be <= lr_initial")
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")
        if self.crop_size % 16:
            raise ValueError("crop_size must be a multiple of 16")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        valid = set(cls.field_names())
        unknown = sorted(set(mapping) - valid)
        if unknown:
            raise ValueError(
                f"unknown config keys {unknown}; valid keys: {sorted(valid)}"
            )
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.name == "distortion_mode":
                kwargs[f.name] = DistortionMode(str(raw).lower())
            elif f.name == "stage":
                kwargs[f.name] = Stage(str(raw).lower())
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        mapping = {}
        for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            mapping[key] = value
        return cls.from_mapping(mapping)

    def to_jsonable(self) -> dict:
        d = asdict(self)
        d["distortion_mode"] = self.distortion_mode.value
        d["stage"] = self.stage.value
        return d


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def rd_loss(frame, recon, bits_mv, bits_res, alpha: float, mode: DistortionMode) -> RdLossValue:
    """alpha * distortion + (bits_mv + bits_res) / pixel_count.

    bits_mv / bits_res are the per-branch totals including their hyper-latent
    bits. Distortion is MSE or 1 - MS-SSIM over [0,1] pixels.
    """
    if frame.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(frame.shape)} vs {tuple(recon.shape)}")
    if mode is DistortionMode.MSE:
        distortion = torch.mean((frame - recon) ** 2)
    else:
        distortion = 1.0 - evaluation.ms_ssim_tensor(recon, frame)
    n_pix = frame.shape[0] * frame.shape[2] * frame.shape[3]
    rate = (bits_mv + bits_res) / n_pix
    total = alpha * distortion + rate
    return RdLossValue(total, distortion, rate, alpha)


def _noisy_branch(latent, hyper_encoder, hyper_decoder, prior, gen):
    """Noise-quantized latent plus its estimated branch bits (main + hyper)."""
    z = hyper_encoder(latent)
    z_noisy = quantize_noise(z, gen)
    mean, scale = hyper_decoder(z_noisy, latent.shape[-2:])
    latent_noisy = quantize_noise(latent, gen)
    bits = estimate_bits(latent_noisy, mean, scale) + prior.bits(z_noisy)
    return latent_noisy, bits


def training_forward(
    models: CodecModels,
    clips: torch.Tensor,
    alpha: float,
    mode: DistortionMode,
    generator: torch.Generator | None = None,
    on_reference: Callable[[int, torch.Tensor], None] | None = None,
) -> RdLossValue:
    """Full-pipeline training pass over a batch of clips (B, T, 3, H, W).

    Frame 0 is intra coded; every later frame is predicted against the
    previous *reconstruction* (the frame-buffer recurrence), and the RD loss
    is averaged over all coded frames.
    """
    if clips.dim() != 5 or clips.shape[1] < 2:
        raise ValueError(f"expected (B, T>=2, 3, H, W) clips, got {tuple(clips.shape)}")
    total = distortion = rate = 0.0
    n_frames = clips.shape[1]

    frame0 = clips[:, 0]
    latent0 = models.res_encoder(frame0)
    latent0_noisy, bits0 = _noisy_branch(
        latent0, models.res_hyper_encoder, models.res_hyper_decoder, models.res_prior, generator
    )
    recon = torch.clamp(models.res_decoder(latent0_noisy), 0.0, 1.0)
    loss0 = rd_loss(frame0, recon, torch.zeros(()), bits0, alpha, mode)
    total = total + loss0.total
    distortion = distortion + loss0.distortion
    rate = rate + loss0.rate_bits

    ref = recon
    for t in range(1, n_frames):
        if on_reference is not None:
            on_reference(t, ref)
        cur = clips[:, t]
        flow = models.flow_net(cur, ref)
        mv_latent = models.mv_encoder(flow)
        mv_noisy, bits_mv = _noisy_branch(
            mv_latent, models.mv_hyper_encoder, models.mv_hyper_decoder, models.mv_prior, generator
        )
        flow_dec = models.mv_decoder(mv_noisy)
        flow_filt = models.mv_filter(flow_dec, ref)
        pred = models.compensator(ref, flow_filt)

        residual = compute_residual(cur, pred)
        res_latent = models.res_encoder(residual)
        res_noisy, bits_res = _noisy_branch(
            res_latent, models.res_hyper_encoder, models.res_hyper_decoder, models.res_prior, generator
        )
        res_dec = models.res_decoder(res_noisy)
        res_filt = models.res_filter(res_dec, pred, ref, flow_filt)
        recon = reconstruct(pred, res_filt)

        loss_t = rd_loss(cur, recon, bits_mv, bits_res, alpha, mode)
        total = total + loss_t.total
        distortion = distortion + loss_t.distortion
        rate = rate + loss_t.rate_bits
        ref = recon

    inv = 1.0 / n_frames
    return RdLossValue(total * inv, distortion * inv, rate * inv, alpha)


class SyntheticClipStream:
    """Endless deterministic stream of synthetic training clips.

    Yields (T, H, W, 3) float32 arrays with randomized velocities,
    alternating between moving-square and translating-texture content unless
    a single kind is pinned.
    """

    def __init__(self, clip_len: int, size: int, seed: int = 0,
                 max_speed: float = 2.0, kind: SyntheticKind | None = None):
        self.clip_len = clip_len
        self.size = size
        self.seed = seed
        self.max_speed = max_speed
        self.kind = kind

    def __iter__(self) -> Iterator[np.ndarray]:
        rng = np.random.default_rng(self.seed)
        kinds = [SyntheticKind.MOVING_SQUARE, SyntheticKind.TRANSLATING_TEXTURE]
        i = 0
        while True:
            kind = self.kind or kinds[i % 2]
            velocity = tuple(rng.uniform(-self.max_speed, self.max_speed, size=2))
            video = make_synthetic_sequence(
                kind, self.clip_len, self.size, velocity, seed=int(rng.integers(1 << 31))
            )
            yield np.stack([f.pixels for f in video.frames])
            i += 1


def clips_to_tensor(clips: list[np.ndarray]) -> torch.Tensor:
    batch = np.stack(clips)  # B, T, H, W, 3
    return torch.from_numpy(batch).permute(0, 1, 4, 2, 3).contiguous()


def _set_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_stage(
    models: CodecModels,
    data: Iterable[np.ndarray],
    cfg: TrainConfig,
    log_path=None,
    stop_check: Callable[[int, dict], bool] | None = None,
) -> list[dict]:
    """Run one optimization stage; returns the metrics log as row dicts.

    On a non-finite loss the most recent snapshot is restored into `models`
    and TrainingDiverged is raised. `stop_check(step, row)` may end the stage
    early (used by regression harnesses that train to a target).
    """
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    optimizer = torch.optim.Adam(models.parameters(), lr=cfg.lr_initial)
    data_iter = iter(data)

    last_good = copy.deepcopy(models.state_dict())
    rows: list[dict] = []

    models.train()
    try:
        for step in range(cfg.steps):
            frac = step / max(cfg.steps - 1, 1)
            _set_lr(optimizer, cfg.lr_initial + frac * (cfg.lr_final - cfg.lr_initial))

            clips = clips_to_tensor([next(data_iter) for _ in range(cfg.batch)])
            if clips.shape[1] != cfg.clip_len:
                clips = clips[:, : cfg.clip_len]

            try:
                loss = training_forward(
                    models, clips, cfg.alpha, cfg.distortion_mode, generator=gen
                )
                if not torch.isfinite(loss.total):
                    raise TrainingDiverged(f"non-finite loss at step {step}")
                optimizer.zero_grad()
                loss.total.backward()
                torch.nn.utils.clip_grad_norm_(models.parameters(), GRAD_CLIP_NORM)
                optimizer.step()
                if any(not torch.isfinite(p).all() for p in models.parameters()):
                    raise TrainingDiverged(f"non-finite weights after step {step}")
            except TrainingDiverged as e:
                models.load_state_dict(last_good)
                raise TrainingDiverged(f"{e}; restored snapshot") from None
            except RuntimeError as e:
                # non-finite activations crash integer sampling in warp;
                # past step 0 that is divergence, at step 0 it is a real bug
                if step == 0:
                    raise
                models.load_state_dict(last_good)
                raise TrainingDiverged(
                    f"runtime failure at step {step} ({e}); restored snapshot"
                ) from e

            scalar = loss.detached()
            row = {
                "step": step,
                "loss": scalar.total,
                "distortion": scalar.distortion,
                "bpp": scalar.rate_bits,
            }
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                rows.append(row)
            if step % cfg.snapshot_every == 0:
                last_good = copy.deepcopy(models.state_dict())
            if stop_check is not None and stop_check(step, row):
                if rows[-1] is not row:
                    rows.append(row)
                break
    finally:
        models.eval()

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "loss", "distortion", "bpp"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


def validate_on_clip(models: CodecModels, video: RawVideo, gop_size: int = 12) -> dict:
    """Inference-mode RD point on one clip (real rounding + real coding)."""
    bs, results = encode_video(video, gop_size, models)
    total_bits = 8.0 * bs.payload_bytes
    n_pix = len(video.frames) * video.width * video.height
    return {
        "psnr_db": float(np.mean([r.psnr for r in results])),
        "ms_ssim": float(np.mean([r.ms_ssim for r in results])),
        "bpp": total_bits / n_pix,
    }


def train_full(
    models: CodecModels,
    data_factory: Callable[[int], Iterable[np.ndarray]],
    alphas: list[float],
    mode: DistortionMode,
    out_dir,
    pretrain_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    validation_clip: RawVideo | None = None,
) -> dict[float, Path]:
    """Two-step schedule: one high-rate pretrain, then per-alpha fine-tunes.

    Each fine-tune starts from the pretrained weights; one checkpoint per
    alpha is written with its config, validation metrics and git revision.
    """
    if not alphas:
        raise ValueError("alphas must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_stage(models, data_factory(pretrain_cfg.seed), pretrain_cfg,
                log_path=out_dir / "pretrain_log.csv")
    pretrained = copy.deepcopy(models.state_dict())

    checkpoints: dict[float, Path] = {}
    for alpha in alphas:
        models.load_state_dict(pretrained)
        cfg = copy.deepcopy(finetune_cfg)
        cfg.alpha = alpha
        cfg.stage = Stage.FINETUNE
        cfg.distortion_mode = mode
        train_stage(models, data_factory(cfg.seed), cfg,
                    log_path=out_dir / f"finetune_alpha{alpha:g}_log.csv")
        extra = {
            "train_config": cfg.to_jsonable(),
            "alpha": alpha,
            "git": git_describe(),
        }
        if validation_clip is not None:
            extra["validation"] = validate_on_clip(models, validation_clip)
        path = out_dir / f"checkpoint_alpha{alpha:g}.pt"
        save_checkpoint(models, path, extra)
        checkpoints[alpha] = path
    return checkpoints
