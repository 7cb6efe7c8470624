"""Per-frame encode/decode orchestration.

The encoder runs the closed loop: every reconstruction it reports is built
from the *decoded* (quantized, entropy-coded) quantities, so encoder-side
and decoder-side frame buffers stay bit-identical. GOPs are independent
(first frame intra) and may be encoded concurrently.
"""

from __future__ import annotations

import hashlib
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import evaluation
from .compensation import MotionCompensator
from .entropy_coding import (
    BitstreamPacket,
    FrameRecord,
    FactorizedPrior,
    HyperDecoder,
    HyperEncoder,
    PacketKind,
    StreamHeader,
    VideoBitstream,
    decode_values,
    encode_values,
    estimate_bits,
    factorized_tables,
    gaussian_tables,
    quantize_round,
)
from .flow import PyramidFlowNet
from .mv_pipeline import FLOW_SCALE, MvDecoder, MvEncoder, MvFilter
from .residual_pipeline import (
    ResidualDecoder,
    ResidualEncoder,
    ResidualFilter,
    compute_residual,
    reconstruct,
)
from .video_io import Frame, RawVideo, crop_frame, pad_frame, segment_gops, to_uint8

DOWNSAMPLE = 16


class DecodeError(Exception):
    """Decoder-side failure: wrong model, packet mismatch, CRC desync."""


@dataclass(frozen=True)
class CodecConfig:
    fc: int = 64  # autoencoder output feature channels
    hyper_channels: int = 32
    flow_widths: tuple[int, int, int] = (16, 32, 64)
    flow_scale: float = FLOW_SCALE
    mc_blocks: int = 4
    rf_blocks: int = 6

    def __post_init__(self):
        object.__setattr__(self, "flow_widths", tuple(self.flow_widths))


class CodecModels(nn.Module):
    """All trainable networks of the codec, under stable dotted names.

    The state_dict key prefixes (flow_net, mv_encoder, mv_decoder, mv_filter,
    compensator, res_encoder, res_decoder, res_filter, mv_hyper_encoder,
    mv_hyper_decoder, mv_prior, res_hyper_encoder, res_hyper_decoder,
    res_prior) are the public checkpoint contract.
    """

    def __init__(self, config: CodecConfig | None = None):
        super().__init__()
        cfg = config or CodecConfig()
        self.config = cfg
        self.flow_net = PyramidFlowNet(cfg.flow_widths)
        self.mv_encoder = MvEncoder(cfg.fc, cfg.flow_scale)
        self.mv_decoder = MvDecoder(cfg.fc, cfg.flow_scale)
        self.mv_filter = MvFilter()
        self.compensator = MotionCompensator(n_blocks=cfg.mc_blocks)
        self.res_encoder = ResidualEncoder(cfg.fc)
        self.res_decoder = ResidualDecoder(cfg.fc)
        self.res_filter = ResidualFilter(n_blocks=cfg.rf_blocks)
        self.mv_hyper_encoder = HyperEncoder(cfg.fc, cfg.hyper_channels)
        self.mv_hyper_decoder = HyperDecoder(cfg.fc, cfg.hyper_channels)
        self.mv_prior = FactorizedPrior(cfg.hyper_channels)
        self.res_hyper_encoder = HyperEncoder(cfg.fc, cfg.hyper_channels)
        self.res_hyper_decoder = HyperDecoder(cfg.fc, cfg.hyper_channels)
        self.res_prior = FactorizedPrior(cfg.hyper_channels)

    def model_id(self) -> bytes:
        """8-byte digest of all weights; streams only decode with the same one."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
        return digest.digest()[:8]


def save_checkpoint(models: CodecModels, path, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": "flowcodec-checkpoint-v1",
            "config": asdict(models.config),
            "state_dict": models.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[CodecModels, dict]:
    path = Path(path)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != "flowcodec-checkpoint-v1":
        raise ValueError(f"{path}: not a flowcodec checkpoint")
    cfg = payload["config"]
    cfg["flow_widths"] = tuple(cfg["flow_widths"])
    models = CodecModels(CodecConfig(**cfg))
    models.load_state_dict(payload["state_dict"])
    return models, payload.get("extra", {})


class DecodedFrameBuffer:
    """Most-recent reconstructed frames, identical on encoder and decoder."""

    def __init__(self, capacity: int = 1):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._frames: list[Frame] = []

    def push(self, frame: Frame) -> None:
        self._frames.append(frame)
        del self._frames[: -self.capacity]

    def latest(self) -> Frame:
        if not self._frames:
            raise ValueError("decoded frame buffer is empty")
        return self._frames[-1]

    def __len__(self) -> int:
        return len(self._frames)


@dataclass
class FrameCodingResult:
    packets: list[BitstreamPacket]
    reconstruction: Frame
    bits_mv: float
    bits_res: float
    bits_hyper: float
    est_bits_mv: float
    est_bits_res: float
    est_bits_hyper: float
    psnr: float
    ms_ssim: float
    is_intra: bool
    frame_index: int = -1

    @property
    def bits_total(self) -> float:
        return self.bits_mv + self.bits_res + self.bits_hyper

    @property
    def est_bits_total(self) -> float:
        return self.est_bits_mv + self.est_bits_res + self.est_bits_hyper


def frame_to_tensor(frame: Frame) -> torch.Tensor:
    return torch.from_numpy(frame.pixels).permute(2, 0, 1).unsqueeze(0)


def tensor_to_frame(t: torch.Tensor) -> Frame:
    arr = t.detach().squeeze(0).permute(1, 2, 0).cpu().numpy()
    return Frame(np.clip(arr, 0.0, 1.0))


def _channel_indexes(t: torch.Tensor) -> np.ndarray:
    n, c, h, w = t.shape
    return np.tile(np.repeat(np.arange(c, dtype=np.int64), h * w), n)


def _flat_ints(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.int64).reshape(-1)


def _code_latent(latent, hyper_encoder, hyper_decoder, prior):
    """Quantize and entropy-code one latent through its hyper path.

    Returns the quantized latent (as the decoder will see it), the hyper and
    main payload bytes, and the estimated bit counts (main, hyper).
    """
    z = hyper_encoder(latent)
    q_hyper = quantize_round(z)
    mean, scale = hyper_decoder(q_hyper, latent.shape[-2:])
    q_latent = quantize_round(latent)

    est_main = float(estimate_bits(q_latent, mean, scale))
    est_hyper = float(prior.bits(q_hyper))

    hyper_payload = encode_values(
        _flat_ints(q_hyper), factorized_tables(prior), _channel_indexes(q_hyper)
    )
    n = q_latent.numel()
    main_tables = gaussian_tables(
        mean.detach().cpu().numpy(), scale.detach().cpu().numpy()
    )
    main_payload = encode_values(
        _flat_ints(q_latent), main_tables, np.arange(n, dtype=np.int64)
    )
    return q_latent, hyper_payload, main_payload, est_main, est_hyper


def _decode_latent(hyper_payload, main_payload, latent_shape, hyper_shape,
                   hyper_decoder, prior, dtype=torch.float32):
    hyper_idx = np.tile(
        np.repeat(np.arange(hyper_shape[1], dtype=np.int64), hyper_shape[2] * hyper_shape[3]),
        hyper_shape[0],
    )
    try:
        q_hyper_vals = decode_values(hyper_payload, factorized_tables(prior), hyper_idx)
        q_hyper = torch.from_numpy(q_hyper_vals.reshape(hyper_shape)).to(dtype)
        mean, scale = hyper_decoder(q_hyper, latent_shape[-2:])
        main_tables = gaussian_tables(
            mean.detach().cpu().numpy(), scale.detach().cpu().numpy()
        )
        n = int(np.prod(latent_shape))
        q_vals = decode_values(main_payload, main_tables, np.arange(n, dtype=np.int64))
    except (ValueError, IndexError) as e:
        raise DecodeError(f"entropy decoding failed: {e}") from e
    return torch.from_numpy(q_vals.reshape(latent_shape)).to(dtype)


def _frame_crc(frame: Frame) -> int:
    return zlib.crc32(to_uint8(frame.pixels).tobytes())


def _latent_shape(cfg: CodecConfig, h: int, w: int) -> tuple[int, int, int, int]:
    return (1, cfg.fc, h // DOWNSAMPLE, w // DOWNSAMPLE)


def _hyper_shape(cfg: CodecConfig, latent_shape) -> tuple[int, int, int, int]:
    lh, lw = latent_shape[2], latent_shape[3]
    hh = (lh + 1) // 2
    hw = (lw + 1) // 2
    return (1, cfg.hyper_channels, (hh + 1) // 2, (hw + 1) // 2)


def encode_frame_p(frame: Frame, dfb: DecodedFrameBuffer, models: CodecModels) -> FrameCodingResult:
    """Encode one predicted frame against the buffer's latest reconstruction.

    Expects padded (multiple-of-16) dimensions; pushes its own closed-loop
    reconstruction into the buffer.
    """
    ref_frame = dfb.latest()
    if (ref_frame.height, ref_frame.width) != (frame.height, frame.width):
        raise ValueError(
            f"reference {ref_frame.height}x{ref_frame.width} does not match "
            f"frame {frame.height}x{frame.width}"
        )
    with torch.no_grad():
        cur = frame_to_tensor(frame)
        ref = frame_to_tensor(ref_frame)

        flow = models.flow_net(cur, ref)
        mv_latent = models.mv_encoder(flow)
        q_mv, mv_hyper_payload, mv_payload, est_mv, est_mv_h = _code_latent(
            mv_latent, models.mv_hyper_encoder, models.mv_hyper_decoder, models.mv_prior
        )
        flow_dec = models.mv_decoder(q_mv)
        flow_filt = models.mv_filter(flow_dec, ref)
        pred = models.compensator(ref, flow_filt)

        residual = compute_residual(cur, pred)
        res_latent = models.res_encoder(residual)
        q_res, res_hyper_payload, res_payload, est_res, est_res_h = _code_latent(
            res_latent, models.res_hyper_encoder, models.res_hyper_decoder, models.res_prior
        )
        res_dec = models.res_decoder(q_res)
        res_filt = models.res_filter(res_dec, pred, ref, flow_filt)
        recon = reconstruct(pred, res_filt)

    recon_frame = tensor_to_frame(recon)
    dfb.push(recon_frame)
    packets = [
        BitstreamPacket(PacketKind.HYPER_MV, mv_hyper_payload),
        BitstreamPacket(PacketKind.MV, mv_payload),
        BitstreamPacket(PacketKind.HYPER_RES, res_hyper_payload),
        BitstreamPacket(PacketKind.RESIDUAL, res_payload),
    ]
    return FrameCodingResult(
        packets=packets,
        reconstruction=recon_frame,
        bits_mv=8.0 * len(mv_payload),
        bits_res=8.0 * len(res_payload),
        bits_hyper=8.0 * (len(mv_hyper_payload) + len(res_hyper_payload)),
        est_bits_mv=est_mv,
        est_bits_res=est_res,
        est_bits_hyper=est_mv_h + est_res_h,
        psnr=evaluation.psnr(frame, recon_frame),
        ms_ssim=evaluation.ms_ssim(frame, recon_frame),
        is_intra=False,
    )


def encode_frame_i(frame: Frame, models: CodecModels) -> FrameCodingResult:
    """Intra frame: the frame itself goes through the residual codec with a
    zero prediction; residual filtering is skipped."""
    with torch.no_grad():
        cur = frame_to_tensor(frame)
        res_latent = models.res_encoder(cur)
        q_res, res_hyper_payload, res_payload, est_res, est_res_h = _code_latent(
            res_latent, models.res_hyper_encoder, models.res_hyper_decoder, models.res_prior
        )
        recon = torch.clamp(models.res_decoder(q_res), 0.0, 1.0)

    recon_frame = tensor_to_frame(recon)
    packets = [
        BitstreamPacket(PacketKind.HYPER_RES, res_hyper_payload),
        BitstreamPacket(PacketKind.INTRA, res_payload),
    ]
    return FrameCodingResult(
        packets=packets,
        reconstruction=recon_frame,
        bits_mv=0.0,
        bits_res=8.0 * len(res_payload),
        bits_hyper=8.0 * len(res_hyper_payload),
        est_bits_mv=0.0,
        est_bits_res=est_res,
        est_bits_hyper=est_res_h,
        psnr=evaluation.psnr(frame, recon_frame),
        ms_ssim=evaluation.ms_ssim(frame, recon_frame),
        is_intra=True,
    )


def _encode_gop(frames: list[Frame], models: CodecModels):
    dfb = DecodedFrameBuffer()
    records, results = [], []
    for i, frame in enumerate(frames):
        if i == 0:
            res = encode_frame_i(frame, models)
            dfb.push(res.reconstruction)
        else:
            res = encode_frame_p(frame, dfb, models)
        records.append(FrameRecord(_frame_crc(res.reconstruction), res.packets))
        results.append(res)
    return records, results


def encode_video(
    video: RawVideo, gop_size: int, models: CodecModels, jobs: int = 1
) -> tuple[VideoBitstream, list[FrameCodingResult]]:
    """Encode a video: one intra frame per GOP, the rest predicted.

    Returns the container structure plus per-frame results whose metrics are
    computed against the original (unpadded) frames.
    """
    padded_frames = []
    pad_r = pad_b = 0
    for f in video.frames:
        pf, pad_r, pad_b = pad_frame(f, DOWNSAMPLE)
        padded_frames.append(pf)
    padded = RawVideo(padded_frames, video.frame_rate, video.source_bit_depth)

    header = StreamHeader(
        width=video.width,
        height=video.height,
        pad_right=pad_r,
        pad_bottom=pad_b,
        gop_size=gop_size,
        n_frames=len(video.frames),
        flow_scale=models.config.flow_scale,
        model_id=models.model_id(),
    )

    segments = segment_gops(padded, gop_size)
    if jobs > 1 and len(segments) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            encoded = list(pool.map(lambda seg: _encode_gop(seg.frames, models), segments))
    else:
        encoded = [_encode_gop(seg.frames, models) for seg in segments]

    frames_out: list[FrameRecord] = []
    results: list[FrameCodingResult] = []
    for records, gop_results in encoded:
        frames_out.extend(records)
        results.extend(gop_results)

    for i, res in enumerate(results):
        res.frame_index = i
        res.reconstruction = crop_frame(res.reconstruction, video.height, video.width)
        res.psnr = evaluation.psnr(video.frames[i], res.reconstruction)
        res.ms_ssim = evaluation.ms_ssim(video.frames[i], res.reconstruction)
    return VideoBitstream(header, frames_out), results


def _expected_kinds(is_intra: bool) -> list[PacketKind]:
    if is_intra:
        return [PacketKind.HYPER_RES, PacketKind.INTRA]
    return [PacketKind.HYPER_MV, PacketKind.MV, PacketKind.HYPER_RES, PacketKind.RESIDUAL]


def decode_video(bs: VideoBitstream, models: CodecModels) -> RawVideo:
    """Reconstruct every frame from bitstream bytes and model weights only."""
    header = bs.header
    if header.model_id != models.model_id():
        raise DecodeError(
            f"model id mismatch: stream was encoded with {header.model_id.hex()}, "
            f"checkpoint is {models.model_id().hex()}"
        )
    if abs(header.flow_scale - models.config.flow_scale) > 1e-6:
        raise DecodeError(
            f"flow scale mismatch: stream {header.flow_scale}, model "
            f"{models.config.flow_scale}"
        )
    if len(bs.frames) != header.n_frames:
        raise DecodeError(
            f"container holds {len(bs.frames)} frame records, header says {header.n_frames}"
        )

    cfg = models.config
    ph = header.height + header.pad_bottom
    pw = header.width + header.pad_right
    latent_shape = _latent_shape(cfg, ph, pw)
    hyper_shape = _hyper_shape(cfg, latent_shape)

    dfb = DecodedFrameBuffer()
    out_frames: list[Frame] = []
    with torch.no_grad():
        for i, record in enumerate(bs.frames):
            is_intra = i % header.gop_size == 0
            kinds = [p.kind for p in record.packets]
            if kinds != _expected_kinds(is_intra):
                raise DecodeError(
                    f"frame {i}: packet kinds {[k.name for k in kinds]} do not match "
                    f"{'intra' if is_intra else 'predicted'} layout"
                )
            if is_intra:
                q_res = _decode_latent(
                    record.packets[0].payload,
                    record.packets[1].payload,
                    latent_shape,
                    hyper_shape,
                    models.res_hyper_decoder,
                    models.res_prior,
                )
                recon = torch.clamp(models.res_decoder(q_res), 0.0, 1.0)
            else:
                ref = frame_to_tensor(dfb.latest())
                q_mv = _decode_latent(
                    record.packets[0].payload,
                    record.packets[1].payload,
                    latent_shape,
                    hyper_shape,
                    models.mv_hyper_decoder,
                    models.mv_prior,
                )
                flow_dec = models.mv_decoder(q_mv)
                flow_filt = models.mv_filter(flow_dec, ref)
                pred = models.compensator(ref, flow_filt)
                q_res = _decode_latent(
                    record.packets[2].payload,
                    record.packets[3].payload,
                    latent_shape,
                    hyper_shape,
                    models.res_hyper_decoder,
                    models.res_prior,
                )
                res_dec = models.res_decoder(q_res)
                res_filt = models.res_filter(res_dec, pred, ref, flow_filt)
                recon = reconstruct(pred, res_filt)

            recon_frame = tensor_to_frame(recon)
            crc = _frame_crc(recon_frame)
            if crc != record.crc32:
                raise DecodeError(
                    f"frame {i}: reconstruction CRC {crc:#010x} does not match "
                    f"stream CRC {record.crc32:#010x} (corrupt packet or desync)"
                )
            dfb.push(recon_frame)
            out_frames.append(crop_frame(recon_frame, header.height, header.width))
    return RawVideo(out_frames)
