"""Command-line entry point: train, encode, decode, eval, bdrate, synth.

Exit codes: 0 success, 1 user error (bad input, missing file), 2 internal
invariant violation. Failures print a structured message, never a raw
traceback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

STATS_SCHEMA_VERSION = 1
CACHE_ENV = "FLOWCODEC_CACHE"


class UserError(Exception):
    pass


def _resolve_checkpoint(path_str: str) -> Path:
    """A checkpoint path, falling back to the FLOWCODEC_CACHE directory."""
    path = Path(path_str)
    if path.is_file():
        return path
    cache = os.environ.get(CACHE_ENV)
    if cache:
        candidate = Path(cache) / path_str
        if candidate.is_file():
            return candidate
    raise UserError(f"checkpoint not found: {path_str}")


def _load_models(path_str: str):
    from .codec import load_checkpoint

    path = _resolve_checkpoint(path_str)
    try:
        models, extra = load_checkpoint(path)
    except (ValueError, RuntimeError, KeyError) as e:
        raise UserError(f"cannot load checkpoint {path}: {e}") from e
    models.eval()
    return models, extra


def _read_input_video(args):
    from . import video_io

    path = Path(args.input)
    if path.is_dir():
        return video_io.read_png_dir(path)
    if path.suffix.lower() == ".yuv":
        if args.width is None or args.height is None:
            raise UserError("--width and --height are required for raw YUV input")
        return video_io.read_yuv420(path, args.width, args.height, args.max_frames)
    raise UserError(f"unsupported input {path}: expected a PNG directory or a .yuv file")


def _recon_crc(frame) -> int:
    import zlib

    from .video_io import to_uint8

    return zlib.crc32(to_uint8(frame.pixels).tobytes())


def _parse_velocity(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise UserError(f"velocity must be 'vx,vy', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as e:
        raise UserError(f"velocity must be numeric: {e}") from e


def cmd_synth(args) -> int:
    from . import video_io

    try:
        kind = video_io.SyntheticKind(args.kind)
    except ValueError:
        valid = ", ".join(k.value for k in video_io.SyntheticKind)
        raise UserError(f"unknown kind {args.kind!r}; choose from: {valid}")
    try:
        video = video_io.make_synthetic_sequence(
            kind, args.frames, args.size, _parse_velocity(args.velocity), seed=args.seed
        )
    except ValueError as e:
        raise UserError(str(e)) from e
    paths = video_io.write_png_dir(video, args.out)
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def cmd_encode(args) -> int:
    from . import evaluation
    from .codec import encode_video
    from .entropy_coding import pack_bitstream

    models, _ = _load_models(args.checkpoint)
    video = _read_input_video(args)
    if args.gop < 1 or args.gop > 255:
        raise UserError(f"--gop must be in [1, 255], got {args.gop}")

    bs, results = encode_video(video, args.gop, models, jobs=args.jobs)
    data = pack_bitstream(bs)
    Path(args.out).write_bytes(data)

    total_payload_bits = 8.0 * bs.payload_bytes
    point_psnr, point_msssim, table = evaluation.sequence_metrics(
        video,
        type(video)([r.reconstruction for r in results]),
        total_payload_bits,
    )
    stats = {
        "schema_version": STATS_SCHEMA_VERSION,
        "width": video.width,
        "height": video.height,
        "n_frames": len(video.frames),
        "gop_size": args.gop,
        "container_bytes": len(data),
        "payload_bits": total_payload_bits,
        "estimated_bits": sum(r.est_bits_total for r in results),
        "bpp": point_psnr.bpp,
        "psnr_db": point_psnr.quality,
        "ms_ssim": point_msssim.quality,
        "intra_frames": sum(1 for r in results if r.is_intra),
        "per_frame": [
            {
                "frame": r.frame_index,
                "intra": r.is_intra,
                "bits_mv": r.bits_mv,
                "bits_res": r.bits_res,
                "bits_hyper": r.bits_hyper,
                "estimated_bits": r.est_bits_total,
                "psnr_db": r.psnr,
                "ms_ssim": r.ms_ssim,
                "recon_crc32": _recon_crc(r.reconstruction),
            }
            for r in results
        ],
    }
    if args.stats:
        evaluation.write_json(stats, args.stats)
    print(
        f"encoded {len(video.frames)} frames: bpp={stats['bpp']:.4f} "
        f"psnr={stats['psnr_db']:.2f}dB ms_ssim={stats['ms_ssim']:.4f}"
    )
    return 0


def cmd_decode(args) -> int:
    from . import video_io
    from .codec import DecodeError, decode_video
    from .entropy_coding import BitstreamError, unpack_bitstream

    models, _ = _load_models(args.checkpoint)
    path = Path(args.input)
    if not path.is_file():
        raise UserError(f"bitstream not found: {path}")
    try:
        bs = unpack_bitstream(path.read_bytes())
        video = decode_video(bs, models)
    except (BitstreamError, DecodeError) as e:
        raise UserError(f"cannot decode {path}: {e}") from e
    video_io.write_png_dir(video, args.out)
    print(f"decoded {len(video.frames)} frames to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from . import evaluation, video_io

    orig = video_io.read_png_dir(args.original)
    bits = float(args.bits)
    if args.bitstream:
        from .entropy_coding import BitstreamError, unpack_bitstream

        try:
            bs = unpack_bitstream(Path(args.bitstream).read_bytes())
        except (OSError, BitstreamError) as e:
            raise UserError(f"cannot read bitstream {args.bitstream}: {e}") from e
        bits = 8.0 * bs.payload_bytes
    if args.reconstructed:
        recon = video_io.read_png_dir(args.reconstructed)
    elif args.bitstream:
        if not args.checkpoint:
            raise UserError("--checkpoint is required to evaluate a bitstream directly")
        from .codec import DecodeError, decode_video

        models, _ = _load_models(args.checkpoint)
        try:
            recon = decode_video(bs, models)
        except DecodeError as e:
            raise UserError(f"cannot decode {args.bitstream}: {e}") from e
    else:
        raise UserError("provide --reconstructed frames or a --bitstream to decode")
    try:
        point_psnr, point_msssim, table = evaluation.sequence_metrics(orig, recon, bits)
    except ValueError as e:
        raise UserError(str(e)) from e
    report = {
        "schema_version": STATS_SCHEMA_VERSION,
        "bpp": point_psnr.bpp,
        "psnr_db": point_psnr.quality,
        "ms_ssim": point_msssim.quality,
        "quality_note": "metrics computed on RGB channels",
        "per_frame": table,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_bdrate(args) -> int:
    from . import evaluation

    try:
        anchor = evaluation.rd_curve_from_csv(args.anchor)
        test = evaluation.rd_curve_from_csv(args.test)
        report = evaluation.bdbr_report(anchor, test)
    except (ValueError, OSError) as e:
        raise UserError(str(e)) from e
    if args.out:
        evaluation.write_json(report, args.out)
    print(evaluation.format_bdbr(report["bdbr_percent"]))
    return 0


def cmd_train(args) -> int:
    import torch

    from .codec import CodecConfig, CodecModels, save_checkpoint
    from .training import (
        SyntheticClipStream,
        TrainConfig,
        TrainingDiverged,
        git_describe,
        train_stage,
    )

    mapping = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise UserError(f"config file not found: {cfg_path}")
        try:
            cfg = TrainConfig.from_file(cfg_path)
            mapping = {}
        except ValueError as e:
            raise UserError(str(e)) from e
    else:
        cfg = TrainConfig()
    for override in args.set or []:
        if "=" not in override:
            raise UserError(f"--set expects key=value, got {override!r}")
        key, value = override.split("=", 1)
        mapping[key.strip()] = value.strip()
    if mapping:
        try:
            merged = {**{k: v for k, v in cfg.to_jsonable().items()}, **mapping}
            cfg = TrainConfig.from_mapping(merged)
        except ValueError as e:
            raise UserError(str(e)) from e
    if args.seed is not None:
        cfg.seed = args.seed

    if args.data != "synthetic":
        raise UserError(f"unknown data source {args.data!r}; only 'synthetic' is built in")

    out_dir = Path(args.out or os.environ.get(CACHE_ENV) or "flowcodec_runs")
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    models = CodecModels(CodecConfig(fc=args.fc, hyper_channels=args.hyper_channels))
    stream = SyntheticClipStream(cfg.clip_len, cfg.crop_size, seed=cfg.seed)
    try:
        rows = train_stage(models, stream, cfg, log_path=out_dir / "train_log.csv")
    except TrainingDiverged as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(models, ckpt, {"train_config": cfg.to_jsonable(), "git": git_describe()})
    print(
        f"trained {rows[-1]['step'] + 1} steps: loss={rows[-1]['loss']:.4f} "
        f"checkpoint={ckpt}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcodec",
        description="Toy learned video codec: train, encode, decode, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic PNG clip")
    p.add_argument("--kind", default="moving_square",
                   help="moving_square or translating_texture")
    p.add_argument("--frames", type=int, default=7, help="number of frames")
    p.add_argument("--size", type=int, default=64, help="square frame size, multiple of 16")
    p.add_argument("--velocity", default="1,0", help="backward flow per frame, 'vx,vy'")
    p.add_argument("--seed", type=int, default=0, help="texture seed")
    p.add_argument("--out", required=True, help="output PNG directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode a video to a bitstream")
    p.add_argument("--input", required=True, help="PNG directory or raw .yuv file")
    p.add_argument("--width", type=int, help="YUV width")
    p.add_argument("--height", type=int, help="YUV height")
    p.add_argument("--max-frames", type=int, default=None, help="cap input frames")
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--gop", type=int, default=12, help="group-of-pictures size")
    p.add_argument("--jobs", type=int, default=1, help="GOPs encoded concurrently")
    p.add_argument("--out", required=True, help="output bitstream file")
    p.add_argument("--stats", help="output stats JSON path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to PNG frames")
    p.add_argument("--input", required=True, help="bitstream file")
    p.add_argument("--checkpoint", required=True, help="matching model checkpoint")
    p.add_argument("--out", required=True, help="output PNG directory")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR/MS-SSIM/bpp of a reconstruction")
    p.add_argument("--original", required=True, help="original PNG directory")
    p.add_argument("--reconstructed", help="reconstructed PNG directory")
    p.add_argument("--bits", type=float, default=0.0, help="coded bits for bpp")
    p.add_argument("--bitstream",
                   help="bitstream file: supplies the bit count, and is decoded "
                        "when --reconstructed is absent (needs --checkpoint)")
    p.add_argument("--checkpoint", help="model checkpoint for decoding --bitstream")
    p.add_argument("--out", help="output JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="Bjontegaard delta bitrate of two RD curves")
    p.add_argument("--anchor", required=True, help="anchor curve CSV (bpp,quality)")
    p.add_argument("--test", required=True, help="test curve CSV (bpp,quality)")
    p.add_argument("--out", help="output JSON report path")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("train", help="train a codec on synthetic clips")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable; wins over the file)")
    p.add_argument("--data", default="synthetic", help="training data source")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--fc", type=int, default=64, help="autoencoder feature channels")
    p.add_argument("--hyper-channels", type=int, default=32, help="hyper-latent channels")
    p.add_argument("--out", help=f"output directory (default ${CACHE_ENV} or ./flowcodec_runs)")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # internal invariant violation
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
