"""Raw video ingest, synthesis, padding and GOP segmentation.

Frames are RGB float32 arrays in [0, 1]. YUV 4:2:0 input is converted with
the BT.601 full-range matrix; metrics and PNG round trips work on 8-bit
quantized values.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class FrameRole(enum.Enum):
    INTRA = "intra"
    PREDICTED = "predicted"


class SyntheticKind(enum.Enum):
    MOVING_SQUARE = "moving_square"
    TRANSLATING_TEXTURE = "translating_texture"


@dataclass(frozen=True)
class Frame:
    """One RGB frame, H x W x 3 float32 with every value finite in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame dimensions must be positive, got {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("frame contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(
                f"frame values outside [0, 1]: min={px.min():.4g} max={px.max():.4g}"
            )
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class RawVideo:
    """An ordered, non-empty list of equally sized frames."""

    frames: list[Frame]
    frame_rate: float = 30.0
    source_bit_depth: int = 8

    def __post_init__(self):
        if not self.frames:
            raise ValueError("video must contain at least one frame")
        h, w = self.frames[0].height, self.frames[0].width
        for i, f in enumerate(self.frames):
            if (f.height, f.width) != (h, w):
                raise ValueError(
                    f"frame {i} is {f.height}x{f.width}, expected {h}x{w}"
                )

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class GopStructure:
    gop_size: int
    frame_roles: tuple[FrameRole, ...]

    def __post_init__(self):
        if self.gop_size < 1:
            raise ValueError("gop_size must be >= 1")
        if not self.frame_roles or self.frame_roles[0] is not FrameRole.INTRA:
            raise ValueError("first frame of a GOP must be INTRA")
        if sum(r is FrameRole.INTRA for r in self.frame_roles) != 1:
            raise ValueError("exactly one INTRA frame per GOP")


@dataclass
class GopSegment:
    structure: GopStructure
    frames: list[Frame] = field(default_factory=list)


# BT.601 full-range YUV -> RGB (8-bit levels, chroma centered on 128).
_BT601_CR_R = 1.402
_BT601_CB_G = 0.344136
_BT601_CR_G = 0.714136
_BT601_CB_B = 1.772


def _bt601_full_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = y.astype(np.float32)
    cb = cb.astype(np.float32) - 128.0
    cr = cr.astype(np.float32) - 128.0
    r = y + _BT601_CR_R * cr
    g = y - _BT601_CB_G * cb - _BT601_CR_G * cr
    b = y + _BT601_CB_B * cb
    rgb = np.stack([r, g, b], axis=-1) / 255.0
    return np.clip(rgb, 0.0, 1.0)


def read_yuv420(path, width: int, height: int, max_frames: int | None = None) -> RawVideo:
    """Read a planar YUV 4:2:0 file, converting to RGB.

    Width and height must be even (4:2:0 subsampling); the file size must be
    a whole number of width*height*3/2 byte frames.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {width}x{height}")
    if width % 2 or height % 2:
        raise ValueError(f"YUV420 dimensions must be even, got {width}x{height}")
    path = Path(path)
    data = path.read_bytes()
    frame_bytes = width * height * 3 // 2
    n_full, rem = divmod(len(data), frame_bytes)
    if rem != 0:
        raise ValueError(
            f"{path}: truncated at frame {n_full} "
            f"(file holds {rem} stray bytes past offset {n_full * frame_bytes})"
        )
    if n_full == 0:
        raise ValueError(f"{path}: file holds no complete frame")
    if max_frames is not None:
        n_full = min(n_full, max_frames)

    y_size = width * height
    c_size = y_size // 4
    frames = []
    for i in range(n_full):
        off = i * frame_bytes
        raw = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=off)
        y = raw[:y_size].reshape(height, width)
        cb = raw[y_size : y_size + c_size].reshape(height // 2, width // 2)
        cr = raw[y_size + c_size :].reshape(height // 2, width // 2)
        cb = cb.repeat(2, axis=0).repeat(2, axis=1)
        cr = cr.repeat(2, axis=0).repeat(2, axis=1)
        frames.append(Frame(_bt601_full_to_rgb(y, cb, cr)))
    return RawVideo(frames)


_INDEX_RE = re.compile(r"(\d+)")


def read_png_dir(path) -> RawVideo:
    """Read a directory of index-named PNG frames, ordered by index.

    Indices must be contiguous; a gap raises an error naming the first
    missing index.
    """
    path = Path(path)
    if not path.is_dir():
        raise ValueError(f"{path}: not a directory")
    indexed = {}
    for p in sorted(path.iterdir()):
        if p.suffix.lower() != ".png":
            continue
        m = _INDEX_RE.findall(p.stem)
        if not m:
            raise ValueError(f"{p.name}: no frame index in filename")
        idx = int(m[-1])
        if idx in indexed:
            raise ValueError(f"duplicate frame index {idx} ({p.name}, {indexed[idx].name})")
        indexed[idx] = p
    if not indexed:
        raise ValueError(f"{path}: no PNG frames found")
    start = min(indexed)
    missing = [i for i in range(start, start + len(indexed)) if i not in indexed]
    if missing:
        raise ValueError(f"{path}: missing frame index {missing[0]}")

    frames = []
    dims = None
    for idx in sorted(indexed):
        arr = np.asarray(Image.open(indexed[idx]).convert("RGB"), dtype=np.uint8)
        if dims is None:
            dims = arr.shape[:2]
        elif arr.shape[:2] != dims:
            raise ValueError(
                f"{indexed[idx].name}: size {arr.shape[1]}x{arr.shape[0]} "
                f"does not match first frame {dims[1]}x{dims[0]}"
            )
        frames.append(Frame(arr.astype(np.float32) / 255.0))
    return RawVideo(frames)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """Quantize [0,1] reals to 8 bit (round to nearest)."""
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def write_png_dir(video: RawVideo, path, prefix: str = "frame_") -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(video.frames) - 1)))
    written = []
    for i, f in enumerate(video.frames):
        p = path / f"{prefix}{i:0{digits}d}.png"
        Image.fromarray(to_uint8(f.pixels)).save(p)
        written.append(p)
    return written


def _sample_periodic(base: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Bilinearly sample `base` at (row+dy, col+dx) with wraparound."""
    y0 = int(np.floor(dy))
    x0 = int(np.floor(dx))
    fy = dy - y0
    fx = dx - x0

    def shifted(sy, sx):
        return np.roll(base, shift=(-sy, -sx), axis=(0, 1))

    if fy == 0.0 and fx == 0.0:
        return shifted(y0, x0)
    top = (1.0 - fx) * shifted(y0, x0) + fx * shifted(y0, x0 + 1)
    bot = (1.0 - fx) * shifted(y0 + 1, x0) + fx * shifted(y0 + 1, x0 + 1)
    return (1.0 - fy) * top + fy * bot


def _square_base(size: int) -> np.ndarray:
    base = np.empty((size, size, 3), dtype=np.float32)
    base[..., 0] = 0.10
    base[..., 1] = 0.10
    base[..., 2] = 0.15
    side = max(4, size // 4)
    y0 = x0 = size // 8
    base[y0 : y0 + side, x0 : x0 + side] = (0.90, 0.80, 0.65)
    return base


def _texture_base(size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noise = rng.random((size, size, 3), dtype=np.float32)
    # Two periodic 3x3 box blurs keep wraparound shifts exact while removing
    # pixel-level aliasing that would starve coarse-to-fine flow estimation.
    for _ in range(2):
        acc = np.zeros_like(noise)
        for sy in (-1, 0, 1):
            for sx in (-1, 0, 1):
                acc += np.roll(noise, shift=(sy, sx), axis=(0, 1))
        noise = acc / 9.0
    lo, hi = noise.min(), noise.max()
    if hi - lo < 1e-6:
        return np.full_like(noise, 0.5)
    return ((noise - lo) / (hi - lo)).astype(np.float32)


def make_synthetic_sequence(
    kind: SyntheticKind,
    n_frames: int,
    size: int,
    velocity: tuple[float, float],
    seed: int = 0,
) -> RawVideo:
    """Build a deterministic test clip with exactly known motion.

    `velocity = (vx, vy)` is the backward sampling offset between consecutive
    frames: frame[t](p) == frame[t-1](p + velocity), with wraparound. The
    constant field (vx, vy) is therefore the ground-truth backward flow from
    any frame to its predecessor (content visibly translates by -velocity).
    """
    if isinstance(kind, str):
        kind = SyntheticKind(kind)
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    if size < 16 or size % 16:
        raise ValueError(f"size must be a positive multiple of 16, got {size}")
    vx, vy = float(velocity[0]), float(velocity[1])
    if kind is SyntheticKind.MOVING_SQUARE:
        base = _square_base(size)
    else:
        base = _texture_base(size, seed)
    frames = [
        Frame(np.clip(_sample_periodic(base, t * vy, t * vx), 0.0, 1.0))
        for t in range(n_frames)
    ]
    return RawVideo(frames)


def ground_truth_flow(velocity: tuple[float, float], height: int, width: int) -> np.ndarray:
    """Constant backward flow field matching make_synthetic_sequence."""
    flow = np.empty((height, width, 2), dtype=np.float32)
    flow[..., 0] = velocity[0]
    flow[..., 1] = velocity[1]
    return flow


def segment_gops(video: RawVideo, gop_size: int) -> list[GopSegment]:
    """Partition a video into GOPs of at most `gop_size` frames each."""
    if gop_size < 1:
        raise ValueError(f"gop_size must be >= 1, got {gop_size}")
    segments = []
    for start in range(0, len(video.frames), gop_size):
        chunk = video.frames[start : start + gop_size]
        roles = (FrameRole.INTRA,) + (FrameRole.PREDICTED,) * (len(chunk) - 1)
        segments.append(GopSegment(GopStructure(gop_size, roles), list(chunk)))
    return segments


def pad_frame(frame: Frame, multiple: int = 16) -> tuple[Frame, int, int]:
    """Reflect-pad right/bottom so both dimensions divide `multiple`."""
    h, w = frame.height, frame.width
    pad_b = (-h) % multiple
    pad_r = (-w) % multiple
    if pad_b == 0 and pad_r == 0:
        return frame, 0, 0
    # reflect needs pad < size; fall back to edge replication for tiny frames
    mode = "reflect" if pad_b < h and pad_r < w else "edge"
    px = np.pad(frame.pixels, ((0, pad_b), (0, pad_r), (0, 0)), mode=mode)
    return Frame(px), pad_r, pad_b


def crop_frame(frame: Frame, height: int, width: int) -> Frame:
    if height > frame.height or width > frame.width:
        raise ValueError(
            f"cannot crop {frame.height}x{frame.width} to {height}x{width}"
        )
    if (height, width) == (frame.height, frame.width):
        return frame
    return Frame(frame.pixels[:height, :width])
