"""Versioned binary container for coded video.

Layout (all integers little-endian):

    header   magic     4s   b"FVC1"
             version   u8
             width     u16  pre-padding frame width
             height    u16  pre-padding frame height
             pad_right u8
             pad_bottom u8
             gop_size  u8
             n_frames  u32
             flow_scale f32  flow normalizer used by the MV autoencoder
             model_id  8s   truncated hash of the checkpoint weights
    frames   n_packets u8
             crc32     u32  CRC of the 8-bit reconstruction (desync guard)
             packets   (kind u8, length u32, payload) repeated
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

MAGIC = b"FVC1"
VERSION = 1

_HEADER = struct.Struct("<4sBHHBBBIf8s")
_FRAME_HEAD = struct.Struct("<BI")
_PACKET_HEAD = struct.Struct("<BI")

HEADER_SIZE = _HEADER.size  # 28 bytes


class BitstreamError(Exception):
    """Structured decode failure: bad magic/version, truncation, corruption."""


class PacketKind(enum.IntEnum):
    MV = 0
    RESIDUAL = 1
    HYPER_MV = 2
    HYPER_RES = 3
    INTRA = 4


@dataclass
class BitstreamPacket:
    kind: PacketKind
    payload: bytes

    @property
    def length(self) -> int:
        return len(self.payload)


@dataclass
class StreamHeader:
    width: int
    height: int
    pad_right: int
    pad_bottom: int
    gop_size: int
    n_frames: int
    flow_scale: float
    model_id: bytes = b"\0" * 8

    def __post_init__(self):
        checks = [
            ("width", self.width, 1, 0xFFFF),
            ("height", self.height, 1, 0xFFFF),
            ("pad_right", self.pad_right, 0, 0xFF),
            ("pad_bottom", self.pad_bottom, 0, 0xFF),
            ("gop_size", self.gop_size, 1, 0xFF),
            ("n_frames", self.n_frames, 0, 0xFFFFFFFF),
        ]
        for name, v, lo, hi in checks:
            if not lo <= v <= hi:
                raise ValueError(f"header field {name}={v} outside [{lo}, {hi}]")
        if len(self.model_id) != 8:
            raise ValueError("model_id must be exactly 8 bytes")


@dataclass
class FrameRecord:
    crc32: int
    packets: list[BitstreamPacket] = field(default_factory=list)


@dataclass
class VideoBitstream:
    header: StreamHeader
    frames: list[FrameRecord] = field(default_factory=list)

    @property
    def packets(self) -> list[BitstreamPacket]:
        """All packets in container (decode) order."""
        return [p for fr in self.frames for p in fr.packets]

    @property
    def payload_bytes(self) -> int:
        return sum(p.length for p in self.packets)


def pack_bitstream(bs: VideoBitstream) -> bytes:
    h = bs.header
    out = bytearray(
        _HEADER.pack(
            MAGIC,
            VERSION,
            h.width,
            h.height,
            h.pad_right,
            h.pad_bottom,
            h.gop_size,
            h.n_frames,
            h.flow_scale,
            h.model_id,
        )
    )
    for fr in bs.frames:
        if len(fr.packets) > 0xFF:
            raise ValueError(f"{len(fr.packets)} packets in one frame record")
        out += _FRAME_HEAD.pack(len(fr.packets), fr.crc32 & 0xFFFFFFFF)
        for p in fr.packets:
            out += _PACKET_HEAD.pack(int(p.kind), len(p.payload))
            out += p.payload
    return bytes(out)


def unpack_bitstream(data: bytes) -> VideoBitstream:
    if len(data) < HEADER_SIZE:
        raise BitstreamError(
            f"stream of {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header"
        )
    magic, version, width, height, pad_r, pad_b, gop, n_frames, flow_scale, model_id = (
        _HEADER.unpack_from(data, 0)
    )
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}, expected {VERSION}")
    try:
        header = StreamHeader(width, height, pad_r, pad_b, gop, n_frames, flow_scale, model_id)
    except ValueError as e:
        raise BitstreamError(str(e)) from e

    frames = []
    pos = HEADER_SIZE
    while pos < len(data):
        if pos + _FRAME_HEAD.size > len(data):
            raise BitstreamError(f"truncated frame record at offset {pos}")
        n_packets, crc = _FRAME_HEAD.unpack_from(data, pos)
        pos += _FRAME_HEAD.size
        packets = []
        for _ in range(n_packets):
            if pos + _PACKET_HEAD.size > len(data):
                raise BitstreamError(f"truncated packet header at offset {pos}")
            kind_raw, length = _PACKET_HEAD.unpack_from(data, pos)
            pos += _PACKET_HEAD.size
            try:
                kind = PacketKind(kind_raw)
            except ValueError as e:
                raise BitstreamError(f"unknown packet kind {kind_raw} at offset {pos}") from e
            if pos + length > len(data):
                raise BitstreamError(
                    f"packet at offset {pos} claims {length} bytes, "
                    f"{len(data) - pos} remain"
                )
            packets.append(BitstreamPacket(kind, bytes(data[pos : pos + length])))
            pos += length
        frames.append(FrameRecord(crc, packets))
    return VideoBitstream(header, frames)
