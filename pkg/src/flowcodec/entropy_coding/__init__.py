"""Quantization, learned bit estimation, range coding and the bitstream."""

from .quantize import quantize_noise, quantize_round
from .gaussian import SCALE_FLOOR, MIN_BIN_MASS, gaussian_bin_mass, estimate_bits
from .factorized import FactorizedPrior
from .hyper import HyperEncoder, HyperDecoder
from .tables import (
    QMIN,
    QMAX,
    SUPPORT_SIZE,
    quantize_pmf,
    gaussian_tables,
    factorized_tables,
)
from .range_coder import RangeEncoder, RangeDecoder, encode_values, decode_values
from .bitstream import (
    MAGIC,
    VERSION,
    BitstreamError,
    PacketKind,
    BitstreamPacket,
    StreamHeader,
    FrameRecord,
    VideoBitstream,
    pack_bitstream,
    unpack_bitstream,
)

__all__ = [
    "quantize_noise",
    "quantize_round",
    "SCALE_FLOOR",
    "MIN_BIN_MASS",
    "gaussian_bin_mass",
    "estimate_bits",
    "FactorizedPrior",
    "HyperEncoder",
    "HyperDecoder",
    "QMIN",
    "QMAX",
    "SUPPORT_SIZE",
    "quantize_pmf",
    "gaussian_tables",
    "factorized_tables",
    "RangeEncoder",
    "RangeDecoder",
    "encode_values",
    "decode_values",
    "MAGIC",
    "VERSION",
    "BitstreamError",
    "PacketKind",
    "BitstreamPacket",
    "StreamHeader",
    "FrameRecord",
    "VideoBitstream",
    "pack_bitstream",
    "unpack_bitstream",
]
