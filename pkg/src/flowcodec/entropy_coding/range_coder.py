"""Bit-exact integer range coder.

Classic binary arithmetic coder with 32-bit state and underflow tracking,
operating on the quantized cumulative-count tables from `tables`. All
arithmetic is integer-only, so identical inputs produce identical bytes on
any platform. Out-of-support values are coded as an escape bucket followed
by the raw 32-bit value.
"""

from __future__ import annotations

import numpy as np

from .tables import ESCAPE_INDEX, QMAX, QMIN, TOTAL

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1

# Uniform table for escape payload bytes: 256 bins of 256 counts each.
_BYTE_CDF = np.arange(257, dtype=np.int64) * 256


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.underflow = 0
        self._byte = 0
        self._nbits = 0
        self._out = bytearray()

    def _emit(self, bit: int):
        self._byte = (self._byte << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._out.append(self._byte)
            self._byte = 0
            self._nbits = 0

    def encode(self, cum_lo: int, cum_hi: int, total: int = TOTAL):
        span = self.high - self.low + 1
        self.high = self.low + cum_hi * span // total - 1
        self.low = self.low + cum_lo * span // total
        while ((self.low ^ self.high) & _HALF) == 0:
            bit = self.low >> (_STATE_BITS - 1)
            self._emit(bit)
            inv = bit ^ 1
            for _ in range(self.underflow):
                self._emit(inv)
            self.underflow = 0
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
        while (self.low & ~self.high & _QUARTER) != 0:
            self.underflow += 1
            self.low = (self.low << 1) ^ _HALF
            self.high = ((self.high ^ _HALF) << 1) | _HALF | 1

    def finish(self) -> bytes:
        # One disambiguating bit, then pad to a byte boundary with zeros.
        self._emit(1)
        while self._nbits:
            self._emit(0)
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._byte = 0
        self._nbits = 0
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self._read_bit()

    def _read_bit(self) -> int:
        # Past end of stream reads as an infinite run of zeros.
        if self._nbits == 0:
            if self._pos >= len(self._data):
                return 0
            self._byte = self._data[self._pos]
            self._pos += 1
            self._nbits = 8
        self._nbits -= 1
        return (self._byte >> self._nbits) & 1

    def decode(self, cdf_row: np.ndarray, total: int = TOTAL) -> int:
        span = self.high - self.low + 1
        offset = self.code - self.low
        value = ((offset + 1) * total - 1) // span
        sym = int(np.searchsorted(cdf_row, value, side="right")) - 1
        cum_lo = int(cdf_row[sym])
        cum_hi = int(cdf_row[sym + 1])

        self.high = self.low + cum_hi * span // total - 1
        self.low = self.low + cum_lo * span // total
        while ((self.low ^ self.high) & _HALF) == 0:
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
            self.code = ((self.code << 1) & _MASK) | self._read_bit()
        while (self.low & ~self.high & _QUARTER) != 0:
            self.low = (self.low << 1) ^ _HALF
            self.high = ((self.high ^ _HALF) << 1) | _HALF | 1
            self.code = (self.code & _HALF) | ((self.code << 1) & (_MASK >> 1)) | self._read_bit()
        return sym


_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1


def encode_values(values: np.ndarray, tables: np.ndarray, indexes: np.ndarray) -> bytes:
    """Range-encode integer values; tables[indexes[i]] models values[i]."""
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    indexes = np.asarray(indexes, dtype=np.int64).reshape(-1)
    if values.shape != indexes.shape:
        raise ValueError(
            f"{values.size} values but {indexes.size} table indexes"
        )
    if values.size and (values.min() < _INT32_MIN or values.max() > _INT32_MAX):
        raise ValueError("symbol magnitude exceeds the 32-bit escape payload")
    enc = RangeEncoder()
    for v, ti in zip(values.tolist(), indexes.tolist()):
        row = tables[ti]
        if QMIN <= v <= QMAX:
            sym = v - QMIN
            enc.encode(int(row[sym]), int(row[sym + 1]))
        else:
            enc.encode(int(row[ESCAPE_INDEX]), int(row[ESCAPE_INDEX + 1]))
            raw = v & 0xFFFFFFFF
            for shift in (0, 8, 16, 24):
                b = (raw >> shift) & 0xFF
                enc.encode(int(_BYTE_CDF[b]), int(_BYTE_CDF[b + 1]))
    return enc.finish()


def decode_values(data: bytes, tables: np.ndarray, indexes: np.ndarray) -> np.ndarray:
    """Inverse of encode_values; decodes len(indexes) values."""
    indexes = np.asarray(indexes, dtype=np.int64).reshape(-1)
    dec = RangeDecoder(data)
    out = np.empty(indexes.size, dtype=np.int64)
    for i, ti in enumerate(indexes.tolist()):
        sym = dec.decode(tables[ti])
        if sym == ESCAPE_INDEX:
            raw = 0
            for shift in (0, 8, 16, 24):
                raw |= dec.decode(_BYTE_CDF) << shift
            if raw & (1 << 31):
                raw -= 1 << 32
            out[i] = raw
        else:
            out[i] = sym + QMIN
    return out
