"""Magnitude pruning and uniform symmetric quantization of model updates.

Compression always runs prune first, quantize second. The raw (uncompressed)
plaintext wire form also lives here since it is the baseline every byte
saving is measured against.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class CompressionConfig:
    enabled: bool = False
    prune_fraction: float = 0.0
    quant_bits: int = 8

    def __post_init__(self):
        if not 0.0 <= self.prune_fraction < 1.0:
            raise ParameterError("prune_fraction must lie in [0, 1)")
        if not 2 <= self.quant_bits <= 16:
            raise ParameterError("quant_bits must lie in [2, 16]")


@dataclass
class CompressedUpdate:
    indices: np.ndarray  # kept (non-zero) coordinates, ascending
    codes: np.ndarray    # signed integer codes for the kept coordinates
    scale: float
    dimension: int
    bits: int


def prune(update, fraction: float) -> np.ndarray:
    """Zero the ``floor(fraction * d)`` smallest-magnitude coordinates.

    Ties in magnitude are pruned lower index first.
    """
    if not 0.0 <= fraction < 1.0:
        raise ParameterError("fraction must lie in [0, 1)")
    w = np.array(update, dtype=np.float64).ravel()
    k = math.floor(fraction * w.size)
    if k:
        order = np.argsort(np.abs(w), kind="stable")
        w[order[:k]] = 0.0
    return w


def quantize(update, bits: int) -> CompressedUpdate:
    if not 2 <= bits <= 16:
        raise ParameterError("bits must lie in [2, 16]")
    w = np.asarray(update, dtype=np.float64).ravel()
    qmax = (1 << (bits - 1)) - 1
    idx = np.flatnonzero(w)
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return CompressedUpdate(idx, np.zeros(idx.size, dtype=np.int64), 0.0, w.size, bits)
    scale = peak / qmax
    codes = np.clip(np.rint(w[idx] / scale), -qmax, qmax).astype(np.int64)
    return CompressedUpdate(idx, codes, scale, w.size, bits)


def dequantize(c: CompressedUpdate) -> np.ndarray:
    out = np.zeros(c.dimension, dtype=np.float64)
    out[c.indices] = c.codes * c.scale
    return out


def compress(update, cfg: CompressionConfig) -> CompressedUpdate:
    return quantize(prune(update, cfg.prune_fraction), cfg.quant_bits)


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def varint_len(n: int) -> int:
    return max(1, (n.bit_length() + 6) // 7)


def _gaps(indices) -> list[int]:
    prev = -1
    out = []
    for i in indices:
        out.append(int(i) - prev - 1)
        prev = int(i)
    return out


# compressed wire form: u32 dimension, u8 bits, f64 scale, u32 kept count,
# varint index gaps, codes packed little-endian at `bits` bits each in offset binary
_CHEAD = struct.Struct("<IBdI")


def compressed_wire_size(c: CompressedUpdate) -> int:
    gaps = sum(varint_len(g) for g in _gaps(c.indices))
    return _CHEAD.size + gaps + (len(c.codes) * c.bits + 7) // 8


def serialize_compressed(c: CompressedUpdate) -> bytes:
    head = _CHEAD.pack(c.dimension, c.bits, c.scale, len(c.indices))
    gaps = b"".join(_varint(g) for g in _gaps(c.indices))
    bias = 1 << (c.bits - 1)
    acc = 0
    for j, code in enumerate(c.codes):
        acc |= (int(code) + bias) << (j * c.bits)
    packed = acc.to_bytes((len(c.codes) * c.bits + 7) // 8, "little")
    return head + gaps + packed


def deserialize_compressed(data: bytes) -> CompressedUpdate:
    dim, bits, scale, count = _CHEAD.unpack_from(data)
    pos = _CHEAD.size
    indices = []
    prev = -1
    for _ in range(count):
        shift = gap = 0
        while True:
            byte = data[pos]
            pos += 1
            gap |= (byte & 0x7F) << shift
            shift += 7
            if not byte & 0x80:
                break
        prev = prev + gap + 1
        indices.append(prev)
    nbytes = (count * bits + 7) // 8
    acc = int.from_bytes(data[pos:pos + nbytes], "little")
    if pos + nbytes != len(data):
        raise ParameterError("malformed compressed update")
    bias = 1 << (bits - 1)
    mask = (1 << bits) - 1
    codes = [((acc >> (j * bits)) & mask) - bias for j in range(count)]
    return CompressedUpdate(np.array(indices, dtype=np.int64), np.array(codes, dtype=np.int64), scale, dim, bits)


# raw plaintext update: u32 dimension then float64 little-endian coordinates
RAW_HEADER_BYTES = 4


def raw_wire_size(dimension: int) -> int:
    return RAW_HEADER_BYTES + 8 * dimension


def serialize_raw(update) -> bytes:
    w = np.asarray(update, dtype="<f8").ravel()
    return struct.pack("<I", w.size) + w.tobytes()


def deserialize_raw(data: bytes) -> np.ndarray:
    (d,) = struct.unpack_from("<I", data)
    if len(data) != raw_wire_size(d):
        raise ParameterError("malformed raw update")
    return np.frombuffer(data, dtype="<f8", offset=RAW_HEADER_BYTES).astype(np.float64)
