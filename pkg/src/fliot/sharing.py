"""Additive n-of-n secret sharing of model updates over a prime field.

Each device offset-encodes its update with the same fixed-point codec as the
homomorphic path, then splits it into ``n_aggregators`` shares that sum to the
encoding mod p. Aggregator j only ever receives share j of every device, so no
single aggregator sees anything but uniformly random residues.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import FixedPointCodec, RandomStream
from .errors import AggregationError, ParameterError, RangeError

# smallest prime above 2^64
DEFAULT_PRIME = (1 << 64) + 13


@dataclass
class ShareSet:
    shares: list  # n_aggregators lists of d residues
    modulus: int
    owner: int = 0

    @property
    def n_aggregators(self) -> int:
        return len(self.shares)

    @property
    def dimension(self) -> int:
        return len(self.shares[0])


def make_shares(update, n_aggregators: int, p: int, codec: FixedPointCodec,
                stream: RandomStream, owner: int = 0) -> ShareSet:
    if n_aggregators < 2:
        raise ParameterError("need at least two aggregators")
    encoded = codec.encode_offset(np.asarray(update, dtype=np.float64).ravel())
    if encoded and max(encoded) >= p:
        raise RangeError(f"encoded coordinates do not fit below p={p}")
    d = len(encoded)
    shares = [stream.randbelow_list(p, d) for _ in range(n_aggregators - 1)]
    last = list(encoded)
    for sh in shares:
        last = [(a - s) % p for a, s in zip(last, sh)]
    shares.append(last)
    return ShareSet(shares, p, owner)


def distribute(share_sets: list[ShareSet]) -> list[list[list[int]]]:
    """Route share j of every device to aggregator j."""
    if not share_sets:
        return []
    n = share_sets[0].n_aggregators
    if any(s.n_aggregators != n for s in share_sets):
        raise AggregationError("devices used different aggregator counts")
    return [[s.shares[j] for s in share_sets] for j in range(n)]


def aggregate_shares(per_aggregator: list[list[list[int]]], p: int) -> list[list[int]]:
    """Each aggregator's coordinate-wise subtotal mod p of the shares it holds."""
    subtotals = []
    dim = None
    for received in per_aggregator:
        for vec in received:
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise AggregationError(f"share dimension {len(vec)} != {dim}")
        acc = [0] * (dim or 0)
        for vec in received:
            acc = [a + v for a, v in zip(acc, vec)]
        subtotals.append([a % p for a in acc])
    return subtotals


def combine_subtotals(subtotals: list[list[int]], p: int) -> list[int]:
    dim = len(subtotals[0])
    if any(len(s) != dim for s in subtotals):
        raise AggregationError("subtotal dimensions differ")
    return [sum(col) % p for col in zip(*subtotals)]


def reconstruct(subtotals: list[list[int]], p: int, codec: FixedPointCodec, N: int) -> np.ndarray:
    """Average update of ``N`` devices from the aggregators' subtotals."""
    try:
        codec.check_capacity(p, N)
    except RangeError as exc:
        raise AggregationError(str(exc)) from None
    totals = combine_subtotals(subtotals, p)
    return codec.decode_offset_sum(totals, N) / N


# wire form per share message: u32 dimension, then 16-byte little-endian residues
RESIDUE_BYTES = 16
WIRE_HEADER_BYTES = 4


def share_wire_size(dimension: int) -> int:
    return WIRE_HEADER_BYTES + RESIDUE_BYTES * dimension


def serialize_share(vec: list[int]) -> bytes:
    return struct.pack("<I", len(vec)) + b"".join(v.to_bytes(RESIDUE_BYTES, "little") for v in vec)


def deserialize_share(data: bytes) -> list[int]:
    (d,) = struct.unpack_from("<I", data)
    if len(data) != share_wire_size(d):
        raise ParameterError("truncated share message")
    off = WIRE_HEADER_BYTES
    return [int.from_bytes(data[off + i * RESIDUE_BYTES:off + (i + 1) * RESIDUE_BYTES], "little")
            for i in range(d)]
