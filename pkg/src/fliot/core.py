"""Numerics substrate: seeded random streams, fixed-point codec, dense helpers.

Every stochastic component in the simulator draws from a :class:`RandomStream`
keyed by ``(seed, stream_id)``. Stream ids are derived from a role name and an
entity index with a stable hash, so the draw sequence a device sees does not
depend on scheduling order or on how many other devices exist.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RangeError, ShapeError

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def derive_stream_id(role: str, *index: int) -> int:
    """Stable 64-bit id for ``(role, index...)``; independent of PYTHONHASHSEED."""
    key = role + ":" + ",".join(str(int(i)) for i in index)
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "big")


class RandomStream:
    """Single-consumer random source keyed by ``(seed, stream_id)``.

    Backed by numpy's PCG64, whose output is specified bit-for-bit across
    platforms. Streams must not be shared between concurrent actors.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id:#x})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, role: str, *index: int) -> "RandomStream":
        """Independent stream under the same master seed."""
        sid = derive_stream_id(f"{self.stream_id:x}/{role}", *index)
        return RandomStream(self.seed, sid)

    def normal(self, mean=0.0, sigma=1.0, size=None):
        return self._gen.normal(mean, sigma, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``."""
        return self._gen.choice(n, size=k, replace=False)

    def randbits(self, k: int) -> int:
        """Uniform Python int in ``[0, 2**k)``."""
        if k <= 0:
            return 0
        nbytes = (k + 7) // 8
        v = int.from_bytes(self._gen.bytes(nbytes), "big")
        return v >> (8 * nbytes - k)

    def randbelow(self, bound: int) -> int:
        """Uniform Python int in ``[0, bound)`` by rejection sampling."""
        if bound <= 0:
            raise ParameterError(f"bound must be positive, got {bound}")
        k = bound.bit_length()
        while True:
            v = self.randbits(k)
            if v < bound:
                return v

    def randbelow_list(self, bound: int, size: int) -> list[int]:
        """``size`` independent uniform ints in ``[0, bound)``."""
        if bound <= 0:
            raise ParameterError(f"bound must be positive, got {bound}")
        if bound <= 1 << 62:
            return self._gen.integers(0, bound, size=size, dtype=np.int64).tolist()
        k = bound.bit_length()
        nbytes = (k + 7) // 8
        shift = 8 * nbytes - k
        out: list[int] = []
        while len(out) < size:
            need = size - len(out)
            raw = self._gen.bytes(nbytes * need)
            for j in range(need):
                v = int.from_bytes(raw[j * nbytes:(j + 1) * nbytes], "big") >> shift
                if v < bound:
                    out.append(v)
        return out


def gaussian(stream: RandomStream, mean: float, sigma: float) -> float:
    """One draw from N(mean, sigma^2). ``sigma == 0`` returns ``mean`` exactly."""
    if not math.isfinite(sigma) or sigma < 0:
        raise ParameterError(f"sigma must be finite and non-negative, got {sigma}")
    if sigma == 0:
        return float(mean)
    return float(mean + sigma * stream.normal())


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals in ``[-bound, bound]`` to integers ``round(x * 2**scale_bits)``.

    The crypto layers work on non-negative residues, so they use the offset
    form ``encode(x) + offset`` with ``offset = round(bound * 2**scale_bits)``;
    an encoded value then lies in ``[0, 2 * offset]`` and a sum of ``N`` of
    them lies in ``[0, 2 * N * offset]``. After summing, ``N * offset`` is
    subtracted before decoding.
    """

    scale_bits: int = 16
    bound: float = 8.0

    def __post_init__(self):
        if self.scale_bits < 1:
            raise ParameterError("scale_bits must be positive")
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise ParameterError("bound must be a positive real")

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def offset(self) -> int:
        return int(round(self.bound * self.scale))

    def encode(self, x: float) -> int:
        return fixed_encode(x, self)

    def decode(self, v: int) -> float:
        return fixed_decode(v, self)

    def clip(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        over = np.abs(values) > self.bound
        if over.any():
            logger.warning(
                "clipping %d of %d coordinates to +/-%g before encoding",
                int(over.sum()), values.size, self.bound,
            )
            values = np.clip(values, -self.bound, self.bound)
        return values

    def encode_offset(self, values: np.ndarray) -> list[int]:
        """Clip, fixed-point encode and shift into ``[0, 2 * offset]``."""
        values = self.clip(values)
        codes = np.rint(values * self.scale).astype(np.int64) + self.offset
        return codes.tolist()

    def decode_offset_sum(self, totals: list[int], n_terms: int) -> np.ndarray:
        """Inverse of summing ``n_terms`` offset encodings; returns the real sums."""
        shift = n_terms * self.offset
        return np.array([t - shift for t in totals], dtype=np.float64) / self.scale

    def max_offset_sum(self, n_terms: int) -> int:
        return 2 * n_terms * self.offset

    def check_capacity(self, modulus: int, n_terms: int) -> None:
        """Raise unless ``n_terms`` offset encodings can be summed below ``modulus``."""
        if self.max_offset_sum(n_terms) >= modulus:
            raise RangeError(
                f"{n_terms} terms at scale 2^{self.scale_bits}, bound {self.bound} "
                f"overflow a modulus of {modulus.bit_length()} bits"
            )


def fixed_encode(x: float, codec: FixedPointCodec) -> int:
    if not abs(x) <= codec.bound:
        raise RangeError(f"|{x}| exceeds codec bound {codec.bound}")
    return int(round(x * codec.scale))


def fixed_decode(v: int, codec: FixedPointCodec) -> float:
    return v / codec.scale


def matvec(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if A.ndim != 2 or v.ndim != 1 or A.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape} by {v.shape}")
    return A @ v
