"""Paillier cryptosystem and encrypted-domain aggregation of model updates.

Scheme (g = n + 1 variant):

    keygen:   n = p q with p, q random primes of key_bits / 2 bits,
              phi = (p - 1)(q - 1), mu = phi^-1 mod n
    encrypt:  c = (1 + m n) r^n  mod n^2,  r uniform in Z_n^*
    decrypt:  m = L(c^phi mod n^2) mu mod n,  L(u) = (u - 1) / n
    add:      E(m1) E(m2) mod n^2 = E(m1 + m2 mod n)

Decryption uses the CRT split over p^2 and q^2. Updates are fixed-point
encoded with a non-negative offset (see :class:`fliot.core.FixedPointCodec`)
so every plaintext and every N-term sum stays inside ``[0, n)``. The sum is
decrypted once per coordinate; division by N happens in plaintext.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import FixedPointCodec, RandomStream
from .errors import AggregationError, KeyMismatchError, ParameterError, RangeError

try:
    import gmpy2

    def _powmod(b, e, m):
        return int(gmpy2.powmod(b, e, m))

    def _invert(a, m):
        return int(gmpy2.invert(a, m))

    _gcd = gmpy2.gcd
    _mpz = gmpy2.mpz
except ImportError:  # pragma: no cover
    def _powmod(b, e, m):
        return pow(b, e, m)

    def _invert(a, m):
        return pow(a, -1, m)

    _gcd = math.gcd
    _mpz = int

MIN_KEY_BITS = 256
MR_ROUNDS = 32


def _small_primes(limit=2000):
    sieve = bytearray([1]) * (limit + 1)
    sieve[0:2] = b"\x00\x00"
    for i in range(2, int(limit ** 0.5) + 1):
        if sieve[i]:
            sieve[i * i::i] = bytearray(len(sieve[i * i::i]))
    return [i for i in range(limit + 1) if sieve[i]]


SMALL_PRIMES = _small_primes()


def is_probable_prime(n: int, stream: RandomStream, rounds: int = MR_ROUNDS) -> bool:
    """Trial division by small primes, then Miller-Rabin with random bases."""
    if n < 2:
        return False
    for sp in SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = 2 + stream.randbelow(n - 3)
        x = _powmod(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def random_prime(bits: int, stream: RandomStream) -> int:
    """Random prime with exactly ``bits`` bits and its top two bits set."""
    if bits < 8:
        raise ParameterError("prime size too small")
    top = (1 << (bits - 1)) | (1 << (bits - 2)) | 1
    while True:
        cand = stream.randbits(bits) | top
        if is_probable_prime(cand, stream):
            return cand


@dataclass(frozen=True)
class PublicKey:
    n: int

    @cached_property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def key_bits(self) -> int:
        return self.n.bit_length()

    @cached_property
    def fingerprint(self) -> str:
        raw = self.n.to_bytes((self.n.bit_length() + 7) // 8, "big")
        return hashlib.sha256(raw).hexdigest()[:16]

    @property
    def ciphertext_bytes(self) -> int:
        return (self.nsquare.bit_length() + 7) // 8

    def raw_encrypt(self, m: int, r: int) -> int:
        nsq = self.nsquare
        return (1 + m * self.n) % nsq * _powmod(r, self.n, nsq) % nsq

    def random_r(self, stream: RandomStream) -> int:
        while True:
            r = stream.randbelow(self.n)
            if r > 0 and _gcd(r, self.n) == 1:
                return r


@dataclass(frozen=True)
class SecretKey:
    public_key: PublicKey
    p: int
    q: int

    def __post_init__(self):
        if self.p * self.q != self.public_key.n:
            raise ParameterError("p * q does not match the public modulus")

    @cached_property
    def _crt(self):
        p, q = self.p, self.q
        psq, qsq = p * p, q * q
        g = self.public_key.g
        hp = _invert((_powmod(g, p - 1, psq) - 1) // p, p)
        hq = _invert((_powmod(g, q - 1, qsq) - 1) // q, q)
        return psq, qsq, hp, hq, _invert(p, q)

    def raw_decrypt(self, c: int) -> int:
        p, q = self.p, self.q
        psq, qsq, hp, hq, p_inv = self._crt
        mp = (_powmod(c, p - 1, psq) - 1) // p * hp % p
        mq = (_powmod(c, q - 1, qsq) - 1) // q * hq % q
        return mp + (mq - mp) * p_inv % q * p


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    secret_key: SecretKey

    @property
    def key_bits(self) -> int:
        return self.public_key.key_bits


@dataclass(frozen=True)
class Ciphertext:
    value: int
    public_key: PublicKey

    @property
    def fingerprint(self) -> str:
        return self.public_key.fingerprint


def keygen(key_bits: int, stream: RandomStream) -> KeyPair:
    if key_bits < MIN_KEY_BITS:
        raise ParameterError(f"key_bits must be >= {MIN_KEY_BITS}, got {key_bits}")
    p_bits = (key_bits + 1) // 2
    q_bits = key_bits - p_bits
    while True:
        p = random_prime(p_bits, stream)
        q = random_prime(q_bits, stream)
        if p != q and (p * q).bit_length() == key_bits:
            break
    pk = PublicKey(p * q)
    return KeyPair(pk, SecretKey(pk, p, q))


def encrypt(pk: PublicKey, m: int, stream: RandomStream) -> Ciphertext:
    if not 0 <= m < pk.n:
        raise RangeError("plaintext outside [0, n)")
    return Ciphertext(pk.raw_encrypt(m, pk.random_r(stream)), pk)


def decrypt(sk: SecretKey, c: Ciphertext) -> int:
    if c.fingerprint != sk.public_key.fingerprint:
        raise KeyMismatchError("ciphertext was produced under a different key")
    return sk.raw_decrypt(c.value)


def hom_add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    if c1.fingerprint != c2.fingerprint:
        raise KeyMismatchError("cannot add ciphertexts under different keys")
    return Ciphertext(c1.value * c2.value % c1.public_key.nsquare, c1.public_key)


@dataclass
class EncryptedUpdate:
    """One ciphertext per model coordinate, stored as raw residues mod n^2."""

    values: list
    public_key: PublicKey
    codec: FixedPointCodec

    @property
    def length(self) -> int:
        return len(self.values)

    @property
    def ciphertexts(self) -> list[Ciphertext]:
        return [Ciphertext(v, self.public_key) for v in self.values]


def encrypt_update(pk: PublicKey, update, codec: FixedPointCodec, stream: RandomStream) -> EncryptedUpdate:
    """Clip, offset-encode and encrypt every coordinate of ``update``."""
    codes = codec.encode_offset(np.asarray(update, dtype=np.float64).ravel())
    if codes and max(codes) >= pk.n:
        raise RangeError("encoded update does not fit the plaintext space")
    return EncryptedUpdate([pk.raw_encrypt(m, pk.random_r(stream)) for m in codes], pk, codec)


def _check_compatible(updates: list[EncryptedUpdate]):
    first = updates[0]
    for u in updates[1:]:
        if u.public_key.fingerprint != first.public_key.fingerprint:
            raise AggregationError("updates encrypted under different keys")
        if u.length != first.length:
            raise AggregationError(f"update lengths differ: {u.length} vs {first.length}")
        if u.codec != first.codec:
            raise AggregationError("updates use different fixed-point codecs")


def sum_encrypted(updates: list[EncryptedUpdate]) -> EncryptedUpdate:
    """Coordinate-wise homomorphic sum; what an untrusted aggregator computes."""
    if not updates:
        raise ParameterError("nothing to aggregate")
    _check_compatible(updates)
    pk = updates[0].public_key
    nsq = _mpz(pk.nsquare)
    acc = [_mpz(v) for v in updates[0].values]
    for u in updates[1:]:
        acc = [a * v % nsq for a, v in zip(acc, u.values)]
    return EncryptedUpdate([int(a) for a in acc], pk, updates[0].codec)


def decrypt_average(sk: SecretKey, total: EncryptedUpdate, N: int) -> np.ndarray:
    """Decrypt an N-term homomorphic sum, remove the offsets and divide by N."""
    if total.public_key.fingerprint != sk.public_key.fingerprint:
        raise KeyMismatchError("aggregate was produced under a different key")
    total.codec.check_capacity(sk.public_key.n, N)
    sums = total.codec.decode_offset_sum([sk.raw_decrypt(v) for v in total.values], N)
    return sums / N


def secure_aggregate(updates: list[EncryptedUpdate], sk: SecretKey, codec: FixedPointCodec, N: int) -> np.ndarray:
    """Average of ``N`` encrypted updates with a single decryption per coordinate."""
    if not updates:
        raise ParameterError("nothing to aggregate")
    if N != len(updates):
        raise ParameterError(f"N={N} but {len(updates)} updates given")
    if updates[0].codec != codec:
        raise AggregationError("codec does not match the updates")
    try:
        codec.check_capacity(sk.public_key.n, N)
    except RangeError as exc:
        raise AggregationError(str(exc)) from None
    return decrypt_average(sk, sum_encrypted(updates), N)


class KeyAuthority:
    """Trusted decryptor. Devices and the aggregator only ever see ``public_key``."""

    def __init__(self, key_bits: int, stream: RandomStream):
        self._keys = keygen(key_bits, stream)
        self.decryptions = 0

    @property
    def public_key(self) -> PublicKey:
        return self._keys.public_key

    def decrypt_average(self, total: EncryptedUpdate, N: int) -> np.ndarray:
        self.decryptions += total.length
        return decrypt_average(self._keys.secret_key, total, N)


# wire form: magic, version, scale_bits, bound, key fingerprint, width, count, then
# count big-endian residues of exactly `width` bytes
_MAGIC = b"PHEU"
_VERSION = 1
_HEADER = struct.Struct(">4sBBd8sHI")
WIRE_HEADER_BYTES = _HEADER.size


def wire_size(length: int, key_bits: int) -> int:
    width = (2 * key_bits + 7) // 8
    return WIRE_HEADER_BYTES + length * width


def serialize_update(update: EncryptedUpdate) -> bytes:
    pk = update.public_key
    width = pk.ciphertext_bytes
    head = _HEADER.pack(_MAGIC, _VERSION, update.codec.scale_bits, update.codec.bound,
                        bytes.fromhex(pk.fingerprint), width, update.length)
    return head + b"".join(v.to_bytes(width, "big") for v in update.values)


def deserialize_update(data: bytes, pk: PublicKey) -> EncryptedUpdate:
    magic, version, scale_bits, bound, fp, width, count = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ParameterError("not an encrypted-update message")
    if fp.hex() != pk.fingerprint:
        raise KeyMismatchError("message was encrypted under a different key")
    if len(data) != WIRE_HEADER_BYTES + count * width:
        raise ParameterError("truncated encrypted-update message")
    off = WIRE_HEADER_BYTES
    values = [int.from_bytes(data[off + i * width:off + (i + 1) * width], "big") for i in range(count)]
    return EncryptedUpdate(values, pk, FixedPointCodec(scale_bits, bound))


def modexp_mults(exp_bits: int) -> int:
    """Expected modular multiplications of square-and-multiply for an exponent size."""
    return exp_bits + (exp_bits + 1) // 2


def encrypt_mults(key_bits: int) -> int:
    return modexp_mults(key_bits) + 2


def decrypt_mults(key_bits: int) -> int:
    # two CRT exponentiations at half width, in full-width multiply equivalents
    return modexp_mults(key_bits // 2) + 4
