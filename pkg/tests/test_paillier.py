import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from fliot import paillier as he
from fliot.core import FixedPointCodec, RandomStream
from fliot.errors import AggregationError, KeyMismatchError, ParameterError, RangeError

CODEC = FixedPointCodec(16, 8.0)


@pytest.fixture(scope="module")
def keys():
    return he.keygen(512, RandomStream(77, 1))


@pytest.fixture(scope="module")
def other_keys():
    return he.keygen(256, RandomStream(78, 1))


def test_primality_matches_sympy():
    s = RandomStream(3)
    for n in list(range(2, 3000)) + [s.randbits(80) | 1 for _ in range(200)]:
        assert he.is_probable_prime(n, s) == sympy.isprime(n), n
    # Carmichael numbers and a strong pseudoprime to several small bases
    for n in (561, 1105, 1729, 2465, 2821, 6601, 3215031751):
        assert not he.is_probable_prime(n, s)


def test_random_prime_size(stream):
    p = he.random_prime(128, stream)
    assert p.bit_length() == 128 and sympy.isprime(p)


def test_keygen_deterministic_and_sized(keys):
    again = he.keygen(512, RandomStream(77, 1))
    assert again.public_key.n == keys.public_key.n
    assert keys.public_key.n.bit_length() == 512
    sk = keys.secret_key
    assert sympy.isprime(sk.p) and sympy.isprime(sk.q)


def test_keygen_floor():
    with pytest.raises(ParameterError):
        he.keygen(128, RandomStream(0))


def test_small_plaintexts(keys):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(1)
    for m in (0, 1, 42, pk.n - 1):
        assert he.decrypt(sk, he.encrypt(pk, m, s)) == m


def test_plaintext_range(keys):
    with pytest.raises(RangeError):
        he.encrypt(keys.public_key, keys.public_key.n, RandomStream(0))
    with pytest.raises(RangeError):
        he.encrypt(keys.public_key, -1, RandomStream(0))


def test_encryption_is_randomized(keys):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(2)
    cts = {he.encrypt(pk, 5, s).value for _ in range(10**4)}
    assert len(cts) == 10**4
    a, b = he.encrypt(pk, 9, s), he.encrypt(pk, 9, s)
    assert a.value != b.value and he.decrypt(sk, a) == he.decrypt(sk, b) == 9


def test_hom_add_cases(keys):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(3)
    c3, c4, c0 = he.encrypt(pk, 3, s), he.encrypt(pk, 4, s), he.encrypt(pk, 0, s)
    assert he.decrypt(sk, he.hom_add(c3, c4)) == 7
    assert he.decrypt(sk, he.hom_add(c3, c0)) == 3
    assert he.decrypt(sk, he.hom_add(c4, c3)) == he.decrypt(sk, he.hom_add(c3, c4))


def test_fold_of_fifty_is_modular_sum(keys):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(4)
    ms = [s.randbelow(pk.n) for _ in range(50)]
    acc = he.encrypt(pk, ms[0], s)
    for m in ms[1:]:
        acc = he.hom_add(acc, he.encrypt(pk, m, s))
    assert he.decrypt(sk, acc) == sum(ms) % pk.n


def test_key_mismatch(keys, other_keys):
    c = he.encrypt(other_keys.public_key, 5, RandomStream(0))
    with pytest.raises(KeyMismatchError):
        he.decrypt(keys.secret_key, c)
    with pytest.raises(KeyMismatchError):
        he.hom_add(c, he.encrypt(keys.public_key, 1, RandomStream(0)))


def test_encrypt_update_roundtrip(keys, rng):
    pk, sk = keys.public_key, keys.secret_key
    u = rng.uniform(-8, 8, size=40)
    enc = he.encrypt_update(pk, u, CODEC, RandomStream(5))
    assert enc.length == 40 and len(enc.ciphertexts) == 40
    assert np.max(np.abs(he.decrypt_average(sk, enc, 1) - u)) <= 2.0**-16
    zero = he.encrypt_update(pk, np.zeros(5), CODEC, RandomStream(6))
    assert np.array_equal(he.decrypt_average(sk, zero, 1), np.zeros(5))


def test_secure_aggregate_hand_mean(keys):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(6)
    ups = [he.encrypt_update(pk, np.array(v), CODEC, s) for v in ([1.0, 3.0], [3.0, 5.0])]
    assert np.allclose(he.secure_aggregate(ups, sk, CODEC, 2), [2.0, 4.0], rtol=0, atol=2.0**-15)


def test_secure_aggregate_matches_plaintext_mean(keys, rng):
    pk, sk = keys.public_key, keys.secret_key
    s = RandomStream(7)
    raw = rng.uniform(-2, 2, size=(20, 30))
    ups = [he.encrypt_update(pk, r, CODEC, s) for r in raw]
    got = he.secure_aggregate(ups, sk, CODEC, 20)
    assert np.max(np.abs(got - raw.mean(axis=0))) <= 2 * 2.0**-16


def test_secure_aggregate_errors(keys, other_keys):
    s = RandomStream(8)
    a = he.encrypt_update(keys.public_key, np.zeros(3), CODEC, s)
    b = he.encrypt_update(keys.public_key, np.zeros(4), CODEC, s)
    c = he.encrypt_update(other_keys.public_key, np.zeros(3), CODEC, s)
    with pytest.raises(AggregationError):
        he.secure_aggregate([a, b], keys.secret_key, CODEC, 2)
    with pytest.raises(AggregationError):
        he.secure_aggregate([a, c], keys.secret_key, CODEC, 2)
    with pytest.raises(ParameterError):
        he.secure_aggregate([], keys.secret_key, CODEC, 0)
    with pytest.raises(ParameterError):
        he.secure_aggregate([a], keys.secret_key, CODEC, 2)


def test_capacity_guard(other_keys):
    # 256-bit modulus cannot hold a sum of 2^200 offset encodings at 40 scale bits
    wide = FixedPointCodec(40, 2.0**30)
    with pytest.raises(RangeError):
        wide.check_capacity(other_keys.public_key.n, 1 << 200)


def test_key_authority_hides_secret(keys):
    auth = he.KeyAuthority(256, RandomStream(9))
    enc = he.encrypt_update(auth.public_key, np.array([0.5, -0.25]), CODEC, RandomStream(1))
    assert np.allclose(auth.decrypt_average(enc, 1), [0.5, -0.25], atol=2.0**-16)
    assert auth.decryptions == 2
    assert not hasattr(auth, "secret_key")


def test_wire_roundtrip_and_size(keys):
    pk = keys.public_key
    enc = he.encrypt_update(pk, np.linspace(-1, 1, 7), CODEC, RandomStream(2))
    blob = he.serialize_update(enc)
    assert len(blob) == he.wire_size(7, 512) == 28 + 7 * 128
    back = he.deserialize_update(blob, pk)
    assert back.values == enc.values and back.codec == CODEC
    with pytest.raises(ParameterError):
        he.deserialize_update(blob[:-1], pk)


@given(st.lists(st.integers(0, 2**40), min_size=1, max_size=8))
@settings(max_examples=25, deadline=None)
def test_homomorphism_property(ms):
    kp = _small_keys()
    s = RandomStream(len(ms))
    total = he.encrypt(kp.public_key, ms[0], s)
    for m in ms[1:]:
        total = he.hom_add(total, he.encrypt(kp.public_key, m, s))
    assert he.decrypt(kp.secret_key, total) == sum(ms)


_CACHE = {}


def _small_keys():
    if "k" not in _CACHE:
        _CACHE["k"] = he.keygen(256, RandomStream(500))
    return _CACHE["k"]
