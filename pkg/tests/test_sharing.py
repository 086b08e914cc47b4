import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chi2_contingency, chisquare

from fliot import sharing as ss
from fliot.core import FixedPointCodec, RandomStream
from fliot.errors import AggregationError, ParameterError, RangeError

CODEC = FixedPointCodec(16, 8.0)
P = ss.DEFAULT_PRIME


def test_default_prime_is_smallest_above_2_64():
    assert P == sympy.nextprime(2**64)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-8, 8)), st.integers(2, 5), st.integers(0, 999))
@settings(max_examples=40)
def test_shares_sum_to_encoding(u, n, seed):
    sh = ss.make_shares(u, n, P, CODEC, RandomStream(seed))
    assert sh.n_aggregators == n and sh.dimension == u.size
    total = [sum(col) % P for col in zip(*sh.shares)]
    assert total == CODEC.encode_offset(u)
    assert all(0 <= v < P for vec in sh.shares for v in vec)


def test_zero_update_three_shares():
    sh = ss.make_shares(np.zeros(4), 3, P, CODEC, RandomStream(1))
    assert [sum(col) % P for col in zip(*sh.shares)] == [CODEC.offset] * 4
    assert ss.reconstruct(sh.shares, P, CODEC, 1).tolist() == [0.0] * 4


def test_make_shares_errors():
    with pytest.raises(ParameterError):
        ss.make_shares(np.zeros(2), 1, P, CODEC, RandomStream(0))
    with pytest.raises(RangeError):
        ss.make_shares(np.ones(2), 2, 101, CODEC, RandomStream(0))


def _marginals(update, n_trials, p, codec, which, seed):
    s = RandomStream(seed)
    return np.array([ss.make_shares(update, 3, p, codec, s).shares[which][0] for _ in range(n_trials)])


@pytest.mark.parametrize("which", [0, 2])
def test_single_share_uniform_mod_small_p(which):
    p, codec = 101, FixedPointCodec(2, 1.0)
    vals = _marginals(np.array([0.75]), 10**4, p, codec, which, seed=which)
    counts = np.bincount(vals, minlength=p)
    assert chisquare(counts).pvalue > 0.01


def test_share_marginal_independent_of_update():
    # any strict subset of shares looks the same for two different updates
    p, codec = 101, FixedPointCodec(2, 1.0)
    a = np.bincount(_marginals(np.array([-1.0]), 10**4, p, codec, 1, seed=3), minlength=p)
    b = np.bincount(_marginals(np.array([1.0]), 10**4, p, codec, 1, seed=4), minlength=p)
    assert chi2_contingency(np.stack([a, b])).pvalue > 0.01


def test_one_device_subtotals_are_its_shares():
    sh = ss.make_shares(np.array([0.5, -1.0]), 2, P, CODEC, RandomStream(2))
    assert ss.aggregate_shares(ss.distribute([sh]), P) == sh.shares


def test_subtotals_sum_to_encoded_sum_and_are_order_free(rng):
    raw = rng.uniform(-3, 3, size=(10, 6))
    s = RandomStream(3)
    sets = [ss.make_shares(r, 3, P, CODEC, s, owner=i) for i, r in enumerate(raw)]
    subs = ss.aggregate_shares(ss.distribute(sets), P)
    expected = [sum(col) % P for col in zip(*[CODEC.encode_offset(r) for r in raw])]
    assert ss.combine_subtotals(subs, P) == expected
    shuffled = ss.aggregate_shares(ss.distribute(sets[::-1]), P)
    assert ss.combine_subtotals(shuffled, P) == expected


def test_reconstruct_mean(rng):
    raw = rng.uniform(-2, 2, size=(20, 25))
    s = RandomStream(4)
    sets = [ss.make_shares(r, 2, P, CODEC, s) for r in raw]
    got = ss.reconstruct(ss.aggregate_shares(ss.distribute(sets), P), P, CODEC, 20)
    assert np.max(np.abs(got - raw.mean(axis=0))) <= 2 * 2.0**-16
    one = ss.reconstruct(sets[0].shares, P, CODEC, 1)
    assert np.max(np.abs(one - raw[0])) <= 2.0**-16


def test_all_zero_updates_reconstruct_zero():
    s = RandomStream(5)
    sets = [ss.make_shares(np.zeros(3), 2, P, CODEC, s) for _ in range(4)]
    assert ss.reconstruct(ss.aggregate_shares(ss.distribute(sets), P), P, CODEC, 4).tolist() == [0.0] * 3


def test_dimension_mismatch():
    s = RandomStream(6)
    a = ss.make_shares(np.zeros(3), 2, P, CODEC, s)
    b = ss.make_shares(np.zeros(4), 2, P, CODEC, s)
    with pytest.raises(AggregationError):
        ss.aggregate_shares(ss.distribute([a, b]), P)
    c = ss.make_shares(np.zeros(3), 3, P, CODEC, s)
    with pytest.raises(AggregationError):
        ss.distribute([a, c])


def test_reconstruct_capacity_guard():
    with pytest.raises(AggregationError):
        ss.reconstruct([[0], [0]], 1 << 20, CODEC, 100)


def test_share_wire_roundtrip():
    sh = ss.make_shares(np.linspace(-1, 1, 9), 2, P, CODEC, RandomStream(7))
    blob = ss.serialize_share(sh.shares[0])
    assert len(blob) == ss.share_wire_size(9) == 4 + 16 * 9
    assert ss.deserialize_share(blob) == sh.shares[0]
    with pytest.raises(ParameterError):
        ss.deserialize_share(blob[:-3])
