import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdo.encoding import EncodingError, decode, encode

scalars = st.none() | st.booleans() | st.integers() | st.binary(max_size=20) | st.text(max_size=20)
values = st.recursive(
    scalars,
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


def _normal(v):
    """What decode returns for v: tuples become lists."""
    if isinstance(v, (list, tuple)):
        return [_normal(x) for x in v]
    if isinstance(v, dict):
        return {k: _normal(x) for k, x in v.items()}
    return v


@given(values)
def test_round_trip(v):
    data = encode(v)
    assert decode(data) == _normal(v)
    assert encode(decode(data)) == data


def _strict_eq(a, b):
    """Equality that, unlike ==, keeps True apart from 1."""
    if type(a) is not type(b) and not (isinstance(a, (list, tuple)) and isinstance(b, (list, tuple))):
        return False
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_strict_eq(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_strict_eq(a[k], b[k]) for k in a)
    return a == b


@given(values, values)
def test_equal_encodings_iff_equal_values(a, b):
    assert (encode(a) == encode(b)) == _strict_eq(a, b)


@given(values)
def test_encoding_is_stable_under_copy(v):
    assert encode(v) == encode(decode(encode(v)))


def test_booleans_and_integers_are_distinct():
    assert encode(True) != encode(1)
    assert encode(False) != encode(0)
    assert encode([True]) != encode([1])


def test_map_keys_are_sorted():
    assert encode({"b": 1, "a": 2}) == encode({"a": 2, "b": 1})


def test_zero_and_negative_integers():
    for n in (0, -1, 1, 255, 256, -(2**70), 2**70):
        assert decode(encode(n)) == n


@pytest.mark.parametrize("data", [
    b"",                                            # nothing
    b"x",                                           # unknown tag
    encode(1) + b"\x00",                            # trailing bytes
    b"i+\x00\x00\x00\x02\x00\x01",                  # non-minimal integer
    b"i-\x00\x00\x00\x00",                          # negative zero
    b"i*\x00\x00\x00\x01\x01",                      # bad sign
    b"s\x00\x00\x00\x05abc",                        # truncated
    b"s\x00\x00\x00\x02\xff\xfe",                   # invalid utf-8
    b"m\x00\x00\x00\x02" + encode("b") + encode(1) + encode("a") + encode(2),   # unsorted keys
    b"m\x00\x00\x00\x02" + encode("a") + encode(1) + encode("a") + encode(2),   # duplicate keys
    b"m\x00\x00\x00\x01" + encode(1) + encode(1),   # non-string key
])
def test_non_canonical_input_is_rejected(data):
    with pytest.raises(EncodingError):
        decode(data)


def test_unencodable_values():
    with pytest.raises(EncodingError):
        encode(1.5)
    with pytest.raises(EncodingError):
        encode({1: "x"})
