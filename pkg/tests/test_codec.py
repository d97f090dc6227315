import pytest
from hypothesis import given
from hypothesis import strategies as st

from robochain.codec import DecodeError, Reader, decode_value, encode_value, u32

values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63 - 1)
    | st.floats(allow_nan=False) | st.text() | st.binary(),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=20,
)


def normalize(v):
    if isinstance(v, tuple):
        v = list(v)
    if isinstance(v, list):
        return [normalize(x) for x in v]
    if isinstance(v, dict):
        return {k: normalize(x) for k, x in v.items()}
    if isinstance(v, float) and v == 0:
        return 0.0
    return v


@given(values)
def test_value_round_trip(value):
    assert decode_value(encode_value(value)) == normalize(value)


@given(st.dictionaries(st.text(max_size=6), st.integers(-(2**63), 2**63 - 1), max_size=6))
def test_mapping_encoding_ignores_insertion_order(d):
    reversed_d = dict(reversed(list(d.items())))
    assert encode_value(d) == encode_value(reversed_d)


def test_bool_and_int_are_distinct():
    assert encode_value(True) != encode_value(1)
    assert decode_value(encode_value(False)) is False


def test_integers_are_big_endian():
    assert encode_value(1) == b"i" + bytes(7) + b"\x01"
    assert u32(258) == b"\x00\x00\x01\x02"


def test_unsorted_mapping_bytes_rejected():
    good = encode_value({"a": 1, "b": 2})
    swapped = good.replace(b"\x00\x00\x00\x01a", b"\x00\x00\x00\x01c")
    with pytest.raises(DecodeError):
        decode_value(swapped)


def test_reader_reports_absolute_offset():
    r = Reader(b"\x00\x00\x00\x09abc", base=100)
    with pytest.raises(DecodeError) as err:
        r.blob()
    assert err.value.offset == 104


def test_unencodable_type():
    with pytest.raises(TypeError):
        encode_value(object())
