import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnscan.errors import FramingError, InvalidInputError
from pnscan.framing import (
    bit_stuff, bit_unstuff, bits_to_int, build_frame, crc15, header_bits,
    int_to_bits, stuffed_field_labels,
)

from canref import crc_by_division, destuff, parse_frame

bitlists = st.lists(st.integers(0, 1), max_size=120)


def test_five_zeros_get_a_stuff_bit():
    assert bit_stuff([0, 0, 0, 0, 0]) == [0, 0, 0, 0, 0, 1]


def test_alternating_bits_are_left_alone():
    bits = [0, 1] * 20
    assert bit_stuff(bits) == bits


def test_stuff_bit_starts_a_new_run():
    # the inserted 1 counts towards the next run of ones
    assert bit_stuff([0] * 5 + [1] * 4) == [0] * 5 + [1] + [1] * 4 + [0]


@given(bitlists)
def test_stuff_round_trip(bits):
    assert bit_unstuff(bit_stuff(bits)) == bits


@given(bitlists)
def test_stuffing_agrees_with_reference(bits):
    stuffed = bit_stuff(bits)
    assert destuff(stuffed)[0] == bits


def test_ten_thousand_random_streams_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        bits = rng.integers(0, 2, rng.integers(1, 100)).tolist()
        assert bit_unstuff(bit_stuff(bits)) == bits


def test_six_equal_bits_raise():
    with pytest.raises(FramingError):
        bit_unstuff([1] * 6)


@given(bitlists)
def test_crc_matches_polynomial_division(bits):
    assert crc15(bits) == crc_by_division(bits)


def test_int_bit_conversions():
    assert int_to_bits(0x7AA, 11) == [1, 1, 1, 1, 0, 1, 0, 1, 0, 1, 0]
    assert bits_to_int(int_to_bits(1234, 11)) == 1234


def test_header_layout():
    head = header_bits(0x7AA, 8)
    assert len(head) == 19
    assert head[0] == 0 and head[12:15] == [0, 0, 0]
    with pytest.raises(InvalidInputError):
        header_bits(2**11, 0)
    with pytest.raises(InvalidInputError):
        header_bits(1, 9)


@settings(max_examples=60)
@given(st.integers(0, 2**11 - 1), st.integers(0, 8).flatmap(
    lambda n: st.lists(st.integers(0, 1), min_size=8 * n, max_size=8 * n)))
def test_frames_decode_with_the_reference(identifier, payload):
    frame = build_frame(identifier, payload)
    parsed = parse_frame(frame.stuffed_stream)
    assert parsed["identifier"] == identifier
    assert parsed["payload"] == payload
    assert parsed["crc_ok"] and parsed["crc"] == frame.crc15
    assert len(frame.wire_bits) == len(frame.stuffed_stream) + 13


def test_field_labels_cover_the_stream():
    frame = build_frame(0x123, [1, 0] * 16)
    labels = stuffed_field_labels(frame.stuffed_stream)
    assert len(labels) == len(frame.stuffed_stream)
    assert labels[0] == "sof"
    assert labels.count("payload") == 32
