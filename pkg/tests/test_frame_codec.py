import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src import config
from src.frame_codec import (
    CodingViolation,
    CrcMismatch,
    Frame,
    FrameError,
    Level,
    NoSfd,
    OokTimeline,
    build_frame_section,
    build_preamble,
    build_transmission,
    crc8,
    decode_frame_bits,
    deserialize_body,
    dm_decode,
    dm_encode,
    or_superpose,
    parse_transmission,
    serialize_body,
)

PAYLOAD = bytes([0x10, 0x20, 0x30, 0x40, 0x50, 0x60])


def test_crc8_check_value():
    assert crc8(b"123456789") == 0xF4
    assert crc8(b"") == 0


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=7, max_size=7), st.integers(min_value=0, max_value=55))
def test_crc8_detects_single_bit_flips(data, bit):
    flipped = bytearray(data)
    flipped[bit // 8] ^= 0x80 >> (bit % 8)
    assert crc8(data) != crc8(bytes(flipped))


def test_frame_build_computes_crc_over_dest_and_payload():
    frame = Frame.build(3, 0x01, PAYLOAD)
    assert frame.crc == crc8(bytes([0x01]) + PAYLOAD)
    assert not frame.is_broadcast
    assert Frame.build(1, config.BROADCAST_ADDRESS, PAYLOAD).is_broadcast


def test_frame_build_rejects_bad_fields():
    with pytest.raises(FrameError):
        Frame.build(1, 0x01, b"\x00" * 5)
    with pytest.raises(FrameError):
        Frame.build(0, 0x01, PAYLOAD)
    with pytest.raises(FrameError):
        Frame.build(10, 0x01, PAYLOAD, n_priority=9)
    assert Frame.build(10, 0x01, PAYLOAD, n_priority=10).priority == 10


def test_body_is_64_bits_msb_first():
    bits = serialize_body(Frame.build(1, 0x80, PAYLOAD))
    assert len(bits) == config.BODY_BITS
    assert bits[:8] == (1, 0, 0, 0, 0, 0, 0, 0)


def test_deserialize_body_rejects_corrupted_bits():
    bits = list(serialize_body(Frame.build(2, 0x05, PAYLOAD)))
    assert deserialize_body(bits, priority=2) == Frame.build(2, 0x05, PAYLOAD)
    bits[12] ^= 1
    with pytest.raises(CrcMismatch):
        deserialize_body(bits)


def test_dm_encode_transitions():
    # bit 1 keeps the level at bit start, bit 0 flips it; mid-bit always flips
    one = dm_encode([1], Level.OFF)
    zero = dm_encode([0], Level.OFF)
    assert one.segments == ((Level.OFF, config.SYMBOL_NS), (Level.ON, config.SYMBOL_NS))
    assert zero.segments == ((Level.ON, config.SYMBOL_NS), (Level.OFF, config.SYMBOL_NS))
    assert dm_encode([1, 0, 1, 1, 0]).duration_ns == 5 * config.BIT_NS


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=64))
def test_dm_decode_recovers_bits(bits):
    assert dm_decode(dm_encode(bits)) == tuple(bits)


def test_dm_decode_tolerates_small_timing_error():
    bits = [1, 0, 0, 1, 1, 0]
    assert dm_decode(dm_encode(bits).scaled(1.05)) == tuple(bits)


def test_dm_decode_flags_off_grid_and_missing_transition():
    off_grid = OokTimeline.from_segments([(Level.OFF, 7_500), (Level.ON, 2_500)])
    with pytest.raises(CodingViolation):
        dm_decode(off_grid)
    flat = OokTimeline.from_segments([(Level.ON, config.BIT_NS), (Level.OFF, config.BIT_NS)])
    with pytest.raises(CodingViolation) as exc:
        dm_decode(flat)
    assert exc.value.bit_offset == 0


def test_transmission_durations():
    frame = Frame.build(4, 0x02, PAYLOAD)
    assert build_frame_section(frame).duration_ns == config.FRAME_NS == 840_000
    assert build_preamble(4).duration_ns == 4 * config.CELL_NS
    assert build_transmission(frame).duration_ns == 4 * config.CELL_NS + config.FRAME_NS


@pytest.mark.parametrize("priority", [1, 3, 9])
def test_parse_transmission_recovers_priority_and_frame(priority):
    frame = Frame.build(priority, 0x07, PAYLOAD)
    parsed_priority, parsed = parse_transmission(build_transmission(frame))
    assert parsed_priority == priority
    assert parsed == frame


def test_parse_transmission_needs_a_preamble():
    frame = Frame.build(1, 0x07, PAYLOAD)
    with pytest.raises(NoSfd):
        parse_transmission(build_frame_section(frame))
    with pytest.raises(NoSfd):
        parse_transmission(OokTimeline())


def test_decode_frame_bits_locks_on_trailing_delimiter_cells():
    frame = Frame.build(2, 0x03, PAYLOAD)
    section = build_frame_section(frame)
    # a neighbour's carrier fills the first two delimiter cells
    masked = or_superpose(
        [(0, section), (0, OokTimeline.from_segments([(Level.ON, 2 * config.CELL_NS)]))], 0, section.duration_ns
    )
    assert decode_frame_bits(masked, lock_cells=3) == serialize_body(frame)
    with pytest.raises(NoSfd):
        decode_frame_bits(masked, lock_cells=config.SFD_CELLS)


def test_or_superpose_merges_on_intervals():
    a = OokTimeline.from_segments([(Level.ON, 10), (Level.OFF, 10), (Level.ON, 10)])
    b = OokTimeline.from_segments([(Level.OFF, 5), (Level.ON, 10)])
    merged = or_superpose([(0, a), (100, b), (5, b)], 0, 40)
    assert list(merged.on_intervals()) == [(0, 30)]
    assert merged.duration_ns == 40


def test_timeline_slice_and_coalesce():
    t = OokTimeline.from_segments([(Level.ON, 10), (Level.ON, 5), (Level.OFF, 0), (Level.OFF, 5)])
    assert t.segments == ((Level.ON, 15), (Level.OFF, 5))
    assert t.slice(10, 18).segments == ((Level.ON, 5), (Level.OFF, 3))
    assert t.dump() == "1,15\n0,5\n"


def _random_frames(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for i in range(count):
        payload = rng.integers(0, 256, size=config.PAYLOAD_OCTETS, dtype=np.uint8).tobytes()
        yield Frame.build(i % config.N_PRIORITY + 1, int(rng.integers(0, 256)), payload)


def test_randomised_frames_survive_build_and_parse():
    for frame in _random_frames(10_000, seed=0):
        assert parse_transmission(build_transmission(frame)) == (frame.priority, frame)


def test_crc_catches_every_burst_up_to_eight_bits():
    body = serialize_body(Frame.build(5, 0x2A, PAYLOAD))
    for length in range(1, 9):
        inner = max(0, length - 2)
        for start in range(config.BODY_BITS - length + 1):
            for pattern in range(1 << inner):
                bits = list(body)
                bits[start] ^= 1
                if length > 1:
                    bits[start + length - 1] ^= 1
                for j in range(inner):
                    if pattern >> j & 1:
                        bits[start + 1 + j] ^= 1
                with pytest.raises(CrcMismatch):
                    deserialize_body(bits)


def test_thirty_bit_bursts_are_rejected_on_air():
    rng = np.random.default_rng(1)
    missed = 0
    for frame in _random_frames(10_000, seed=2):
        bits = list(serialize_body(frame))
        start = int(rng.integers(0, config.BODY_BITS - 30 + 1))
        for i in range(start, start + 30):
            bits[i] ^= 1
        timeline = build_preamble(frame.priority) + build_preamble(config.SFD_CELLS) + dm_encode(bits)
        try:
            parse_transmission(timeline)
        except CrcMismatch:
            continue
        missed += 1
    assert missed <= 1


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(min_value=0, max_value=1), max_size=64),
    st.sampled_from([Level.OFF, Level.ON]),
)
def test_dm_round_trip_from_either_start_level(bits, level):
    assert dm_decode(dm_encode(bits, level), initial_level=level) == tuple(bits)


def test_transmission_grows_one_cell_per_priority_level():
    frames = [Frame.build(p, 0x01, PAYLOAD) for p in range(1, config.N_PRIORITY + 1)]
    durations = [build_transmission(f).duration_ns for f in frames]
    assert [b - a for a, b in zip(durations, durations[1:])] == [config.CELL_NS] * (config.N_PRIORITY - 1)
    assert durations[0] == 860_000
    assert durations[4] == 940_000
    longer = build_transmission(frames[1])
    assert longer.slice(config.CELL_NS, longer.duration_ns).segments == build_transmission(frames[0]).segments
