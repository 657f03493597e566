"""Bit-exact SEth framing: CRC-8, body serialization, differential Manchester
line coding over OOK, priority preamble and start-of-frame delimiter.

All functions are pure. Durations are integer nanoseconds.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, List, Sequence, Tuple

from . import config

Bitstream = Tuple[int, ...]


class Level(IntEnum):
    OFF = 0
    ON = 1

    def flipped(self) -> "Level":
        return Level.ON if self is Level.OFF else Level.OFF


class FrameCodecError(ValueError):
    pass


class FrameError(FrameCodecError):
    pass


class NoSfd(FrameCodecError):
    pass


class CodingViolation(FrameCodecError):
    def __init__(self, message: str, bit_offset: int) -> None:
        super().__init__(f"{message} (bit {bit_offset})")
        self.bit_offset = bit_offset


class CrcMismatch(FrameCodecError):
    pass


def _crc8_table(poly: int) -> Tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return tuple(table)


_CRC8_TABLE = _crc8_table(config.CRC8_POLY)


def crc8(data: Iterable[int]) -> int:
    """CRC-8, polynomial 0x07, init 0x00, MSB-first, no final XOR."""
    crc = 0
    for byte in data:
        crc = _CRC8_TABLE[crc ^ (byte & 0xFF)]
    return crc


@dataclass(frozen=True)
class Frame:
    priority: int
    dest: int
    payload: bytes
    crc: int

    @classmethod
    def build(
        cls, priority: int, dest: int, payload: bytes, n_priority: int = config.N_PRIORITY
    ) -> "Frame":
        payload = bytes(payload)
        frame = cls(priority=priority, dest=dest, payload=payload, crc=crc8(bytes([dest & 0xFF]) + payload))
        frame.validate(n_priority)
        return frame

    def validate(self, n_priority: int = config.N_PRIORITY) -> None:
        if len(self.payload) != config.PAYLOAD_OCTETS:
            raise FrameError(f"payload must be {config.PAYLOAD_OCTETS} octets, got {len(self.payload)}")
        if not 1 <= self.priority <= n_priority:
            raise FrameError(f"priority {self.priority} outside [1, {n_priority}]")
        if not 0 <= self.dest <= 0xFF:
            raise FrameError(f"dest {self.dest} is not an 8-bit address")
        if not 0 <= self.crc <= 0xFF:
            raise FrameError(f"crc {self.crc} is not an 8-bit value")

    @property
    def is_broadcast(self) -> bool:
        return self.dest == config.BROADCAST_ADDRESS


@dataclass(frozen=True)
class OokTimeline:
    segments: Tuple[Tuple[Level, int], ...] = ()

    @classmethod
    def from_segments(cls, segments: Iterable[Tuple[int, int]]) -> "OokTimeline":
        """Coalesce adjacent equal levels and drop empty segments."""
        out: List[Tuple[Level, int]] = []
        for level, duration in segments:
            if duration < 0:
                raise FrameCodecError(f"negative segment duration {duration}")
            if duration == 0:
                continue
            level = Level(level)
            if out and out[-1][0] == level:
                out[-1] = (level, out[-1][1] + int(duration))
            else:
                out.append((level, int(duration)))
        return cls(tuple(out))

    @property
    def duration_ns(self) -> int:
        return sum(d for _, d in self.segments)

    def __add__(self, other: "OokTimeline") -> "OokTimeline":
        return OokTimeline.from_segments(self.segments + other.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def on_intervals(self, start_ns: int = 0) -> Iterator[Tuple[int, int]]:
        t = start_ns
        for level, duration in self.segments:
            if level is Level.ON:
                yield t, t + duration
            t += duration

    def slice(self, start_ns: int, end_ns: int) -> "OokTimeline":
        out: List[Tuple[Level, int]] = []
        t = 0
        for level, duration in self.segments:
            a, b = max(t, start_ns), min(t + duration, end_ns)
            if b > a:
                out.append((level, b - a))
            t += duration
        return OokTimeline.from_segments(out)

    def scaled(self, factor: float) -> "OokTimeline":
        return OokTimeline.from_segments((lvl, int(round(d * factor))) for lvl, d in self.segments)

    def dump(self) -> str:
        return "".join(f"{int(level)},{duration}\n" for level, duration in self.segments)


def _cells(count: int) -> OokTimeline:
    half = config.CELL_NS // 2
    return OokTimeline.from_segments([(Level.ON, half), (Level.OFF, half)] * count)


def serialize_body(frame: Frame) -> Bitstream:
    bits: List[int] = []
    for octet in (frame.dest, *frame.payload, frame.crc):
        bits.extend((octet >> (7 - i)) & 1 for i in range(8))
    return tuple(bits)


def deserialize_body(bits: Sequence[int], priority: int = 1) -> Frame:
    """Rebuild a frame from a 64-bit body; raises CrcMismatch on a bad checksum."""
    if len(bits) != config.BODY_BITS:
        raise FrameCodecError(f"body must be {config.BODY_BITS} bits, got {len(bits)}")
    octets = []
    for i in range(0, config.BODY_BITS, 8):
        value = 0
        for bit in bits[i : i + 8]:
            value = (value << 1) | (bit & 1)
        octets.append(value)
    dest, payload, crc = octets[0], bytes(octets[1:7]), octets[7]
    expected = crc8(bytes([dest]) + payload)
    if crc != expected:
        raise CrcMismatch(f"crc 0x{crc:02X} != 0x{expected:02X}")
    return Frame(priority=priority, dest=dest, payload=payload, crc=crc)


def dm_encode(bits: Sequence[int], initial_level: Level = Level.OFF) -> OokTimeline:
    """Differential Manchester: mid-bit transition always, extra start transition for 0."""
    level = Level(initial_level)
    halves: List[Tuple[Level, int]] = []
    for bit in bits:
        if not bit:
            level = level.flipped()
        halves.append((level, config.SYMBOL_NS))
        level = level.flipped()
        halves.append((level, config.SYMBOL_NS))
    return OokTimeline.from_segments(halves)


def _half_bits(timeline: OokTimeline, jitter_tolerance: float, bit_base: int = 0) -> List[Level]:
    if not 0.0 <= jitter_tolerance < 0.5:
        raise FrameCodecError("jitter_tolerance must be in [0, 0.5)")
    halves: List[Level] = []
    for level, duration in timeline.segments:
        count = int(round(duration / config.SYMBOL_NS))
        slack = jitter_tolerance * config.SYMBOL_NS * max(count, 1)
        if count == 0 or abs(duration - count * config.SYMBOL_NS) > slack:
            raise CodingViolation("segment off the symbol grid", bit_base + len(halves) // 2)
        halves.extend([level] * count)
    return halves


def _decode_halves(halves: Sequence[Level], initial_level: Level, bit_base: int = 0) -> Bitstream:
    if len(halves) % 2:
        raise CodingViolation("odd number of half-bit symbols", bit_base + len(halves) // 2)
    bits: List[int] = []
    previous = Level(initial_level)
    for i in range(0, len(halves), 2):
        first, second = halves[i], halves[i + 1]
        if first == second:
            raise CodingViolation("missing mid-bit transition", bit_base + i // 2)
        bits.append(1 if first == previous else 0)
        previous = second
    return tuple(bits)


def dm_decode(
    timeline: OokTimeline,
    jitter_tolerance: float = config.JITTER_TOLERANCE,
    initial_level: Level = Level.OFF,
) -> Bitstream:
    """Recover bits from a differential Manchester timeline.

    The bit clock comes from the mid-bit transitions; each segment is snapped to
    a whole number of 5 us symbols within ``jitter_tolerance``.
    """
    return _decode_halves(_half_bits(timeline, jitter_tolerance), initial_level)


def build_frame_section(frame: Frame) -> OokTimeline:
    """SFD and coded body: exactly 840 us on air."""
    return _cells(config.SFD_CELLS) + dm_encode(serialize_body(frame), Level.OFF)


def build_preamble(priority: int) -> OokTimeline:
    return _cells(priority)


def build_transmission(frame: Frame) -> OokTimeline:
    frame.validate()
    return build_preamble(frame.priority) + build_frame_section(frame)


_CELL_PATTERN = (Level.ON, Level.ON, Level.OFF, Level.OFF)


def _count_cells(halves: Sequence[Level]) -> int:
    cells = 0
    while tuple(halves[4 * cells : 4 * cells + 4]) == _CELL_PATTERN:
        cells += 1
    return cells


def _split_cells(timeline: OokTimeline, jitter_tolerance: float) -> Tuple[int, List[Level]]:
    if not timeline.segments:
        raise NoSfd("empty timeline")
    try:
        halves = _half_bits(timeline, jitter_tolerance)
    except CodingViolation as exc:
        raise NoSfd(f"no delimiter on the symbol grid: {exc}") from exc
    cells = _count_cells(halves)
    return cells, halves[4 * cells :]


def _decode_body(body_halves: Sequence[Level], priority: int) -> Frame:
    bits = _decode_halves(body_halves, Level.OFF)
    if len(bits) != config.BODY_BITS:
        raise CodingViolation(f"body has {len(bits)} bits", min(len(bits), config.BODY_BITS))
    return deserialize_body(bits, priority=priority)


def decode_frame_bits(
    timeline: OokTimeline,
    jitter_tolerance: float = config.JITTER_TOLERANCE,
    lock_cells: int = config.SFD_CELLS,
) -> Bitstream:
    """Body bits of a frame section aligned to its first delimiter cell (no CRC check).

    The receiver locks on the last ``lock_cells`` delimiter cells before the
    body; earlier cells may be masked by another carrier.
    """
    if not 1 <= lock_cells <= config.SFD_CELLS:
        raise FrameCodecError(f"lock_cells must be in [1, {config.SFD_CELLS}]")
    if not timeline.segments:
        raise NoSfd("empty timeline")
    try:
        halves = _half_bits(timeline, jitter_tolerance)
    except CodingViolation as exc:
        raise NoSfd(f"no delimiter on the symbol grid: {exc}") from exc
    body_start = 4 * config.SFD_CELLS
    if len(halves) != body_start + 2 * config.BODY_BITS:
        raise NoSfd(f"frame section has {len(halves)} half-bits")
    for k in range(1, lock_cells + 1):
        if tuple(halves[body_start - 4 * k : body_start - 4 * (k - 1)]) != _CELL_PATTERN:
            raise NoSfd(f"delimiter cell {config.SFD_CELLS - k} missing")
    return _decode_halves(halves[body_start:], Level.OFF)


def parse_transmission(
    timeline: OokTimeline, jitter_tolerance: float = config.JITTER_TOLERANCE
) -> Tuple[int, Frame]:
    cells, body = _split_cells(timeline, jitter_tolerance)
    priority = cells - config.SFD_CELLS
    if priority < 1:
        raise NoSfd(f"found {cells} on-off cells, need a preamble plus {config.SFD_CELLS}")
    frame = _decode_body(body, priority)
    return priority, frame


def or_superpose(timelines: Iterable[Tuple[int, OokTimeline]], start_ns: int, end_ns: int) -> OokTimeline:
    """Carrier-OR of several timelines (each with an absolute start) over [start_ns, end_ns)."""
    intervals: List[Tuple[int, int]] = []
    for offset, timeline in timelines:
        for a, b in timeline.on_intervals(offset):
            a, b = max(a, start_ns), min(b, end_ns)
            if b > a:
                intervals.append((a, b))
    intervals.sort()
    merged: List[List[int]] = []
    for a, b in intervals:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    segments: List[Tuple[Level, int]] = []
    t = start_ns
    for a, b in merged:
        segments.append((Level.OFF, a - t))
        segments.append((Level.ON, b - a))
        t = b
    segments.append((Level.OFF, end_ns - t))
    return OokTimeline.from_segments(segments)
