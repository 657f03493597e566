"""1-D conductive substrate: attenuation, carrier OR, noisy carrier sense and
bursty frame corruption."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Tuple

import numpy as np

from . import config
from .frame_codec import Bitstream, Level


class MediumError(ValueError):
    pass


class OutOfBounds(MediumError):
    pass


class ChannelState(str, Enum):
    BUSY = "BUSY"
    IDLE = "IDLE"

    def flipped(self) -> "ChannelState":
        return ChannelState.IDLE if self is ChannelState.BUSY else ChannelState.BUSY


@dataclass(frozen=True)
class SubstrateModel:
    length_m: float = config.SUBSTRATE_LENGTH_M
    resistance_per_m: float = config.RESISTANCE_PER_M
    v_ref: float = config.V_REF
    decay_per_m: float = config.DECAY_PER_M
    demod_threshold_v: float = config.DEMOD_THRESHOLD_V
    noise_sigma_v: float = config.NOISE_SIGMA_V
    sense_error_prob: float = config.SENSE_ERROR_PROB
    frame_loss_prob: float = config.FRAME_LOSS_PROB
    burst_min_bits: int = config.BURST_MIN_BITS
    burst_max_bits: int = config.BURST_MAX_BITS

    def __post_init__(self) -> None:
        if not self.length_m > 0:
            raise MediumError("length_m must be > 0")
        for name in ("sense_error_prob", "frame_loss_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MediumError(f"{name} must be in [0, 1], got {value}")
        if self.burst_min_bits < 1 or self.burst_min_bits > self.burst_max_bits:
            raise MediumError("burst range must satisfy 1 <= min <= max")
        if self.decay_per_m < 0 or self.noise_sigma_v < 0 or self.v_ref < 0:
            raise MediumError("decay, noise and reference voltage must be >= 0")

    @property
    def end_to_end_resistance(self) -> float:
        return self.length_m * self.resistance_per_m

    def check_position(self, position: float) -> float:
        if not 0.0 <= position <= self.length_m:
            raise OutOfBounds(f"position {position} m outside [0, {self.length_m}] m")
        return float(position)


def rssi(substrate: SubstrateModel, tx_pos: float, rx_pos: float, tx_level: Level = Level.ON) -> float:
    tx = substrate.check_position(tx_pos)
    rx = substrate.check_position(rx_pos)
    if Level(tx_level) is Level.OFF:
        return 0.0
    return substrate.v_ref * math.exp(-substrate.decay_per_m * abs(tx - rx))


def channel_observation(
    substrate: SubstrateModel,
    active_transmitters: Iterable[Tuple[float, Level]],
    rx_pos: float,
    rng: np.random.Generator,
) -> Tuple[float, ChannelState]:
    """Envelope observation: strongest incident carrier plus one Gaussian noise draw."""
    peak = 0.0
    for position, level in active_transmitters:
        peak = max(peak, rssi(substrate, position, rx_pos, level))
    analog = peak + float(rng.normal(0.0, substrate.noise_sigma_v))
    logical = ChannelState.BUSY if analog >= substrate.demod_threshold_v else ChannelState.IDLE
    return analog, logical


def sense_with_error(observation: ChannelState, epsilon: float, rng: np.random.Generator) -> ChannelState:
    if not 0.0 <= epsilon <= 1.0:
        raise MediumError(f"epsilon must be in [0, 1], got {epsilon}")
    # Always consume one draw so stream positions do not depend on epsilon.
    u = float(rng.random())
    return observation.flipped() if u < epsilon else observation


def corrupt_frame(bits: Sequence[int], substrate: SubstrateModel, rng: np.random.Generator) -> Bitstream:
    bits = tuple(int(b) for b in bits)
    if not bits or float(rng.random()) >= substrate.frame_loss_prob:
        return bits
    length = int(rng.integers(substrate.burst_min_bits, substrate.burst_max_bits + 1))
    length = min(length, len(bits))
    offset = int(rng.integers(0, len(bits) - length + 1))
    out = list(bits)
    for i in range(offset, offset + length):
        out[i] ^= 1
    return tuple(out)
