import math

import numpy as np
import pytest

from src.frame_codec import Level
from src.medium import (
    ChannelState,
    MediumError,
    OutOfBounds,
    SubstrateModel,
    channel_observation,
    corrupt_frame,
    rssi,
    sense_with_error,
)


def _quiet(**kw) -> SubstrateModel:
    return SubstrateModel(noise_sigma_v=0.0, **kw)


def test_rssi_decays_with_distance_and_is_zero_when_off():
    s = _quiet()
    assert rssi(s, 0.0, 0.0) == pytest.approx(s.v_ref)
    assert rssi(s, 0.0, 1.0) == pytest.approx(s.v_ref * math.exp(-s.decay_per_m))
    assert rssi(s, 0.0, 2.0) < rssi(s, 0.0, 1.0)
    assert rssi(s, 1.5, 0.5) == pytest.approx(rssi(s, 0.5, 1.5))
    assert rssi(s, 0.0, 1.0, Level.OFF) == 0.0


def test_rssi_rejects_positions_off_the_substrate():
    with pytest.raises(OutOfBounds):
        rssi(_quiet(), 0.0, 2.5)
    with pytest.raises(OutOfBounds):
        rssi(_quiet(), -0.1, 1.0)


def test_full_length_stays_above_demod_threshold():
    s = SubstrateModel()
    assert rssi(s, 0.0, s.length_m) > s.demod_threshold_v
    assert s.end_to_end_resistance == pytest.approx(1700.0)


def test_channel_observation_is_or_of_carriers():
    s = _quiet()
    rng = np.random.default_rng(0)
    assert channel_observation(s, [], 1.0, rng)[1] is ChannelState.IDLE
    assert channel_observation(s, [(0.0, Level.OFF)], 1.0, rng)[1] is ChannelState.IDLE
    analog, state = channel_observation(s, [(0.0, Level.OFF), (2.0, Level.ON)], 1.0, rng)
    assert state is ChannelState.BUSY
    assert analog == pytest.approx(rssi(s, 2.0, 1.0))


def test_channel_observation_consumes_one_draw_even_without_noise():
    s = _quiet()
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    channel_observation(s, [], 0.0, a)
    b.normal(0.0, 1.0)
    assert a.random() == b.random()


def test_sense_with_error_bounds():
    rng = np.random.default_rng(1)
    assert sense_with_error(ChannelState.BUSY, 0.0, rng) is ChannelState.BUSY
    assert sense_with_error(ChannelState.BUSY, 1.0, rng) is ChannelState.IDLE
    assert sense_with_error(ChannelState.IDLE, 1.0, rng) is ChannelState.BUSY
    with pytest.raises(MediumError):
        sense_with_error(ChannelState.IDLE, 1.5, rng)


def test_sense_with_error_flip_rate():
    rng = np.random.default_rng(2)
    flips = sum(sense_with_error(ChannelState.IDLE, 0.02, rng) is ChannelState.BUSY for _ in range(20_000))
    assert 300 < flips < 500


def test_corrupt_frame_flips_one_contiguous_burst():
    s = SubstrateModel(frame_loss_prob=1.0)
    bits = (0,) * 64
    out = corrupt_frame(bits, s, np.random.default_rng(3))
    flipped = [i for i, b in enumerate(out) if b]
    assert s.burst_min_bits <= len(flipped) <= s.burst_max_bits
    assert flipped == list(range(flipped[0], flipped[-1] + 1))


def test_corrupt_frame_passes_through_without_loss():
    bits = tuple(i % 2 for i in range(64))
    assert corrupt_frame(bits, SubstrateModel(frame_loss_prob=0.0), np.random.default_rng(4)) == bits


def test_substrate_validation():
    with pytest.raises(MediumError):
        SubstrateModel(length_m=0.0)
    with pytest.raises(MediumError):
        SubstrateModel(sense_error_prob=1.5)
    with pytest.raises(MediumError):
        SubstrateModel(burst_min_bits=10, burst_max_bits=5)


def test_corrupt_frame_hits_the_configured_loss_rate():
    s = SubstrateModel()
    rng = np.random.default_rng(6)
    bits = (0,) * 64
    hits = sum(any(corrupt_frame(bits, s, rng)) for _ in range(50_000))
    assert 50_000 * s.frame_loss_prob * 0.7 < hits < 50_000 * s.frame_loss_prob * 1.3


def test_corrupt_frame_is_deterministic_per_seed():
    s = SubstrateModel(frame_loss_prob=0.5)
    bits = tuple(i % 3 == 0 for i in range(64))
    a, b = np.random.default_rng(11), np.random.default_rng(11)
    assert [corrupt_frame(bits, s, a) for _ in range(200)] == [corrupt_frame(bits, s, b) for _ in range(200)]


def test_rssi_is_monotone_on_a_centimetre_grid():
    s = _quiet()
    grid = np.arange(0, round(s.length_m * 100) + 1) / 100.0
    levels = [rssi(s, 0.0, float(x)) for x in grid]
    assert all(b < a for a, b in zip(levels, levels[1:]))
    mirrored = [rssi(s, s.length_m, float(x)) for x in grid]
    assert all(b > a for a, b in zip(mirrored, mirrored[1:]))
