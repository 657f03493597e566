import numpy as np
import pytest

from src import config
from src.frame_codec import Frame
from src.medium import ChannelState, SubstrateModel
from src.neuron import (
    IllegalTransition,
    MacEvent,
    MacEventKind,
    MacTiming,
    Mode,
    Neuron,
    NeuronConfig,
    NeuronError,
    NoCarrier,
    QueuedFrame,
    TimerKind,
    mac_transition,
    sense_sample,
)
from src.sensing import ABSENT, IntruderState

PAYLOAD = bytes(6)


def _node(priority: int = 3, mode: Mode = Mode.LISTEN) -> Neuron:
    return Neuron(config=NeuronConfig(node_id=1, position=0.5, priority=priority), mode=mode)


def _queued(priority: int = 3, seq: int = 0) -> QueuedFrame:
    return QueuedFrame(Frame.build(priority, 0x00, PAYLOAD), src=1, enqueue_ns=0, seq=seq)


def _step(node: Neuron, kind: MacEventKind, now_ns: int = 0, **kw):
    tr = mac_transition(node, MacEvent(kind, **kw), now_ns)
    node.mode, node.mac = tr.mode, tr.mac
    return tr


def test_successful_transmission_walks_through_the_mac():
    node = _node()
    tr = _step(node, MacEventKind.TX_REQUEST, frame=_queued())
    assert [t.kind for t in tr.timers] == [TimerKind.IDLE_WAIT]
    assert len(node.mac.queue) == 1

    tr = _step(node, MacEventKind.CHANNEL_IDLE_ELAPSED, now_ns=500)
    assert node.mode is Mode.TX_PREAMBLE
    assert tr.timers[0].kind is TimerKind.PREAMBLE_DONE
    assert tr.timers[0].delay_ns == 3 * config.CELL_NS
    assert node.mac.preamble_start_ns == 500
    assert node.mac.attempts == 1

    tr = _step(node, MacEventKind.PREAMBLE_DONE)
    assert node.mode is Mode.ARB_CHECK
    # turnaround runs inside the final OFF half of the preamble
    assert tr.timers[0].delay_ns == config.T_TURN_NS + config.T_CHECK_NS - config.CELL_NS // 2

    tr = _step(node, MacEventKind.CHECK_RESULT, result=ChannelState.IDLE)
    assert node.mode is Mode.TX_FRAME
    assert tr.timers[0].delay_ns == config.FRAME_NS

    tr = _step(node, MacEventKind.FRAME_DONE)
    assert node.mode is Mode.LISTEN
    assert node.mac.queue == ()
    assert tr.timers == ()


def test_busy_check_defers_and_keeps_the_frame():
    node = _node()
    _step(node, MacEventKind.TX_REQUEST, frame=_queued())
    _step(node, MacEventKind.CHANNEL_IDLE_ELAPSED)
    _step(node, MacEventKind.PREAMBLE_DONE)
    tr = _step(node, MacEventKind.CHECK_RESULT, result=ChannelState.BUSY)
    assert node.mode is Mode.LISTEN
    assert node.mac.deferrals == 1
    assert node.mac.preamble_start_ns is None
    assert len(node.mac.queue) == 1
    assert [t.kind for t in tr.timers] == [TimerKind.IDLE_WAIT]


def test_queue_is_fifo_and_rearms_after_each_frame():
    node = _node()
    _step(node, MacEventKind.TX_REQUEST, frame=_queued(seq=0))
    tr = _step(node, MacEventKind.TX_REQUEST, frame=_queued(seq=1))
    assert tr.timers == ()
    _step(node, MacEventKind.CHANNEL_IDLE_ELAPSED)
    _step(node, MacEventKind.PREAMBLE_DONE)
    _step(node, MacEventKind.CHECK_RESULT, result=ChannelState.IDLE)
    tr = _step(node, MacEventKind.FRAME_DONE)
    assert node.mac.head.seq == 1
    assert [t.kind for t in tr.timers] == [TimerKind.IDLE_WAIT]


def test_preamble_length_follows_frame_priority():
    node = _node(priority=1)
    _step(node, MacEventKind.TX_REQUEST, frame=_queued(priority=7))
    tr = _step(node, MacEventKind.CHANNEL_IDLE_ELAPSED)
    assert tr.timers[0].delay_ns == 7 * config.CELL_NS


def test_idle_elapsed_with_empty_queue_stays_listening():
    node = _node()
    tr = _step(node, MacEventKind.CHANNEL_IDLE_ELAPSED)
    assert node.mode is Mode.LISTEN
    assert tr.timers == ()


def test_illegal_events_raise():
    with pytest.raises(IllegalTransition):
        mac_transition(_node(), MacEvent(MacEventKind.PREAMBLE_DONE))
    with pytest.raises(IllegalTransition):
        mac_transition(_node(mode=Mode.OFF), MacEvent(MacEventKind.TX_REQUEST, frame=_queued()))
    with pytest.raises(IllegalTransition):
        mac_transition(_node(mode=Mode.TX_FRAME), MacEvent(MacEventKind.RX_START))
    with pytest.raises(IllegalTransition):
        mac_transition(_node(mode=Mode.ARB_CHECK), MacEvent(MacEventKind.CHECK_RESULT))


def test_brownout_and_activation():
    node = _node(mode=Mode.TX_FRAME)
    node.mac = node.mac.enqueue(_queued())
    _step(node, MacEventKind.BROWNOUT)
    assert node.mode is Mode.OFF
    assert len(node.mac.queue) == 1

    tr = _step(node, MacEventKind.ACTIVATE)
    assert node.mode is Mode.HARVEST
    assert tr.timers[0].kind is TimerKind.ACTIVATE
    tr = _step(node, MacEventKind.ACTIVATE)
    assert node.mode is Mode.LISTEN
    assert [t.kind for t in tr.timers] == [TimerKind.IDLE_WAIT]


def test_receive_and_sense_modes():
    node = _node()
    _step(node, MacEventKind.RX_START)
    assert node.mode is Mode.RX_FRAME
    _step(node, MacEventKind.RX_DONE)
    assert node.mode is Mode.LISTEN
    _step(node, MacEventKind.SENSE_START)
    assert node.mode is Mode.SENSE
    _step(node, MacEventKind.SENSE_STOP)
    assert node.mode is Mode.LISTEN


def test_sense_sample_requires_sense_mode_and_carrier():
    substrate = SubstrateModel(noise_sigma_v=0.0)
    rng = np.random.default_rng(0)
    with pytest.raises(IllegalTransition):
        sense_sample(_node(), substrate, ABSENT, rng, 0.0)
    sensing = _node(mode=Mode.SENSE)
    with pytest.raises(NoCarrier):
        sense_sample(sensing, substrate, ABSENT, rng, None)
    quiet = sense_sample(sensing, substrate, ABSENT, rng, 0.0)
    touched = sense_sample(sensing, substrate, IntruderState(position_m=0.25, distance_m=0.0), rng, 0.0)
    assert touched < quiet


def test_mac_timing_keeps_the_check_window_on_the_next_preamble_cell():
    assert MacTiming().check_delay_ns == 20 * config.NS_PER_US
    assert MacTiming(t_turn_ns=0, t_check_ns=20_000).check_delay_ns == 10_000
    with pytest.raises(NeuronError):
        MacTiming(t_turn_ns=config.CELL_NS)
    with pytest.raises(NeuronError):
        MacTiming(t_turn_ns=0, t_check_ns=config.CELL_NS // 2)
    with pytest.raises(NeuronError):
        MacTiming(t_idle_ns=-1)
