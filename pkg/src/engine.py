"""Deterministic discrete-event simulation of a SEth bus.

One logical timeline at 1 ns resolution; events are dispatched in
(time, sequence) order. ``run`` executes one scenario, ``replicate`` fans out
independent seeds and aggregates the per-run summaries.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from . import config, seeding
from .calibration import calibrate
from .frame_codec import (
    Frame,
    FrameCodecError,
    Level,
    OokTimeline,
    build_frame_section,
    build_preamble,
    decode_frame_bits,
    deserialize_body,
    or_superpose,
    serialize_body,
)
from .medium import ChannelState, OutOfBounds, SubstrateModel, channel_observation, corrupt_frame, rssi, sense_with_error
from .neuron import (
    EnergyState,
    HarvesterModel,
    MacEvent,
    MacEventKind,
    Mode,
    Neuron,
    NeuronConfig,
    QueuedFrame,
    TimerKind,
    Transition,
    harvests,
    mac_transition,
    sense_sample,
    time_to_voltage,
    voltage_after,
)
from .sensing import ABSENT, IntruderTrajectory, SensingModel
from .stats import mean_ci

logger = logging.getLogger(__name__)

MEDIUM = -1


class ConfigInvalid(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# --- Scenario ---


@dataclass(frozen=True)
class SendSpec:
    time_ns: int
    src: int
    dst: int
    priority: Optional[int] = None


@dataclass(frozen=True)
class RequestSpec:
    time_ns: int
    fanout: int


@dataclass(frozen=True)
class CarrierWindow:
    start_ns: int
    end_ns: int


@dataclass(frozen=True)
class Traffic:
    sends: Tuple[SendSpec, ...] = ()
    requests: Tuple[RequestSpec, ...] = ()
    carriers: Tuple[CarrierWindow, ...] = ()


@dataclass(frozen=True)
class SensingSpec:
    model: SensingModel = SensingModel()
    node_id: Optional[int] = None
    trajectory: Optional[IntruderTrajectory] = None


@dataclass(frozen=True)
class ScenarioConfig:
    substrate: SubstrateModel = SubstrateModel()
    nodes: Tuple[NeuronConfig, ...] = ()
    traffic: Traffic = Traffic()
    sensing: SensingSpec = SensingSpec()
    duration_ns: int = config.NS_PER_S
    seed: int = config.DEFAULT_SEED
    n_priority: int = config.N_PRIORITY
    trace_period_ns: int = config.TRACE_PERIOD_NS
    lock_cells: int = config.SFD_LOCK_CELLS

    @property
    def coordinator(self) -> Optional[NeuronConfig]:
        return next((n for n in self.nodes if n.is_coordinator), None)

    def node(self, node_id: int) -> NeuronConfig:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def repliers(self, fanout: int) -> Tuple[int, ...]:
        """First ``fanout`` non-coordinator nodes to the coordinator's right."""
        coord = self.coordinator
        if coord is None:
            return ()
        right = sorted(
            (n for n in self.nodes if not n.is_coordinator and n.position > coord.position),
            key=lambda n: (n.position, n.node_id),
        )
        return tuple(n.node_id for n in right[:fanout])

    def validate(self) -> None:
        if not self.nodes:
            raise ConfigInvalid("nodes", "at least one node is required")
        if self.duration_ns <= 0:
            raise ConfigInvalid("run.duration_ns", "must be > 0")
        if self.trace_period_ns < 0:
            raise ConfigInvalid("run.trace_period_ns", "must be >= 0")
        if self.n_priority < 1:
            raise ConfigInvalid("run.n_priority", "must be >= 1")
        if not 1 <= self.lock_cells <= config.SFD_CELLS:
            raise ConfigInvalid("run.lock_cells", f"must be in [1, {config.SFD_CELLS}]")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("id", "node ids must be unique")
        priorities = [n.priority for n in self.nodes]
        if len(set(priorities)) != len(priorities):
            raise ConfigInvalid("priority", "priorities must be unique within the bus")
        for n in self.nodes:
            if not 0 <= n.node_id < config.BROADCAST_ADDRESS:
                raise ConfigInvalid("id", f"node id {n.node_id} must be in [0, 254]")
            try:
                self.substrate.check_position(n.position)
            except OutOfBounds as exc:
                raise ConfigInvalid("position", f"node {n.node_id}: {exc}") from exc
            if not 1 <= n.priority <= self.n_priority:
                raise ConfigInvalid("priority", f"node {n.node_id}: {n.priority} outside [1, {self.n_priority}]")
        if sum(1 for n in self.nodes if n.is_coordinator) > 1:
            raise ConfigInvalid("coordinator", "at most one coordinator")
        coord = self.coordinator
        if coord is None and any(not n.externally_powered for n in self.nodes):
            raise ConfigInvalid("supply", "harvesting nodes need a coordinator carrier")
        for s in self.traffic.sends:
            if s.time_ns < 0 or s.src not in ids:
                raise ConfigInvalid("traffic.send", f"bad source or time in {s}")
            if s.dst not in ids and s.dst != config.BROADCAST_ADDRESS:
                raise ConfigInvalid("traffic.send", f"unknown destination {s.dst}")
            if s.priority is not None and not 1 <= s.priority <= self.n_priority:
                raise ConfigInvalid("traffic.send", f"priority {s.priority} outside [1, {self.n_priority}]")
        for r in self.traffic.requests:
            if coord is None:
                raise ConfigInvalid("traffic.request", "requests need a coordinator")
            if r.time_ns < 0 or r.fanout < 1 or len(self.repliers(r.fanout)) < r.fanout:
                raise ConfigInvalid("traffic.request", f"fan-out {r.fanout} exceeds nodes right of the coordinator")
            if r.fanout > 0xFF:
                raise ConfigInvalid("traffic.request", "fan-out must fit one octet")
        windows = sorted(self.traffic.carriers, key=lambda w: w.start_ns)
        for w in windows:
            if coord is None:
                raise ConfigInvalid("traffic.carrier", "carrier windows need a coordinator")
            if not 0 <= w.start_ns < w.end_ns:
                raise ConfigInvalid("traffic.carrier", f"bad window {w.start_ns}:{w.end_ns}")
        for a, b in zip(windows, windows[1:]):
            if b.start_ns < a.end_ns:
                raise ConfigInvalid("traffic.carrier", "carrier windows overlap")
        if self.sensing.node_id is not None:
            if self.sensing.node_id not in ids:
                raise ConfigInvalid("sensing.node", f"unknown node {self.sensing.node_id}")
            if coord is None:
                raise ConfigInvalid("sensing.node", "sensing needs a coordinator carrier")
        if self.sensing.node_id is not None and self.node(self.sensing.node_id).is_coordinator:
            raise ConfigInvalid("sensing.node", "the coordinator radiates the carrier and cannot sense it")


# --- Metrics ---


class Disposition(str, Enum):
    DELIVERED = "delivered"
    CORRUPTED = "corrupted"
    PENDING = "pending"


@dataclass
class FrameRecord:
    frame_id: int
    enqueue_ns: int
    src: int
    dst: int
    priority: int
    trial: Optional[int] = None
    transmitted: bool = False
    tx_start_ns: Optional[int] = None
    tx_end_ns: Optional[int] = None
    deliver_ns: Optional[int] = None
    crc_ok: bool = False
    winner_correct: Optional[bool] = None
    first_in_trial: bool = False
    receptions: int = 0

    @property
    def is_unicast(self) -> bool:
        return self.dst != config.BROADCAST_ADDRESS

    @property
    def latency_ns(self) -> Optional[int]:
        return None if self.deliver_ns is None or not self.crc_ok else self.deliver_ns - self.enqueue_ns

    def disposition(self, end_ns: int) -> Disposition:
        if not self.transmitted or self.tx_end_ns is None or self.tx_end_ns > end_ns:
            return Disposition.PENDING
        return Disposition.DELIVERED if self.crc_ok else Disposition.CORRUPTED


@dataclass(frozen=True)
class TransmissionLog:
    node_id: int
    kind: str
    start_ns: int
    end_ns: int


@dataclass
class Metrics:
    seed: int
    end_ns: int = 0
    frames: List[FrameRecord] = field(default_factory=list)
    transmissions: List[TransmissionLog] = field(default_factory=list)
    energy_trace: List[Tuple[int, int, float, str]] = field(default_factory=list)
    sense_samples: List[Tuple[int, float]] = field(default_factory=list)
    activations: List[Tuple[int, int]] = field(default_factory=list)
    deferrals: Dict[int, int] = field(default_factory=dict)
    events: int = 0

    def dispositions(self) -> Counter:
        return Counter(r.disposition(self.end_ns) for r in self.frames)

    def _scored(self) -> List[FrameRecord]:
        """Unicast frames that finished on air; within a request trial only the first counts."""
        return [
            r
            for r in self.frames
            if r.is_unicast
            and r.disposition(self.end_ns) is not Disposition.PENDING
            and (r.trial is None or r.first_in_trial)
        ]

    def reliability(self) -> Dict[str, float]:
        scored = self._scored()
        if not scored:
            return {"communication": 0.0, "contention": 0.0, "joint": 0.0}
        n = len(scored)
        return {
            "communication": sum(r.crc_ok for r in scored) / n,
            "contention": sum(bool(r.winner_correct) for r in scored) / n,
            "joint": sum(r.crc_ok and bool(r.winner_correct) for r in scored) / n,
        }

    def summary(self) -> Dict[str, float]:
        counts = self.dispositions()
        latencies = [r.latency_ns for r in self.frames if r.latency_ns is not None]
        out = dict(self.reliability())
        out.update(
            {
                "frames": float(len(self.frames)),
                "delivered": float(counts[Disposition.DELIVERED]),
                "corrupted": float(counts[Disposition.CORRUPTED]),
                "pending": float(counts[Disposition.PENDING]),
                "deferrals": float(sum(self.deferrals.values())),
                "mean_latency_ns": float(sum(latencies) / len(latencies)) if latencies else 0.0,
            }
        )
        return out


# --- Simulation ---


class EventKind(str, Enum):
    TIMER = "TIMER"
    IDLE_CHECK = "IDLE_CHECK"
    SEND = "SEND"
    REQUEST = "REQUEST"
    CARRIER_ON = "CARRIER_ON"
    CARRIER_OFF = "CARRIER_OFF"
    RX_DONE = "RX_DONE"
    SENSE_TICK = "SENSE_TICK"
    TRACE_TICK = "TRACE_TICK"
    BROWNOUT = "BROWNOUT"
    ACTIVATE = "ACTIVATE"


@dataclass(order=True, frozen=True)
class Event:
    time_ns: int
    seq: int
    target: int = field(compare=False)
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


@dataclass
class Transmission:
    tx_id: int
    node_id: int
    kind: str
    start_ns: int
    end_ns: int
    position: float
    timeline: OokTimeline
    frame_id: Optional[int] = None
    body: Optional[Tuple[int, ...]] = None
    error_mask: Optional[Tuple[int, ...]] = None


class Simulation:
    def __init__(self, cfg: ScenarioConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.substrate = cfg.substrate
        self.now = 0
        self._queue: List[Event] = []
        self._seq = itertools.count()
        self._tx_ids = itertools.count()
        self._frame_ids = itertools.count()
        self._trial_ids = itertools.count()
        self.medium_rng = seeding.medium_rng(cfg.seed)
        self.rngs = {n.node_id: seeding.node_rng(cfg.seed, n.node_id) for n in cfg.nodes}
        self.nodes: Dict[int, Neuron] = {n.node_id: self._make_neuron(n) for n in cfg.nodes}
        self.coordinator = cfg.coordinator
        self._energy_ns: Dict[int, int] = {nid: 0 for nid in self.nodes}
        self._timer_epoch: Dict[int, int] = {nid: 0 for nid in self.nodes}
        self._energy_epoch: Dict[int, int] = {nid: 0 for nid in self.nodes}
        self._idle_token: Dict[int, int] = {nid: 0 for nid in self.nodes}
        self._on_air: Dict[int, Transmission] = {}
        self._recent: List[Transmission] = []
        self._carrier: Optional[Transmission] = None
        self._records: Dict[int, FrameRecord] = {}
        self._trials: Dict[int, Tuple[int, ...]] = {}
        self._trial_of_request: Dict[int, int] = {}
        self._trials_started: set = set()
        self._broadcast_results: Dict[int, List[bool]] = {}
        self._decode_cache: Dict[Tuple, Optional[Tuple[int, ...]]] = {}
        self._memory_ns = 2 * config.FRAME_NS + max(n.timing.t_idle_ns for n in cfg.nodes)
        self.metrics = Metrics(seed=cfg.seed)

    def _make_neuron(self, nc: NeuronConfig) -> Neuron:
        if nc.externally_powered:
            return Neuron(config=nc, mode=Mode.LISTEN, energy=EnergyState(config.EXTERNAL_SUPPLY_V, True))
        harvester = nc.harvester
        if harvester is None:
            coord = next(n for n in self.cfg.nodes if n.is_coordinator)
            distance = nc.harvest_distance_m
            if distance is None:
                distance = abs(nc.position - coord.position)
            harvester = calibrate().harvester_at(distance)
        return Neuron(config=nc, mode=Mode.OFF, energy=EnergyState(0.0, False), harvester=harvester)

    # --- scheduling ---

    def _schedule(self, time_ns: int, target: int, kind: EventKind, payload: Any = None) -> None:
        if time_ns < self.now:
            raise RuntimeError(f"causality violation: {kind.value} at {time_ns} < {self.now}")
        heapq.heappush(self._queue, Event(time_ns, next(self._seq), target, kind, payload))

    def _bootstrap(self) -> None:
        for s in self.cfg.traffic.sends:
            self._schedule(s.time_ns, s.src, EventKind.SEND, s)
        for r in self.cfg.traffic.requests:
            self._schedule(r.time_ns, self.coordinator.node_id, EventKind.REQUEST, r)
        for w in self.cfg.traffic.carriers:
            self._schedule(w.start_ns, MEDIUM, EventKind.CARRIER_ON, w)
            self._schedule(w.end_ns, MEDIUM, EventKind.CARRIER_OFF, w)
        if self.cfg.trace_period_ns > 0:
            self._schedule(0, MEDIUM, EventKind.TRACE_TICK)
        for node in self.nodes.values():
            self._reschedule_energy(node)

    def run(self) -> Metrics:
        logger.info(
            "Run start: %d nodes on %.0f ohm substrate, seed %d, duration %d ns",
            len(self.nodes),
            self.substrate.end_to_end_resistance,
            self.cfg.seed,
            self.cfg.duration_ns,
        )
        self._bootstrap()
        handlers = {
            EventKind.TIMER: self._on_timer,
            EventKind.IDLE_CHECK: self._on_idle_check,
            EventKind.SEND: self._on_send,
            EventKind.REQUEST: self._on_request,
            EventKind.CARRIER_ON: self._on_carrier_on,
            EventKind.CARRIER_OFF: self._on_carrier_off,
            EventKind.RX_DONE: self._on_rx_done,
            EventKind.SENSE_TICK: self._on_sense_tick,
            EventKind.TRACE_TICK: self._on_trace_tick,
            EventKind.BROWNOUT: self._on_energy_cross,
            EventKind.ACTIVATE: self._on_energy_cross,
        }
        while self._queue and self._queue[0].time_ns <= self.cfg.duration_ns:
            event = heapq.heappop(self._queue)
            self.now = event.time_ns
            logger.debug("t=%d %s -> %s %s", event.time_ns, event.kind.value, event.target, event.payload)
            handlers[event.kind](event)
            self.metrics.events += 1
        self.now = self.cfg.duration_ns
        for node in self.nodes.values():
            self._advance_energy(node)
        self.metrics.end_ns = self.cfg.duration_ns
        self.metrics.frames = [self._records[k] for k in sorted(self._records)]
        self.metrics.deferrals = {nid: n.mac.deferrals for nid, n in sorted(self.nodes.items())}
        logger.info("Run end: %d events, %d frames", self.metrics.events, len(self.metrics.frames))
        return self.metrics

    # --- energy ---

    def _source(self, node: Neuron) -> Optional[HarvesterModel]:
        if node.harvester is not None and self._carrier is not None and harvests(node.mode):
            return node.harvester
        return None

    def _load(self, node: Neuron, source: Optional[HarvesterModel]) -> float:
        load = node.config.loads.for_mode(node.mode)
        if source is None and node.harvester is not None:
            load += node.harvester.i_leak(node.config.capacitor_f)
        return load

    def _advance_energy(self, node: Neuron) -> None:
        nid = node.node_id
        dt_ns = self.now - self._energy_ns[nid]
        self._energy_ns[nid] = self.now
        if node.harvester is None or dt_ns <= 0:
            return
        source = self._source(node)
        v = voltage_after(
            node.energy.v_cap, source, node.config.capacitor_f, self._load(node, source), dt_ns / config.NS_PER_S
        )
        node.energy = EnergyState(v_cap=v, alive=node.mode is not Mode.OFF)

    def _reschedule_energy(self, node: Neuron) -> None:
        if node.harvester is None:
            return
        nid = node.node_id
        self._energy_epoch[nid] += 1
        source = self._source(node)
        target, kind = (node.config.v_on, EventKind.ACTIVATE) if node.mode is Mode.OFF else (node.config.v_off, EventKind.BROWNOUT)
        t = time_to_voltage(source, node.config.capacitor_f, self._load(node, source), node.energy.v_cap, target)
        if t is None:
            return
        self._schedule(self.now + math.ceil(t * config.NS_PER_S) + 1, nid, kind, self._energy_epoch[nid])

    def _on_energy_cross(self, event: Event) -> None:
        node = self.nodes[event.target]
        if event.payload != self._energy_epoch[node.node_id]:
            return
        self._advance_energy(node)
        v = node.energy.v_cap
        if event.kind is EventKind.ACTIVATE:
            if node.mode is not Mode.OFF or v < node.config.v_on:
                self._reschedule_energy(node)
                return
            logger.debug("node %d activates at %d ns", node.node_id, self.now)
            self.metrics.activations.append((self.now, node.node_id))
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.ACTIVATE), self.now))
            return
        if node.mode is Mode.OFF or v >= node.config.v_off:
            self._reschedule_energy(node)
            return
        logger.debug("node %d browns out at %d ns", node.node_id, self.now)
        self._brownout(node)

    def _brownout(self, node: Neuron) -> None:
        nid = node.node_id
        self._timer_epoch[nid] += 1
        self._idle_token[nid] += 1
        tx = self._on_air.pop(nid, None)
        if tx is not None and tx.end_ns > self.now:
            tx.timeline = tx.timeline.slice(0, self.now - tx.start_ns)
            tx.end_ns = self.now
            if tx.frame_id is not None:
                record = self._records[tx.frame_id]
                record.transmitted = False
                record.tx_start_ns = record.tx_end_ns = None
                record.winner_correct = None
                if record.first_in_trial:
                    record.first_in_trial = False
                    self._trials_started.discard(record.trial)
                tx.frame_id = None
            self._log_transmission(tx)
        self._apply(node, mac_transition(node, MacEvent(MacEventKind.BROWNOUT), self.now))

    # --- MAC plumbing ---

    def _apply(self, node: Neuron, tr: Transition) -> None:
        changed = tr.mode is not node.mode
        if changed:
            self._advance_energy(node)
            node.mode = tr.mode
            node.energy = EnergyState(node.energy.v_cap, alive=tr.mode is not Mode.OFF)
        node.mac = tr.mac
        nid = node.node_id
        for timer in tr.timers:
            if timer.kind is TimerKind.IDLE_WAIT:
                self._idle_token[nid] += 1
                self._schedule(self.now + timer.delay_ns, nid, EventKind.IDLE_CHECK, self._idle_token[nid])
            else:
                self._schedule(self.now + timer.delay_ns, nid, EventKind.TIMER, (timer.kind, self._timer_epoch[nid]))
        if changed:
            self._reschedule_energy(node)

    def _enqueue(self, node: Neuron, frame: Frame, trial: Optional[int] = None) -> int:
        frame_id = next(self._frame_ids)
        self._records[frame_id] = FrameRecord(
            frame_id=frame_id,
            enqueue_ns=self.now,
            src=node.node_id,
            dst=frame.dest,
            priority=frame.priority,
            trial=trial,
        )
        item = QueuedFrame(frame=frame, src=node.node_id, enqueue_ns=self.now, seq=frame_id)
        if node.mode is Mode.OFF:
            node.mac = node.mac.enqueue(item)
        else:
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.TX_REQUEST, frame=item), self.now))
        return frame_id

    def _audible(self, tx: Transmission, node: Neuron) -> bool:
        if tx.node_id == node.node_id:
            return True
        return rssi(self.substrate, tx.position, node.config.position) >= self.substrate.demod_threshold_v

    def _prune(self) -> None:
        if len(self._recent) < 32:
            return
        horizon = self.now - self._memory_ns
        kept = [tx for tx in self._recent if tx.end_ns >= horizon]
        if len(kept) != len(self._recent):
            self._recent = kept
            self._decode_cache.clear()

    def _start_transmission(self, node: Neuron, kind: str, timeline: OokTimeline, frame_id=None, body=None, mask=None) -> Transmission:
        tx = Transmission(
            tx_id=next(self._tx_ids),
            node_id=node.node_id,
            kind=kind,
            start_ns=self.now,
            end_ns=self.now + timeline.duration_ns,
            position=node.config.position,
            timeline=timeline,
            frame_id=frame_id,
            body=body,
            error_mask=mask,
        )
        self._prune()
        self._recent.append(tx)
        self._on_air[node.node_id] = tx
        return tx

    def _log_transmission(self, tx: Transmission) -> None:
        self.metrics.transmissions.append(TransmissionLog(tx.node_id, tx.kind, tx.start_ns, tx.end_ns))

    def _on_idle_check(self, event: Event) -> None:
        node = self.nodes[event.target]
        if event.payload != self._idle_token[node.node_id] or node.mode is not Mode.LISTEN:
            return
        t_idle = node.config.timing.t_idle_ns
        ends = [tx.end_ns for tx in self._recent if tx.start_ns < self.now and self._audible(tx, node)]
        if self._carrier is not None and self._carrier.start_ns < self.now:
            ends.append(max(self._carrier.end_ns, self.now + 1))
        last = max(ends, default=None)
        if last is not None and last + t_idle > self.now:
            self._schedule(last + t_idle, node.node_id, EventKind.IDLE_CHECK, event.payload)
            return
        self._apply(node, mac_transition(node, MacEvent(MacEventKind.CHANNEL_IDLE_ELAPSED), self.now))
        if node.mode is Mode.TX_PREAMBLE:
            self._start_transmission(node, "preamble", build_preamble(node.mac.head.frame.priority))

    def _on_timer(self, event: Event) -> None:
        node = self.nodes[event.target]
        kind, epoch = event.payload
        if epoch != self._timer_epoch[node.node_id]:
            return
        if kind is TimerKind.PREAMBLE_DONE:
            tx = self._on_air.pop(node.node_id, None)
            if tx is not None:
                self._log_transmission(tx)
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.PREAMBLE_DONE), self.now))
        elif kind is TimerKind.CHECK_WINDOW_END:
            result = self._check_channel(node)
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.CHECK_RESULT, result=result), self.now))
            if node.mode is Mode.TX_FRAME:
                self._start_frame(node)
        elif kind is TimerKind.FRAME_DONE:
            tx = self._on_air.pop(node.node_id, None)
            if tx is not None:
                self._log_transmission(tx)
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.FRAME_DONE), self.now))
        elif kind is TimerKind.ACTIVATE:
            self._apply(node, mac_transition(node, MacEvent(MacEventKind.ACTIVATE), self.now))

    def _check_channel(self, node: Neuron) -> ChannelState:
        """Envelope over the check window: any other audible ON segment inside it counts."""
        w1 = self.now
        w0 = w1 - node.config.timing.t_check_ns
        heard = []
        for tx in self._recent:
            if tx.node_id == node.node_id or tx.end_ns <= w0 or tx.start_ns >= w1:
                continue
            if any(a < w1 and b > w0 for a, b in tx.timeline.on_intervals(tx.start_ns)):
                heard.append((tx.position, Level.ON))
        if self._carrier is not None and self._carrier.node_id != node.node_id:
            heard.append((self._carrier.position, Level.ON))
        rng = self.rngs[node.node_id]
        _, observed = channel_observation(self.substrate, heard, node.config.position, rng)
        return sense_with_error(observed, self.substrate.sense_error_prob, rng)

    def _start_frame(self, node: Neuron) -> None:
        item = node.mac.head
        record = self._records[item.seq]
        body = serialize_body(item.frame)
        corrupted = corrupt_frame(body, self.substrate, self.medium_rng)
        mask = tuple(a ^ b for a, b in zip(body, corrupted))
        tx = self._start_transmission(
            node, "frame", build_frame_section(item.frame), frame_id=item.seq, body=body, mask=mask
        )
        contenders = [
            n.mac.head.frame.priority for n in self.nodes.values() if n.mode is not Mode.OFF and n.mac.queue
        ]
        record.transmitted = True
        record.tx_start_ns = tx.start_ns
        record.tx_end_ns = tx.end_ns
        record.winner_correct = item.frame.priority >= max(contenders)
        if record.trial is not None and record.trial not in self._trials_started:
            self._trials_started.add(record.trial)
            record.first_in_trial = True
        for other in self.nodes.values():
            if other is node or other.mode is not Mode.LISTEN or not self._audible(tx, other):
                continue
            self._apply(other, mac_transition(other, MacEvent(MacEventKind.RX_START), self.now))
            self._schedule(tx.end_ns, other.node_id, EventKind.RX_DONE, tx)

    def _receive(self, node: Neuron, tx: Transmission) -> Optional[Frame]:
        start, end = tx.start_ns, tx.start_ns + config.FRAME_NS
        overlapping = tuple(
            t for t in self._recent if t.start_ns < end and t.end_ns > start and self._audible(t, node)
        )
        if self._carrier is not None and self._carrier.start_ns < end:
            overlapping += (self._carrier,)
        key = tuple(sorted((t.tx_id, t.end_ns) for t in overlapping))
        if key not in self._decode_cache:
            if key == ((tx.tx_id, end),):
                bits: Optional[Tuple[int, ...]] = tx.body
            else:
                window = or_superpose(((t.start_ns, t.timeline) for t in overlapping), start, end)
                try:
                    bits = decode_frame_bits(window, lock_cells=self.cfg.lock_cells)
                except FrameCodecError:
                    bits = None
            self._decode_cache[key] = bits
        bits = self._decode_cache[key]
        if bits is None:
            return None
        received = tuple(b ^ m for b, m in zip(bits, tx.error_mask))
        try:
            return deserialize_body(received, priority=self._records[tx.frame_id].priority if tx.frame_id is not None else 1)
        except FrameCodecError:
            return None

    def _on_rx_done(self, event: Event) -> None:
        node = self.nodes[event.target]
        tx: Transmission = event.payload
        if node.mode is not Mode.RX_FRAME:
            return
        frame = self._receive(node, tx)
        self._apply(node, mac_transition(node, MacEvent(MacEventKind.RX_DONE), self.now))
        record = self._records.get(tx.frame_id) if tx.frame_id is not None else None
        if record is None:
            return
        ok = frame is not None
        if record.is_unicast:
            if record.dst == node.node_id:
                record.crc_ok = ok
                record.deliver_ns = self.now
                record.receptions += 1
        else:
            results = self._broadcast_results.setdefault(record.frame_id, [])
            results.append(ok)
            record.receptions = len(results)
            record.crc_ok = all(results)
            record.deliver_ns = self.now
        if ok and record.frame_id in self._trial_of_request and node.node_id in self._trials[self._trial_of_request[record.frame_id]]:
            trial = self._trial_of_request[record.frame_id]
            payload = bytes([trial & 0xFF, node.node_id & 0xFF, 0, 0, 0, 0])
            reply = Frame.build(node.config.priority, self.coordinator.node_id, payload, self.cfg.n_priority)
            self._enqueue(node, reply, trial=trial)

    # --- traffic ---

    def _on_send(self, event: Event) -> None:
        spec: SendSpec = event.payload
        node = self.nodes[spec.src]
        priority = spec.priority or node.config.priority
        frame_no = len(self._records)
        payload = frame_no.to_bytes(config.PAYLOAD_OCTETS, "big")
        self._enqueue(node, Frame.build(priority, spec.dst, payload, self.cfg.n_priority))

    def _on_request(self, event: Event) -> None:
        spec: RequestSpec = event.payload
        node = self.nodes[self.coordinator.node_id]
        trial = next(self._trial_ids)
        self._trials[trial] = self.cfg.repliers(spec.fanout)
        payload = bytes([spec.fanout & 0xFF, trial & 0xFF, 0, 0, 0, 0])
        frame = Frame.build(node.config.priority, config.BROADCAST_ADDRESS, payload, self.cfg.n_priority)
        self._trial_of_request[self._enqueue(node, frame)] = trial

    # --- carrier and sensing ---

    def _harvesting_nodes(self) -> List[Neuron]:
        return [n for n in self.nodes.values() if n.harvester is not None]

    def _on_carrier_on(self, event: Event) -> None:
        window: CarrierWindow = event.payload
        for node in self._harvesting_nodes():
            self._advance_energy(node)
        coord = self.nodes[self.coordinator.node_id]
        timeline = OokTimeline.from_segments([(Level.ON, window.end_ns - window.start_ns)])
        self._carrier = Transmission(
            tx_id=next(self._tx_ids),
            node_id=coord.node_id,
            kind="carrier",
            start_ns=self.now,
            end_ns=window.end_ns,
            position=coord.config.position,
            timeline=timeline,
        )
        for node in self._harvesting_nodes():
            self._reschedule_energy(node)
        sid = self.cfg.sensing.node_id
        if sid is not None and self.nodes[sid].mode is Mode.LISTEN:
            sensor = self.nodes[sid]
            self._apply(sensor, mac_transition(sensor, MacEvent(MacEventKind.SENSE_START), self.now))
            self._schedule(self.now, sid, EventKind.SENSE_TICK)

    def _on_carrier_off(self, event: Event) -> None:
        if self._carrier is None:
            return
        for node in self._harvesting_nodes():
            self._advance_energy(node)
        self._log_transmission(self._carrier)
        self._recent.append(self._carrier)
        self._carrier = None
        for node in self._harvesting_nodes():
            self._reschedule_energy(node)
        sid = self.cfg.sensing.node_id
        if sid is not None and self.nodes[sid].mode is Mode.SENSE:
            sensor = self.nodes[sid]
            self._apply(sensor, mac_transition(sensor, MacEvent(MacEventKind.SENSE_STOP), self.now))

    def _on_sense_tick(self, event: Event) -> None:
        node = self.nodes[event.target]
        if node.mode is not Mode.SENSE or self._carrier is None:
            return
        spec = self.cfg.sensing
        intruder = spec.trajectory.state_at(self.now) if spec.trajectory is not None else ABSENT
        volts = sense_sample(node, self.substrate, intruder, self.rngs[node.node_id], self._carrier.position, spec.model)
        self.metrics.sense_samples.append((self.now, volts))
        nxt = self.now + spec.model.sample_period_ns
        if nxt < self._carrier.end_ns:
            self._schedule(nxt, node.node_id, EventKind.SENSE_TICK)

    def _on_trace_tick(self, event: Event) -> None:
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            self._advance_energy(node)
            self.metrics.energy_trace.append((self.now, nid, node.energy.v_cap, node.mode.value))
        nxt = self.now + self.cfg.trace_period_ns
        if nxt <= self.cfg.duration_ns:
            self._schedule(nxt, MEDIUM, EventKind.TRACE_TICK)


def run(cfg: ScenarioConfig) -> Metrics:
    return Simulation(cfg).run()


def _run_summary(cfg: ScenarioConfig) -> Dict[str, float]:
    return run(cfg).summary()


@dataclass(frozen=True)
class Aggregate:
    runs: int
    values: Dict[str, Tuple[float, float, float]]

    def mean(self, metric: str) -> float:
        return self.values[metric][0]


def replicate(cfg: ScenarioConfig, runs: int = config.DEFAULT_REPLICATES, workers: int = 1) -> Aggregate:
    """Independent runs on derived seeds, aggregated to mean and 95% interval per metric."""
    if runs < 1:
        raise ConfigInvalid("run.runs", "must be >= 1")
    configs = [replace(cfg, seed=seeding.replicate_seed(cfg.seed, i)) for i in range(runs)]
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_summary, configs, chunksize=max(1, runs // (4 * workers))))
    else:
        summaries = [_run_summary(c) for c in configs]
    keys = sorted(summaries[0])
    return Aggregate(runs=runs, values={k: mean_ci([s[k] for s in summaries]) for k in keys})
