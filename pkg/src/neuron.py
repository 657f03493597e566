"""Per-node model: mode machine, prioritized preemptive MAC and energy subsystem.

Energy functions work in SI units (seconds, volts, amperes, farads); MAC timers
are integer nanoseconds on the engine clock.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .frame_codec import Frame
from .medium import ChannelState, SubstrateModel, rssi
from .sensing import IntruderState, SensingModel, perturbed_rssi

logger = logging.getLogger(__name__)


class NeuronError(RuntimeError):
    pass


class IllegalTransition(NeuronError):
    pass


class NoCarrier(NeuronError):
    pass


class FitDiverged(NeuronError):
    pass


class Mode(str, Enum):
    OFF = "OFF"
    HARVEST = "HARVEST"
    LISTEN = "LISTEN"
    TX_PREAMBLE = "TX_PREAMBLE"
    ARB_CHECK = "ARB_CHECK"
    TX_FRAME = "TX_FRAME"
    RX_FRAME = "RX_FRAME"
    SENSE = "SENSE"


class Antenna(str, Enum):
    HARVESTER = "HARVESTER"
    TX = "TX"
    RX = "RX"


ANTENNA_OF_MODE: Dict[Mode, Antenna] = {
    Mode.OFF: Antenna.HARVESTER,
    Mode.HARVEST: Antenna.HARVESTER,
    Mode.LISTEN: Antenna.RX,
    Mode.TX_PREAMBLE: Antenna.TX,
    Mode.ARB_CHECK: Antenna.RX,
    Mode.TX_FRAME: Antenna.TX,
    Mode.RX_FRAME: Antenna.RX,
    Mode.SENSE: Antenna.RX,
}


@dataclass(frozen=True)
class LoadCurrents:
    listen: float = config.I_LISTEN_A
    rx: float = config.I_RX_A
    tx: float = config.I_TX_A
    off: float = config.I_OFF_A
    sense: float = config.I_SENSE_A

    def __post_init__(self) -> None:
        for name in ("listen", "rx", "tx", "off", "sense"):
            if getattr(self, name) < 0:
                raise NeuronError(f"load current {name} must be >= 0")

    def for_mode(self, mode: Mode) -> float:
        if mode in (Mode.TX_PREAMBLE, Mode.TX_FRAME):
            return self.tx
        if mode in (Mode.ARB_CHECK, Mode.RX_FRAME):
            return self.rx
        if mode is Mode.SENSE:
            return self.sense
        if mode is Mode.OFF:
            return self.off
        return self.listen


DEFAULT_LOADS = LoadCurrents()
_HALF_CELL_NS = config.CELL_NS // 2


@dataclass(frozen=True)
class MacTiming:
    """MAC windows. The turnaround starts when the last preamble ON half ends,
    so the check window opens while a one-cell-longer preamble is still ON."""

    t_idle_ns: int = config.T_IDLE_NS
    t_turn_ns: int = config.T_TURN_NS
    t_check_ns: int = config.T_CHECK_NS

    def __post_init__(self) -> None:
        if min(self.t_idle_ns, self.t_turn_ns, self.t_check_ns) < 0:
            raise NeuronError("MAC timings must be >= 0")
        if self.t_turn_ns > _HALF_CELL_NS:
            raise NeuronError(f"t_turn_ns must fit in the final OFF half of a preamble cell ({_HALF_CELL_NS} ns)")
        if self.t_turn_ns + self.t_check_ns <= _HALF_CELL_NS:
            raise NeuronError("check window ends before the preamble does")

    @property
    def check_delay_ns(self) -> int:
        """From PREAMBLE_DONE to the end of the check window."""
        return self.t_turn_ns + self.t_check_ns - _HALF_CELL_NS


@dataclass(frozen=True)
class NeuronConfig:
    node_id: int
    position: float
    priority: int
    capacitor_f: float = config.DEFAULT_CAPACITOR_F
    v_on: float = config.V_ON
    v_off: float = config.V_OFF
    loads: LoadCurrents = DEFAULT_LOADS
    timing: MacTiming = MacTiming()
    is_coordinator: bool = False
    supply: str = "external"
    harvest_distance_m: Optional[float] = None
    harvester: Optional["HarvesterModel"] = None

    def __post_init__(self) -> None:
        if not self.v_off < self.v_on:
            raise NeuronError(f"node {self.node_id}: v_off must be below v_on")
        if self.capacitor_f <= 0:
            raise NeuronError(f"node {self.node_id}: capacitor must be > 0")
        if self.supply not in ("external", "harvest"):
            raise NeuronError(f"node {self.node_id}: unknown supply {self.supply!r}")

    @property
    def externally_powered(self) -> bool:
        return self.is_coordinator or self.supply == "external"


@dataclass(frozen=True)
class HarvesterModel:
    v_inf: float
    r_s: float
    leak_per_farad: float = 0.0

    def __post_init__(self) -> None:
        if self.v_inf <= 0 or self.r_s <= 0 or self.leak_per_farad < 0:
            raise NeuronError("harvester needs v_inf > 0, r_s > 0, leakage >= 0")

    @property
    def drive_a(self) -> float:
        """Short-circuit current V_inf / R_s."""
        return self.v_inf / self.r_s

    def i_leak(self, capacitor_f: float) -> float:
        return self.leak_per_farad * capacitor_f

    def harvest_current(self, v_cap: float) -> float:
        return (self.v_inf - v_cap) / self.r_s

    def steady_state(self, capacitor_f: float, i_load: float) -> float:
        return self.v_inf - self.r_s * (i_load + self.i_leak(capacitor_f))


@dataclass(frozen=True)
class EnergyState:
    v_cap: float
    alive: bool = False

    def __post_init__(self) -> None:
        if self.v_cap < 0:
            raise NeuronError("v_cap must be >= 0")


def harvests(mode: Mode) -> bool:
    return ANTENNA_OF_MODE[mode] is Antenna.HARVESTER


def _hysteresis(alive: bool, v_cap: float, v_on: float, v_off: float) -> bool:
    if not alive and v_cap >= v_on:
        return True
    if alive and v_cap < v_off:
        return False
    return alive


def voltage_after(
    v0: float,
    harvester: Optional[HarvesterModel],
    capacitor_f: float,
    i_load: float,
    dt_s: float,
) -> float:
    """Exact solution of C dV/dt = (V_inf - V)/R_s - I_load - I_leak, clamped at 0."""
    if dt_s <= 0:
        return v0
    if harvester is None:
        return max(0.0, v0 - i_load * dt_s / capacitor_f)
    v_ss = harvester.steady_state(capacitor_f, i_load)
    tau = harvester.r_s * capacitor_f
    return max(0.0, v_ss + (v0 - v_ss) * math.exp(-dt_s / tau))


def energy_step(
    state: EnergyState,
    mode: Mode,
    harvester: Optional[HarvesterModel],
    capacitor_f: float,
    dt_s: float,
    loads: LoadCurrents = DEFAULT_LOADS,
    v_on: float = config.V_ON,
    v_off: float = config.V_OFF,
) -> EnergyState:
    if dt_s < 0:
        raise NeuronError("dt must be >= 0")
    if dt_s == 0:
        return state
    source = harvester if harvests(mode) else None
    i_load = loads.for_mode(mode)
    if source is None and harvester is not None:
        # leakage does not depend on the antenna position
        i_load += harvester.i_leak(capacitor_f)
    v = voltage_after(state.v_cap, source, capacitor_f, i_load, dt_s)
    return EnergyState(v_cap=v, alive=_hysteresis(state.alive, v, v_on, v_off))


def time_to_voltage(
    harvester: Optional[HarvesterModel],
    capacitor_f: float,
    i_load: float,
    from_v: float,
    to_v: float,
) -> Optional[float]:
    """Seconds to move from ``from_v`` to ``to_v``; None when the target is never reached."""
    if from_v < 0:
        raise NeuronError("from_v must be >= 0")
    if from_v == to_v:
        return 0.0
    if harvester is None:
        if to_v > from_v or i_load <= 0:
            return None
        return (from_v - to_v) * capacitor_f / i_load
    v_ss = harvester.steady_state(capacitor_f, i_load)
    tau = harvester.r_s * capacitor_f
    if to_v > from_v:
        if v_ss <= to_v:
            return None
        return tau * math.log((v_ss - from_v) / (v_ss - to_v))
    if v_ss >= to_v:
        return None
    return tau * math.log((from_v - v_ss) / (to_v - v_ss))


# --- Harvester fit ---

_FIT_PENALTY = 1e6


def _predicted_charge_times(v_inf, r_s, leak, caps, target_v: float, i_load: float):
    v_ss = v_inf - r_s * (i_load + leak * caps)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v_ss > target_v, v_ss / (v_ss - target_v), np.nan)
        return r_s * caps * np.log(ratio)


def _fit_cost(v_inf, r_s, leak, caps, times, target_v: float, i_load: float):
    pred = _predicted_charge_times(v_inf, r_s, leak, caps, target_v, i_load)
    rel = pred / times - 1.0
    return np.where(np.isnan(rel), _FIT_PENALTY, rel ** 2).sum(axis=-1)


def fit_harvester(
    observations: Sequence[Tuple[float, float]],
    *,
    v_inf: Optional[float] = None,
    leak_per_farad: Optional[float] = None,
    target_v: float = config.V_ON,
    i_load: float = config.I_OFF_A,
    max_iterations: int = config.FIT_MAX_ITERATIONS,
) -> HarvesterModel:
    """Fit (V_inf, R_s, leakage) to (capacitance, charge time 0 V -> target) pairs.

    Minimizes the squared relative error of predicted charge times: a log-grid
    search, then a deterministic coordinate descent with a shrinking step.
    """
    obs = [(float(c), float(t)) for c, t in observations]
    free = ["r_s"] + (["v_inf"] if v_inf is None else []) + (["leak"] if leak_per_farad is None else [])
    if not obs or (len(obs) < 2 and len(free) > 1):
        raise NeuronError(f"{len(obs)} observation(s) cannot determine {len(free)} parameters")
    if any(c <= 0 or t <= 0 for c, t in obs):
        raise NeuronError("capacitances and charge times must be > 0")
    caps = np.array([c for c, _ in obs])
    times = np.array([t for _, t in obs])

    v_grid = np.array([v_inf]) if v_inf is not None else np.geomspace(target_v * 1.02, target_v * 8.0, 25)
    r_grid = np.geomspace(1e1, 1e8, 71)
    l_grid = (
        np.array([leak_per_farad])
        if leak_per_farad is not None
        else np.concatenate(([0.0], np.geomspace(1e-5, 1.0, 21)))
    )
    vv, rr, ll = np.meshgrid(v_grid, r_grid, l_grid, indexing="ij")
    grid_cost = _fit_cost(vv[..., None], rr[..., None], ll[..., None], caps, times, target_v, i_load)
    idx = np.unravel_index(int(np.argmin(grid_cost)), grid_cost.shape)
    best = {"v_inf": float(vv[idx]), "r_s": float(rr[idx]), "leak": float(ll[idx])}

    def cost(p: Dict[str, float]) -> float:
        return float(_fit_cost(p["v_inf"], p["r_s"], p["leak"], caps, times, target_v, i_load))

    current = cost(best)
    leak_unit = max(best["leak"], 1e-4)
    scale = 0.5
    iterations = 0
    while iterations < max_iterations and scale > 1e-10:
        improved = False
        for name in free:
            if name == "leak":
                candidates = [best["leak"] + scale * leak_unit, max(0.0, best["leak"] - scale * leak_unit)]
            else:
                candidates = [best[name] * (1.0 + scale), best[name] / (1.0 + scale)]
            for value in candidates:
                iterations += 1
                trial = dict(best, **{name: value})
                trial_cost = cost(trial)
                if trial_cost < current:
                    best, current, improved = trial, trial_cost, True
                    break
        if not improved:
            scale *= 0.5

    pred = _predicted_charge_times(best["v_inf"], best["r_s"], best["leak"], caps, target_v, i_load)
    rel = np.abs(pred / times - 1.0)
    if np.any(np.isnan(rel)) or float(np.max(rel)) > config.FIT_MAX_REL_ERROR:
        raise FitDiverged(f"fit residual {np.nanmax(rel):.2%} exceeds {config.FIT_MAX_REL_ERROR:.0%}")
    logger.debug("fit_harvester: %s cost=%.3g iterations=%d", best, current, iterations)
    return HarvesterModel(v_inf=best["v_inf"], r_s=best["r_s"], leak_per_farad=best["leak"])


# --- Packet budget ---


def packet_energy(
    t_active_s: float,
    v_supply: float = config.V_ON,
    i_tx: float = config.I_TX_A,
    overhead_a: float = config.SWITCHING_OVERHEAD_A,
) -> float:
    return (i_tx + overhead_a) * v_supply * t_active_s


def active_time_for(
    e_pkt: float,
    v_supply: float = config.V_ON,
    i_tx: float = config.I_TX_A,
    overhead_a: float = config.SWITCHING_OVERHEAD_A,
) -> float:
    return e_pkt / ((i_tx + overhead_a) * v_supply)


def sustainable_packet_rate(
    harvester: Optional[HarvesterModel],
    capacitor_f: float,
    e_pkt: float,
    overhead: float = 0.0,
    v_op: float = config.V_ON,
    i_idle: float = config.I_LISTEN_A,
) -> float:
    """Packets/s balancing harvested power at ``v_op`` against per-packet energy
    (plus ``overhead`` joules per packet) and idle listening."""
    if e_pkt <= 0:
        raise NeuronError("e_pkt must be > 0")
    if harvester is None:
        return 0.0
    net = harvester.harvest_current(v_op) - harvester.i_leak(capacitor_f) - i_idle
    if net <= 0:
        return 0.0
    return net * v_op / (e_pkt + overhead)


def simulated_packet_rate(
    harvester: Optional[HarvesterModel],
    capacitor_f: float,
    e_pkt: float,
    loads: LoadCurrents = DEFAULT_LOADS,
    v_on: float = config.V_ON,
    v_off: float = config.V_OFF,
) -> float:
    """Closed-loop duty cycle: transmit at V_on, recover to V_on while harvesting."""
    if e_pkt <= 0:
        raise NeuronError("e_pkt must be > 0")
    if harvester is None:
        return 0.0
    t_active = active_time_for(e_pkt, v_supply=v_on, i_tx=loads.tx)
    after_tx = energy_step(
        EnergyState(v_on, alive=True), Mode.TX_FRAME, harvester, capacitor_f, t_active, loads, v_on, v_off
    )
    if not after_tx.alive:
        return 0.0
    recovery = time_to_voltage(harvester, capacitor_f, loads.for_mode(Mode.HARVEST), after_tx.v_cap, v_on)
    if recovery is None:
        return 0.0
    return 1.0 / (t_active + recovery)


# --- MAC ---


class MacEventKind(str, Enum):
    TX_REQUEST = "TX_REQUEST"
    CHANNEL_IDLE_ELAPSED = "CHANNEL_IDLE_ELAPSED"
    PREAMBLE_DONE = "PREAMBLE_DONE"
    CHECK_RESULT = "CHECK_RESULT"
    FRAME_DONE = "FRAME_DONE"
    RX_START = "RX_START"
    RX_DONE = "RX_DONE"
    BROWNOUT = "BROWNOUT"
    ACTIVATE = "ACTIVATE"
    SENSE_START = "SENSE_START"
    SENSE_STOP = "SENSE_STOP"


class TimerKind(str, Enum):
    IDLE_WAIT = "IDLE_WAIT"
    PREAMBLE_DONE = "PREAMBLE_DONE"
    CHECK_WINDOW_END = "CHECK_WINDOW_END"
    FRAME_DONE = "FRAME_DONE"
    ACTIVATE = "ACTIVATE"


@dataclass(frozen=True)
class QueuedFrame:
    frame: Frame
    src: int
    enqueue_ns: int
    seq: int = 0


@dataclass(frozen=True)
class MacEvent:
    kind: MacEventKind
    frame: Optional[QueuedFrame] = None
    result: Optional[ChannelState] = None


@dataclass(frozen=True)
class MacState:
    queue: Tuple[QueuedFrame, ...] = ()
    deferrals: int = 0
    preamble_start_ns: Optional[int] = None
    attempts: int = 0

    @property
    def head(self) -> Optional[QueuedFrame]:
        return self.queue[0] if self.queue else None

    def enqueue(self, item: QueuedFrame) -> "MacState":
        return replace(self, queue=self.queue + (item,))


@dataclass(frozen=True)
class Timer:
    delay_ns: int
    kind: TimerKind


@dataclass(frozen=True)
class Transition:
    mac: MacState
    mode: Mode
    timers: Tuple[Timer, ...] = ()


@dataclass
class Neuron:
    """Engine-owned node state."""

    config: NeuronConfig
    mode: Mode = Mode.LISTEN
    mac: MacState = field(default_factory=MacState)
    energy: EnergyState = field(default_factory=lambda: EnergyState(config.EXTERNAL_SUPPLY_V, True))
    harvester: Optional[HarvesterModel] = None

    @property
    def node_id(self) -> int:
        return self.config.node_id

    @property
    def alive(self) -> bool:
        return self.mode is not Mode.OFF


_IDLE_WAIT = Timer(0, TimerKind.IDLE_WAIT)


def _listen(mac: MacState) -> Transition:
    return Transition(mac, Mode.LISTEN, (_IDLE_WAIT,) if mac.queue else ())


def mac_transition(node: Neuron, event: MacEvent, now_ns: int = 0) -> Transition:
    """Pure MAC step: returns the next MacState, mode and timers to schedule."""
    mode, mac, kind = node.mode, node.mac, event.kind
    timing = node.config.timing

    def illegal() -> IllegalTransition:
        return IllegalTransition(f"node {node.node_id}: {kind.value} in mode {mode.value}")

    if kind is MacEventKind.BROWNOUT:
        return Transition(replace(mac, preamble_start_ns=None), Mode.OFF)
    if kind is MacEventKind.ACTIVATE:
        if mode is Mode.OFF:
            return Transition(mac, Mode.HARVEST, (Timer(config.BOOT_NS, TimerKind.ACTIVATE),))
        if mode is Mode.HARVEST:
            return _listen(mac)
        raise illegal()
    if mode is Mode.OFF:
        raise illegal()

    if kind is MacEventKind.TX_REQUEST:
        if event.frame is None:
            raise NeuronError("TX_REQUEST without a frame")
        new_mac = mac.enqueue(event.frame)
        if mode is Mode.LISTEN and not mac.queue:
            return Transition(new_mac, mode, (_IDLE_WAIT,))
        return Transition(new_mac, mode)

    if kind is MacEventKind.CHANNEL_IDLE_ELAPSED:
        if mode is not Mode.LISTEN:
            raise illegal()
        if mac.head is None:
            return Transition(mac, Mode.LISTEN)
        cells = mac.head.frame.priority
        new_mac = replace(mac, preamble_start_ns=now_ns, attempts=mac.attempts + 1)
        return Transition(new_mac, Mode.TX_PREAMBLE, (Timer(cells * config.CELL_NS, TimerKind.PREAMBLE_DONE),))

    if kind is MacEventKind.PREAMBLE_DONE:
        if mode is not Mode.TX_PREAMBLE:
            raise illegal()
        return Transition(mac, Mode.ARB_CHECK, (Timer(timing.check_delay_ns, TimerKind.CHECK_WINDOW_END),))

    if kind is MacEventKind.CHECK_RESULT:
        if mode is not Mode.ARB_CHECK or event.result is None:
            raise illegal()
        if event.result is ChannelState.BUSY:
            return _listen(replace(mac, deferrals=mac.deferrals + 1, preamble_start_ns=None))
        return Transition(mac, Mode.TX_FRAME, (Timer(config.FRAME_NS, TimerKind.FRAME_DONE),))

    if kind is MacEventKind.FRAME_DONE:
        if mode is not Mode.TX_FRAME:
            raise illegal()
        return _listen(replace(mac, queue=mac.queue[1:], preamble_start_ns=None))

    if kind is MacEventKind.RX_START:
        if mode is not Mode.LISTEN:
            raise illegal()
        return Transition(mac, Mode.RX_FRAME)

    if kind is MacEventKind.RX_DONE:
        if mode is not Mode.RX_FRAME:
            raise illegal()
        return _listen(mac)

    if kind is MacEventKind.SENSE_START:
        if mode is not Mode.LISTEN:
            raise illegal()
        return Transition(mac, Mode.SENSE)

    if kind is MacEventKind.SENSE_STOP:
        if mode is not Mode.SENSE:
            raise illegal()
        return _listen(mac)

    raise illegal()


def sense_sample(
    node: Neuron,
    substrate: SubstrateModel,
    intruder: IntruderState,
    rng: np.random.Generator,
    carrier_pos: Optional[float],
    model: Optional[SensingModel] = None,
) -> float:
    """One ADC sample of the perturbed carrier at this node."""
    if node.mode is not Mode.SENSE:
        raise IllegalTransition(f"node {node.node_id}: sampling outside SENSE mode")
    if carrier_pos is None:
        raise NoCarrier(f"node {node.node_id}: no carrier to sense")
    model = model or SensingModel()
    baseline = rssi(substrate, carrier_pos, node.config.position)
    volts = perturbed_rssi(baseline, model, intruder, node.config.position, carrier_pos)
    return volts + float(rng.normal(0.0, substrate.noise_sigma_v))
