"""Scenario files: INI sections [substrate], [nodes.<id>], [traffic], [sensing], [run].

Example::

    [nodes.0]
    position = 0.0
    priority = 7
    coordinator = yes

    [nodes.1]
    position = 0.5
    priority = 1

    [traffic]
    request = 0:6

Times are integer nanoseconds (underscores allowed). List-valued traffic keys
take one entry per line.
"""
from __future__ import annotations

import configparser
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import config
from .engine import (
    CarrierWindow,
    ConfigInvalid,
    RequestSpec,
    ScenarioConfig,
    SendSpec,
    SensingSpec,
    Traffic,
)
from .medium import MediumError, SubstrateModel
from .neuron import HarvesterModel, LoadCurrents, MacTiming, NeuronConfig, NeuronError
from .sensing import SensingError, SensingModel, load_trajectory_csv, staircase_trajectory

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None, path: Optional[str] = None) -> None:
        where = f"{path or '<config>'}:{lineno}" if lineno is not None else (path or "<config>")
        super().__init__(f"{where}: {message}")
        self.lineno = lineno


class ValidationError(ConfigInvalid):
    pass


SUBSTRATE_KEYS = {
    "length_m": float,
    "resistance_per_m": float,
    "v_ref": float,
    "decay_per_m": float,
    "demod_threshold_v": float,
    "noise_sigma_v": float,
    "sense_error_prob": float,
    "frame_loss_prob": float,
    "burst_min_bits": int,
    "burst_max_bits": int,
}
NODE_KEYS = {
    "position",
    "priority",
    "capacitor_uf",
    "coordinator",
    "supply",
    "harvest_distance_m",
    "v_on",
    "v_off",
    "i_listen",
    "i_rx",
    "i_tx",
    "i_off",
    "i_sense",
    "t_idle_ns",
    "t_turn_ns",
    "t_check_ns",
    "v_inf",
    "r_s",
    "leak_per_farad",
}
TRAFFIC_KEYS = {"send", "periodic", "request", "carrier"}
SENSING_KEYS = {
    "node",
    "trajectory",
    "position_m",
    "stage_ns",
    "delta_v0",
    "r0_m",
    "alpha",
    "squeeze_gain_v",
    "g_floor",
    "sample_period_ns",
    "window_ns",
    "detect_k",
}
RUN_KEYS = {"duration_ns", "seed", "n_priority", "trace_period_ns", "lock_cells", "runs"}


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    return parser


class _Source:
    """Raw lines of a scenario file, for line-numbered diagnostics."""

    def __init__(self, text: str, path: Optional[str]) -> None:
        self.lines = text.splitlines()
        self.path = path

    def lineno(self, section: str, key: Optional[str] = None) -> Optional[int]:
        current = None
        for i, raw in enumerate(self.lines, start=1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if key is None and current == section:
                    return i
                continue
            if current == section and key is not None and line.split("=", 1)[0].strip() == key:
                return i
        return None

    def error(self, message: str, section: str, key: Optional[str] = None) -> ParseError:
        return ParseError(message, self.lineno(section, key), self.path)


def apply_overrides(parser: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """Apply ``section.key=value`` strings; node keys read ``nodes.<id>.<key>``."""
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r} is not section.key=value")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ParseError(f"override {item!r} names no section")
        section, key = target.strip().rsplit(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())
        logger.debug("override %s.%s = %s", section, key, value)


def _typed(src: _Source, section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "yes", "true", "on"):
                return True
            if lowered in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise src.error(f"{section}.{key}: cannot read {raw!r} as {kind.__name__}", section, key) from exc


def _entries(raw: str) -> List[str]:
    return [line.strip() for line in raw.splitlines() if line.strip()]


def _fields(src: _Source, key: str, entry: str, minimum: int, maximum: int) -> List[int]:
    parts = entry.split(":")
    if not minimum <= len(parts) <= maximum:
        raise src.error(f"traffic.{key}: {entry!r} needs {minimum}..{maximum} ':'-separated fields", "traffic", key)
    return [_typed(src, "traffic", key, p, int) for p in parts]


def _check_keys(src: _Source, section: str, keys: Iterable[str], allowed: Iterable[str]) -> None:
    allowed = set(allowed)
    for key in keys:
        if key not in allowed:
            raise ValidationError(f"{section}.{key}", f"unknown key (line {src.lineno(section, key)})")


def _substrate(src: _Source, parser: configparser.ConfigParser) -> SubstrateModel:
    if not parser.has_section("substrate"):
        return SubstrateModel()
    sec = parser["substrate"]
    _check_keys(src, "substrate", sec.keys(), SUBSTRATE_KEYS)
    values = {k: _typed(src, "substrate", k, sec[k], SUBSTRATE_KEYS[k]) for k in sec.keys()}
    try:
        return SubstrateModel(**values)
    except MediumError as exc:
        raise ValidationError("substrate", str(exc)) from exc


def _node(src: _Source, section: str, sec: configparser.SectionProxy) -> NeuronConfig:
    _check_keys(src, section, sec.keys(), NODE_KEYS)
    node_id = _typed(src, section, "id", section.split(".", 1)[1], int)
    if "position" not in sec or "priority" not in sec:
        raise ValidationError(f"{section}.position", "every node needs a position and a priority")

    def num(key: str, default: float) -> float:
        return _typed(src, section, key, sec[key], float) if key in sec else default

    loads = LoadCurrents(
        listen=num("i_listen", config.I_LISTEN_A),
        rx=num("i_rx", config.I_RX_A),
        tx=num("i_tx", config.I_TX_A),
        off=num("i_off", config.I_OFF_A),
        sense=num("i_sense", config.I_SENSE_A),
    )
    timing = MacTiming(
        t_idle_ns=int(num("t_idle_ns", config.T_IDLE_NS)),
        t_turn_ns=int(num("t_turn_ns", config.T_TURN_NS)),
        t_check_ns=int(num("t_check_ns", config.T_CHECK_NS)),
    )
    harvester = None
    if "r_s" in sec:
        harvester = HarvesterModel(
            v_inf=num("v_inf", config.HARVEST_V_INF), r_s=num("r_s", 1.0), leak_per_farad=num("leak_per_farad", 0.0)
        )
    coordinator = _typed(src, section, "coordinator", sec["coordinator"], bool) if "coordinator" in sec else False
    return NeuronConfig(
        node_id=node_id,
        position=_typed(src, section, "position", sec["position"], float),
        priority=_typed(src, section, "priority", sec["priority"], int),
        capacitor_f=num("capacitor_uf", config.DEFAULT_CAPACITOR_F * 1e6) * 1e-6,
        v_on=num("v_on", config.V_ON),
        v_off=num("v_off", config.V_OFF),
        loads=loads,
        timing=timing,
        is_coordinator=coordinator,
        supply=sec.get("supply", "external").strip(),
        harvest_distance_m=num("harvest_distance_m", 0.0) or None,
        harvester=harvester,
    )


def _nodes(src: _Source, parser: configparser.ConfigParser) -> Tuple[NeuronConfig, ...]:
    nodes = []
    for section in parser.sections():
        if section.startswith("nodes."):
            try:
                nodes.append(_node(src, section, parser[section]))
            except NeuronError as exc:
                raise ValidationError(section, str(exc)) from exc
    return tuple(sorted(nodes, key=lambda n: n.node_id))


def _traffic(src: _Source, parser: configparser.ConfigParser) -> Traffic:
    if not parser.has_section("traffic"):
        return Traffic()
    sec = parser["traffic"]
    _check_keys(src, "traffic", sec.keys(), TRAFFIC_KEYS)
    sends: List[SendSpec] = []
    for entry in _entries(sec.get("send", "")):
        f = _fields(src, "send", entry, 3, 4)
        sends.append(SendSpec(f[0], f[1], f[2], f[3] if len(f) > 3 else None))
    for entry in _entries(sec.get("periodic", "")):
        start, period, count, s, d, *prio = _fields(src, "periodic", entry, 5, 6)
        sends.extend(SendSpec(start + i * period, s, d, prio[0] if prio else None) for i in range(count))
    requests = [RequestSpec(*_fields(src, "request", e, 2, 2)) for e in _entries(sec.get("request", ""))]
    carriers = [CarrierWindow(*_fields(src, "carrier", e, 2, 2)) for e in _entries(sec.get("carrier", ""))]
    return Traffic(sends=tuple(sends), requests=tuple(requests), carriers=tuple(carriers))


def _sensing(src: _Source, parser: configparser.ConfigParser, base_dir: Path) -> SensingSpec:
    if not parser.has_section("sensing"):
        return SensingSpec()
    sec = parser["sensing"]
    _check_keys(src, "sensing", sec.keys(), SENSING_KEYS)

    def num(key: str, default, kind=float):
        return _typed(src, "sensing", key, sec[key], kind) if key in sec else default

    try:
        model = SensingModel(
            delta_v0=num("delta_v0", config.SENSE_DELTA_V0),
            r0_m=num("r0_m", config.SENSE_R0_M),
            alpha=num("alpha", config.SENSE_ALPHA),
            squeeze_gain_v=num("squeeze_gain_v", config.SENSE_SQUEEZE_GAIN_V),
            g_floor=num("g_floor", config.SENSE_G_FLOOR),
            sample_period_ns=num("sample_period_ns", config.SENSE_SAMPLE_PERIOD_NS, int),
            window_ns=num("window_ns", config.SENSE_WINDOW_NS, int),
            detect_k=num("detect_k", config.DETECT_K),
        )
        trajectory = None
        name = sec.get("trajectory", "").strip()
        if name == "staircase":
            trajectory = staircase_trajectory(num("position_m", 1.5), num("stage_ns", config.NS_PER_S, int))
        elif name:
            trajectory = load_trajectory_csv(base_dir / name)
    except SensingError as exc:
        raise ValidationError("sensing", str(exc)) from exc
    node = num("node", None, int)
    return SensingSpec(model=model, node_id=node, trajectory=trajectory)


def _run(src: _Source, parser: configparser.ConfigParser) -> Dict[str, int]:
    if not parser.has_section("run"):
        return {}
    sec = parser["run"]
    _check_keys(src, "run", sec.keys(), RUN_KEYS)
    return {k: _typed(src, "run", k, sec[k], int) for k in sec.keys()}


def _read(text: str, path: Optional[str], overrides: Sequence[str]) -> Tuple[_Source, configparser.ConfigParser]:
    parser = _new_parser()
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("content before the first [section]", exc.lineno, path) from exc
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ParseError(exc.message.split(":")[-1].strip(), exc.lineno, path) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", lineno, path) from exc
    apply_overrides(parser, overrides)
    for section in parser.sections():
        if section not in ("substrate", "traffic", "sensing", "run") and not section.startswith("nodes."):
            raise ParseError(f"unknown section [{section}]", _Source(text, path).lineno(section), path)
    return _Source(text, path), parser


def parse_config_text(
    text: str,
    base_dir: Optional[Path] = None,
    overrides: Sequence[str] = (),
    path: Optional[str] = None,
) -> Tuple[ScenarioConfig, int]:
    """Parse and validate; returns the scenario and its replicate count."""
    src, parser = _read(text, path, overrides)
    run_values = _run(src, parser)
    runs = run_values.pop("runs", 1)
    scenario = ScenarioConfig(
        substrate=_substrate(src, parser),
        nodes=_nodes(src, parser),
        traffic=_traffic(src, parser),
        sensing=_sensing(src, parser, base_dir or Path.cwd()),
        duration_ns=run_values.get("duration_ns", config.NS_PER_S),
        seed=run_values.get("seed", config.DEFAULT_SEED),
        n_priority=run_values.get("n_priority", config.N_PRIORITY),
        trace_period_ns=run_values.get("trace_period_ns", config.TRACE_PERIOD_NS),
        lock_cells=run_values.get("lock_cells", config.SFD_LOCK_CELLS),
    )
    try:
        scenario.validate()
    except ValidationError:
        raise
    except ConfigInvalid as exc:
        raise ValidationError(exc.field, str(exc).split(": ", 1)[-1]) from exc
    return scenario, runs


def parse_config(path, overrides: Sequence[str] = ()) -> ScenarioConfig:
    return load_scenario(path, overrides)[0]


def load_scenario(path, overrides: Sequence[str] = ()) -> Tuple[ScenarioConfig, int]:
    p = Path(path)
    if not p.is_file():
        raise ParseError("no such scenario file", path=str(p))
    text = p.read_text(encoding="utf-8")
    return parse_config_text(text, base_dir=p.parent, overrides=overrides, path=str(p))
