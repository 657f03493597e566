"""Experiment presets: one per measured figure or table, each writing CSVs and
optionally checking its acceptance thresholds."""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config, seeding
from .calibration import calibrate, calibrate_packet_energy, charge_time_table, packet_rate_table
from .engine import Metrics, ScenarioConfig, replicate, run
from .neuron import time_to_voltage
from .reporting import (
    atomic_write_text,
    ensure_dir,
    fmt_opt,
    fmt_ratio,
    fmt_volts,
    write_csv,
    write_detections_csv,
    write_energy_csv,
    write_frames_csv,
    write_sensing_csv,
    write_summary_csv,
    write_transmissions_csv,
)
from .scenario import load_scenario
from .sensing import (
    detect_events,
    detection_threshold,
    resolution_curve,
    swing_map,
    tracking_resolution,
    window_swings,
)
from .stats import affine_fit, proportion_trend, wilson_interval

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2


@dataclass
class PresetContext:
    seed: Optional[int]
    out_dir: Path
    runs: Optional[int] = None
    overrides: Sequence[str] = ()
    workers: int = 1
    failures: List[str] = field(default_factory=list)
    files: List[str] = field(default_factory=list)

    def path(self, name: str) -> str:
        p = str(self.out_dir / name)
        self.files.append(p)
        return p

    def expect(self, ok: bool, message: str) -> None:
        if not ok:
            self.failures.append(message)

    def scenario(self, name: str, extra: Sequence[str] = ()) -> Tuple[ScenarioConfig, int]:
        overrides = list(self.overrides) + list(extra)
        if self.seed is not None:
            overrides.append(f"run.seed={self.seed}")
        scenario, runs = load_scenario(config.SCENARIO_DIR / f"{name}.ini", overrides)
        return scenario, self.runs or runs


def _fmt_m(value: float) -> str:
    return f"{value:.4f}"


def _fmt_s(value: Optional[float]) -> str:
    return fmt_opt(value, lambda v: f"{v:.6f}")


# --- communication ---


def fig7_reliability(ctx: PresetContext) -> None:
    distances = (0.5, 1.0, 1.5, 2.0)
    rows, delivered, totals = [], [], []
    for i, d in enumerate(distances):
        scenario, _ = ctx.scenario("fig7_reliability", [f"nodes.1.position={d}"])
        scenario = replace(scenario, seed=seeding.sweep_seed(scenario.seed, i))
        logger.info("Stage: %d frames at %.2f m", len(scenario.traffic.sends), d)
        metrics = run(scenario)
        counts = metrics.summary()
        n = int(counts["delivered"] + counts["corrupted"])
        ok = int(counts["delivered"])
        lo, hi = wilson_interval(ok, n)
        pdr = ok / n if n else 0.0
        rows.append((f"{d:.2f}", n, ok, fmt_ratio(pdr), fmt_ratio(lo), fmt_ratio(hi)))
        delivered.append(ok)
        totals.append(n)
        ctx.expect(pdr >= 0.99, f"packet delivery {pdr:.4f} < 0.99 at {d} m")
    write_csv(ctx.path("reliability.csv"), ("distance_m", "frames", "delivered", "pdr", "ci_low", "ci_high"), rows)
    slope, se, significant = proportion_trend(distances, delivered, totals)
    write_summary_csv(
        ctx.path("summary.csv"),
        [(f"pdr_{d:.2f}m", ok / n, *wilson_interval(ok, n)) for d, ok, n in zip(distances, delivered, totals)]
        + [("pdr_slope_per_m", slope, slope - config.CONFIDENCE_Z * se, slope + config.CONFIDENCE_Z * se)],
    )
    ctx.expect(not significant, f"significant distance trend in delivery ratio (slope {slope:.5f}/m)")


def _latency_rows(metrics: Metrics) -> List[Tuple[int, int, int]]:
    replies = [r for r in metrics.frames if r.is_unicast and r.latency_ns is not None]
    return sorted(((r.src, r.priority, r.latency_ns) for r in replies), key=lambda row: -row[1])


def fig8_latency(ctx: PresetContext) -> None:
    scenario, _ = ctx.scenario("fig8_latency")
    metrics = run(scenario)
    rows = _latency_rows(metrics)
    write_frames_csv(ctx.path("frames.csv"), metrics.frames)
    write_csv(
        ctx.path("latency.csv"),
        ("rank", "src", "priority", "latency_ns"),
        ((rank, src, prio, lat) for rank, (src, prio, lat) in enumerate(rows, start=1)),
    )
    contenders = len(scenario.repliers(scenario.traffic.requests[0].fanout)) if scenario.traffic.requests else 0
    ctx.expect(len(rows) == contenders, f"{len(rows)} of {contenders} replies delivered")
    if len(rows) >= 2:
        slope, intercept, r2 = affine_fit(range(1, len(rows) + 1), [lat for _, _, lat in rows])
        write_summary_csv(
            ctx.path("summary.csv"),
            [("slope_ns", slope, slope, slope), ("intercept_ns", intercept, intercept, intercept), ("r2", r2, r2, r2)],
            fmt=lambda v: f"{v:.6f}",
        )
        ctx.expect(r2 > 0.99, f"latency vs rank R^2 {r2:.4f} <= 0.99")
        latencies = [lat for _, _, lat in rows]
        ctx.expect(latencies == sorted(latencies), "delivery order is not descending priority")


def fig9_contention(ctx: PresetContext) -> None:
    rows, joint = [], []
    summary = []
    for n in range(2, 10):
        scenario, runs = ctx.scenario("fig9_contention", [f"traffic.request=0:{n}"])
        logger.info("Stage: %d contenders, %d runs", n, runs)
        agg = replicate(scenario, runs, workers=ctx.workers)
        row = [n]
        for metric in ("communication", "contention", "joint"):
            mean, lo, hi = agg.values[metric]
            row += [fmt_ratio(mean), fmt_ratio(lo), fmt_ratio(hi)]
            summary.append((f"{metric}_{n}", mean, lo, hi))
        rows.append(row)
        joint.append(agg.mean("joint"))
        ctx.expect(agg.mean("communication") >= 0.95, f"communication reliability {agg.mean('communication'):.4f} < 0.95 at N={n}")
    header = ["contenders"]
    for metric in ("communication", "contention", "joint"):
        header += [metric, f"{metric}_ci_low", f"{metric}_ci_high"]
    write_csv(ctx.path("contention.csv"), header, rows)
    write_summary_csv(ctx.path("summary.csv"), summary)
    ctx.expect(all(b <= a for a, b in zip(joint, joint[1:])), "joint reliability is not monotone non-increasing")
    ctx.expect(min(joint[4:]) < 0.90, "joint reliability never drops below 0.90 for 6-9 contenders")


# --- energy ---


def _activation_rows(metrics: Metrics, scenario: ScenarioConfig) -> Dict[int, Optional[float]]:
    first: Dict[int, Optional[float]] = {n.node_id: None for n in scenario.nodes if not n.externally_powered}
    for t, nid in metrics.activations:
        if first.get(nid) is None and nid in first:
            first[nid] = t / config.NS_PER_S
    return first


def fig10_charging(ctx: PresetContext) -> None:
    scenario, _ = ctx.scenario("fig10_charging")
    metrics = run(scenario)
    write_energy_csv(ctx.path("energy.csv"), metrics.energy_trace)
    first = _activation_rows(metrics, scenario)
    rows = []
    for nid, t in sorted(first.items()):
        node = scenario.node(nid)
        rows.append((nid, f"{node.harvest_distance_m:.2f}", f"{node.capacitor_f * 1e6:.0f}", _fmt_s(t)))
        near = node.harvest_distance_m <= 1.5
        if near or math.isclose(node.capacitor_f, config.FAR_ACTIVATES_F):
            ctx.expect(t is not None, f"node {nid} ({node.harvest_distance_m} m) never activates")
        if not near and math.isclose(node.capacitor_f, config.FAR_FAILS_F):
            ctx.expect(t is None, f"node {nid} ({node.harvest_distance_m} m, 470 uF) activates")
    write_csv(ctx.path("activation.csv"), ("node_id", "distance_m", "capacitance_uf", "activation_s"), rows)


def table3_chargetimes(ctx: PresetContext) -> None:
    logger.info("Stage 1: engine charge run")
    scenario, _ = ctx.scenario("table3_chargetimes")
    metrics = run(scenario)
    first = _activation_rows(metrics, scenario)
    observed = {
        (d, round(c * 1e6)): t for d, obs in config.CHARGE_TIME_OBSERVATIONS.items() for c, t in obs
    }
    rows = []
    for nid, t in sorted(first.items()):
        node = scenario.node(nid)
        key = (node.harvest_distance_m, round(node.capacitor_f * 1e6))
        obs = observed.get(key)
        if obs is None:
            continue
        rel = None if t is None else t / obs - 1.0
        rows.append((f"{key[0]:.2f}", key[1], f"{obs:.2f}", _fmt_s(t), fmt_opt(rel, fmt_ratio)))
        ctx.expect(rel is not None and abs(rel) <= 0.30, f"charge time {key} off by {rel}")
    rows.sort()
    write_csv(ctx.path("chargetimes.csv"), ("distance_m", "capacitance_uf", "observed_s", "predicted_s", "rel_error"), rows)
    ctx.expect(len(rows) == 6, f"{len(rows)} of 6 charge-time cells simulated")
    logger.info("Stage 2: calibration")
    cal = calibrate()
    far = cal.harvester_at(config.FAR_DISTANCE_M)
    t_far = time_to_voltage(far, config.FAR_FAILS_F, config.I_OFF_A, 0.0, config.V_ON)
    ctx.expect(
        t_far is None or t_far > config.ACTIVATION_HORIZON_S, "470 uF activates at the far distance within the horizon"
    )
    closed_form = {(r.distance_m, round(r.capacitance_f * 1e6)): r.predicted_s for r in charge_time_table(cal)}
    write_summary_csv(
        ctx.path("summary.csv"),
        [("leak_per_farad", cal.leak_per_farad, *cal.leak_bounds)]
        + [(f"r_s_{d:.2f}m", h.r_s, h.r_s, h.r_s) for d, h in sorted(cal.harvesters.items())]
        + [(f"closed_form_{d:.2f}m_{c}uF", t or 0.0, t or 0.0, t or 0.0) for (d, c), t in sorted(closed_form.items())],
        fmt=lambda v: f"{v:.6g}",
    )


def table2_rates(ctx: PresetContext) -> None:
    logger.info("Stage 1: calibration")
    cal = calibrate()
    e_pkt = calibrate_packet_energy(cal)
    rows = packet_rate_table(cal, e_pkt)
    write_csv(
        ctx.path("rates.csv"),
        ("distance_m", "capacitance_uf", "observed", "analytic", "simulated", "rel_error", "flag"),
        (
            (
                f"{r.distance_m:.2f}",
                f"{r.capacitance_f * 1e6:.0f}",
                f"{r.observed:.1f}",
                f"{r.analytic:.4f}",
                f"{r.simulated:.4f}",
                fmt_ratio(r.rel_error),
                r.flag,
            )
            for r in rows
        ),
    )
    write_summary_csv(ctx.path("summary.csv"), [("e_pkt_j", e_pkt, e_pkt, e_pkt)], fmt=lambda v: f"{v:.6e}")
    for r in rows:
        ctx.expect(r.flag != "miss", f"rate at {r.distance_m} m / {r.capacitance_f * 1e6:.0f} uF off by {r.rel_error:.1%}")
        ctx.expect(r.loop_agreement <= 0.05, f"closed-loop rate disagrees by {r.loop_agreement:.1%}")


# --- sensing ---


def fig11_touch(ctx: PresetContext) -> None:
    scenario, _ = ctx.scenario("fig11_touch")
    metrics = run(scenario)
    model = scenario.sensing.model
    sigma = scenario.substrate.noise_sigma_v
    times = [t for t, _ in metrics.sense_samples]
    volts = [v for _, v in metrics.sense_samples]
    detections = detect_events(times, volts, sigma, model.detect_k, model.window_ns)
    write_sensing_csv(ctx.path("sensing.csv"), metrics.sense_samples)
    write_detections_csv(ctx.path("detections.csv"), detections)
    ctx.expect(model.delta_v0 >= 10 * sigma, "full-touch swing below ten noise sigmas")
    ctx.expect(any(d.peak_swing_v >= 0.1 for d in detections), "no detection with at least 100 mV swing")

    # pure-noise false detections on an independent stream
    noise = seeding.stream(scenario.seed, seeding.NOISE_CHECK_STREAM).normal(0.0, sigma, 100_000)
    n = max(2, model.samples_per_window)
    n -= n % 2
    swings = window_swings(noise, n, max(1, n // 8))
    rate = float(np.mean(swings > detection_threshold(sigma, model.detect_k, n)))
    peak = max((d.peak_swing_v for d in detections), default=0.0)
    write_summary_csv(
        ctx.path("summary.csv"),
        [
            ("detections", float(len(detections)), float(len(detections)), float(len(detections))),
            ("peak_swing_v", peak, peak, peak),
            ("noise_false_rate", rate, rate, rate),
        ],
        fmt=lambda v: f"{v:.6g}",
    )
    ctx.expect(rate < 1e-3, f"false detection rate {rate:.2e} on pure noise")


def fig12_resolution(ctx: PresetContext) -> None:
    scenario, _ = ctx.scenario("fig12_resolution")
    model = scenario.sensing.model
    sigma = scenario.substrate.noise_sigma_v
    distances = [round(0.01 * i, 2) for i in range(0, 101)]
    curve = resolution_curve(model, sigma, model.detect_k, distances)
    write_csv(
        ctx.path("resolution.csv"),
        ("r_m", "resolution_m"),
        ((f"{r:.2f}", fmt_opt(res, _fmt_m)) for r, res in curve),
    )
    coord = scenario.coordinator
    rx = scenario.node(scenario.sensing.node_id) if scenario.sensing.node_id is not None else None
    tx_pos = coord.position if coord else 0.0
    rx_pos = rx.position if rx else scenario.substrate.length_m
    positions = [round(0.1 * i, 1) for i in range(0, int(scenario.substrate.length_m * 10) + 1)]
    sweep = swing_map(model, positions, (0.0, 0.1, 0.25, 0.5), rx_pos, tx_pos)
    write_csv(ctx.path("swing_map.csv"), ("L_m", "r_m", "delta_v"), ((f"{p:.1f}", f"{r:.2f}", fmt_volts(v)) for p, r, v in sweep))
    at_10cm = tracking_resolution(model, sigma, model.detect_k, 0.10)
    ctx.expect(at_10cm <= 0.01, f"resolution at 10 cm is {at_10cm * 1000:.1f} mm")
    outward = [res for r, res in curve if r >= model.r0_m and res is not None]
    ctx.expect(all(b >= a for a, b in zip(outward, outward[1:])), "resolution is not monotone in distance")


PRESETS: Dict[str, Callable[[PresetContext], None]] = {
    "fig7_reliability": fig7_reliability,
    "fig8_latency": fig8_latency,
    "fig9_contention": fig9_contention,
    "fig10_charging": fig10_charging,
    "table2_rates": table2_rates,
    "table3_chargetimes": table3_chargetimes,
    "fig11_touch": fig11_touch,
    "fig12_resolution": fig12_resolution,
}


def usage() -> str:
    return "usage: seth run <preset|config-path> [options]\npresets: " + ", ".join(PRESETS)


def _finish(ctx: PresetContext, name: str, check: bool) -> int:
    report = "\n".join(ctx.failures) if ctx.failures else "ok"
    atomic_write_text(ctx.path("checks.txt"), report + "\n")
    for p in ctx.files:
        print(f"Wrote: {p}")
    if ctx.failures:
        for message in ctx.failures:
            print(f"CHECK {'FAIL' if check else 'WARN'} [{name}]: {message}", file=sys.stderr)
        if check:
            return EXIT_CHECK_FAILED
    elif check:
        print(f"CHECK OK [{name}]")
    return EXIT_OK


def run_preset(
    name: str,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    check: bool = False,
    runs: Optional[int] = None,
    overrides: Sequence[str] = (),
    workers: int = 1,
) -> int:
    preset = PRESETS.get(name)
    if preset is None:
        print(f"Error: unknown preset {name!r}", file=sys.stderr)
        print(usage(), file=sys.stderr)
        return EXIT_ERROR
    target = Path(out_dir or config.env_out_dir()) / name
    ensure_dir(str(target))
    ctx = PresetContext(seed=seed, out_dir=target, runs=runs, overrides=tuple(overrides), workers=workers)
    logger.info("Preset %s -> %s", name, target)
    preset(ctx)
    return _finish(ctx, name, check)


def run_config(
    path: str,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    check: bool = False,
    runs: Optional[int] = None,
    overrides: Sequence[str] = (),
    workers: int = 1,
) -> int:
    """Run a scenario file: one run's CSVs, plus a replicate summary when runs > 1."""
    extra = list(overrides) + ([f"run.seed={seed}"] if seed is not None else [])
    scenario, file_runs = load_scenario(path, extra)
    runs = runs or file_runs
    target = Path(out_dir or config.env_out_dir()) / Path(path).stem
    ensure_dir(str(target))
    ctx = PresetContext(seed=seed, out_dir=target, runs=runs, overrides=tuple(overrides), workers=workers)
    metrics = run(scenario)
    write_frames_csv(ctx.path("frames.csv"), metrics.frames)
    write_energy_csv(ctx.path("energy.csv"), metrics.energy_trace)
    write_sensing_csv(ctx.path("sensing.csv"), metrics.sense_samples)
    write_transmissions_csv(ctx.path("transmissions.csv"), metrics.transmissions)
    if runs > 1:
        agg = replicate(scenario, runs, workers=workers)
        rows = [(k, *agg.values[k]) for k in sorted(agg.values)]
    else:
        rows = [(k, v, v, v) for k, v in sorted(metrics.summary().items())]
    write_summary_csv(ctx.path("summary.csv"), rows)
    return _finish(ctx, Path(path).stem, check)
