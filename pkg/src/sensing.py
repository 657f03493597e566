"""Capacitive presence/touch perturbation of the received carrier, event
detection and tracking resolution."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import config

logger = logging.getLogger(__name__)


class SensingError(ValueError):
    pass


class NotResolvable(SensingError):
    pass


@dataclass(frozen=True)
class SensingModel:
    delta_v0: float = config.SENSE_DELTA_V0
    r0_m: float = config.SENSE_R0_M
    alpha: float = config.SENSE_ALPHA
    squeeze_gain_v: float = config.SENSE_SQUEEZE_GAIN_V
    g_floor: float = config.SENSE_G_FLOOR
    sample_period_ns: int = config.SENSE_SAMPLE_PERIOD_NS
    window_ns: int = config.SENSE_WINDOW_NS
    detect_k: float = config.DETECT_K

    def __post_init__(self) -> None:
        if self.delta_v0 <= 0 or self.r0_m <= 0 or self.alpha <= 0:
            raise SensingError("delta_v0, r0_m and alpha must be > 0")
        if self.squeeze_gain_v < 0 or not 0 < self.g_floor <= 1:
            raise SensingError("squeeze_gain_v must be >= 0 and g_floor in (0, 1]")
        if self.sample_period_ns <= 0 or self.window_ns < 2 * self.sample_period_ns:
            raise SensingError("window must span at least two samples")

    @property
    def samples_per_window(self) -> int:
        return max(1, self.window_ns // self.sample_period_ns)


@dataclass(frozen=True)
class IntruderState:
    position_m: float = 0.0
    distance_m: float = math.inf
    squeeze: float = 0.0

    @property
    def touching(self) -> bool:
        return self.distance_m == 0


ABSENT = IntruderState()


@dataclass(frozen=True)
class TrajectorySample:
    t_ns: int
    position_m: float
    distance_m: float
    squeeze: float = 0.0

    @property
    def state(self) -> IntruderState:
        return IntruderState(self.position_m, self.distance_m, self.squeeze)


@dataclass(frozen=True)
class IntruderTrajectory:
    samples: Tuple[TrajectorySample, ...]

    def __post_init__(self) -> None:
        times = [s.t_ns for s in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SensingError("trajectory times must be strictly increasing")
        for s in self.samples:
            if s.distance_m < 0 or s.squeeze < 0:
                raise SensingError(f"negative distance or squeeze at t={s.t_ns}")
            if s.squeeze > 0 and s.distance_m != 0:
                raise SensingError(f"squeeze without touch at t={s.t_ns}")

    def state_at(self, t_ns: int) -> IntruderState:
        """Zero-order hold; nobody is present before the first sample."""
        current = ABSENT
        for s in self.samples:
            if s.t_ns > t_ns:
                break
            current = s.state
        return current


@dataclass(frozen=True)
class Detection:
    t_start_ns: int
    t_end_ns: int
    peak_swing_v: float


def coupling(position_m: float, rx_pos: float, tx_pos: float, floor: float = config.SENSE_G_FLOOR) -> float:
    """Raised-cosine weight over the TX-RX span, 1 at the midpoint, ``floor`` at and beyond the ends."""
    lo, hi = min(rx_pos, tx_pos), max(rx_pos, tx_pos)
    span = hi - lo
    if span <= 0:
        return 1.0
    if not lo <= position_m <= hi:
        return floor
    mid = 0.5 * (lo + hi)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(2.0 * math.pi * (position_m - mid) / span))


def proximity_swing(model: SensingModel, distance_m: float) -> float:
    if distance_m < 0:
        raise SensingError("distance must be >= 0")
    if math.isinf(distance_m):
        return 0.0
    return model.delta_v0 / (1.0 + (distance_m / model.r0_m) ** model.alpha)


def perturbation(model: SensingModel, intruder: IntruderState, rx_pos: float, tx_pos: float) -> float:
    g = coupling(intruder.position_m, rx_pos, tx_pos, model.g_floor)
    return (proximity_swing(model, intruder.distance_m) + model.squeeze_gain_v * intruder.squeeze) * g


def perturbed_rssi(
    baseline: float, model: SensingModel, intruder: IntruderState, rx_pos: float, tx_pos: float
) -> float:
    if baseline < 0:
        raise SensingError("baseline must be >= 0")
    return max(0.0, baseline - perturbation(model, intruder, rx_pos, tx_pos))


def window_swings(volts: Sequence[float], n: int, hop: int) -> np.ndarray:
    """|mean(second half) - mean(first half)| for every ``hop``-th window of ``n`` samples.

    This is a half-window mean difference, not the raw max - min: on white noise
    of sigma it has standard deviation 2 sigma / sqrt(n) for any window length.
    """
    half = n // 2
    windows = sliding_window_view(np.asarray(volts, dtype=float), 2 * half)[::hop]
    return np.abs(windows[:, half:].mean(axis=1) - windows[:, :half].mean(axis=1))


def detection_threshold(noise_sigma: float, k: float, n: int) -> float:
    return k * noise_sigma * 2.0 / math.sqrt(2 * (n // 2))


def detect_events(
    times_ns: Sequence[int],
    volts: Sequence[float],
    noise_sigma: float,
    k: float = config.DETECT_K,
    window_ns: int = config.SENSE_WINDOW_NS,
) -> List[Detection]:
    """Flag windows whose half-window mean difference exceeds k standard errors;
    overlapping flagged windows are merged into one detection."""
    if k <= 0:
        raise SensingError("k must be > 0")
    if len(times_ns) != len(volts):
        raise SensingError("times and samples differ in length")
    if len(times_ns) < 2:
        return []
    steps = np.diff(np.asarray(times_ns, dtype=np.int64))
    if np.any(steps <= 0) or np.any(steps != steps[0]):
        raise SensingError("samples must be uniformly spaced")
    period = int(steps[0])
    n = max(2, int(round(window_ns / period)))
    n -= n % 2
    if len(volts) < n:
        return []
    hop = max(1, n // 8)
    swings = window_swings(volts, n, hop)
    threshold = detection_threshold(noise_sigma, k, n)

    detections: List[Detection] = []
    for i in np.flatnonzero(swings > threshold):
        start = int(times_ns[i * hop])
        end = int(times_ns[i * hop + n - 1])
        swing = float(swings[i])
        if detections and start <= detections[-1].t_end_ns:
            last = detections[-1]
            detections[-1] = Detection(last.t_start_ns, max(last.t_end_ns, end), max(last.peak_swing_v, swing))
        else:
            detections.append(Detection(start, end, swing))
    logger.debug("detect_events: %d windows, threshold %.6f V, %d detections", len(swings), threshold, len(detections))
    return detections


def tracking_resolution(
    model: SensingModel,
    noise_sigma: float,
    k: float,
    r: float,
    tolerance_m: float = 1e-7,
) -> float:
    """Smallest outward displacement from ``r`` whose averaged swing change clears
    k times the averaged noise.

    The noise is the per-sample sigma divided by sqrt(samples per window), which
    matches the averaging ``detect_events`` does.
    """
    if r < 0:
        raise SensingError("r must be >= 0")
    if noise_sigma == 0:
        return 0.0
    threshold = k * noise_sigma / math.sqrt(model.samples_per_window)
    base = proximity_swing(model, r)

    def change(delta: float) -> float:
        return base - proximity_swing(model, r + delta)

    hi = r if r > 0 else model.r0_m
    if change(hi) < threshold:
        raise NotResolvable(f"no displacement up to {hi:.3f} m is detectable at r={r:.3f} m")
    lo = 0.0
    while hi - lo > tolerance_m:
        mid = 0.5 * (lo + hi)
        if change(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def resolution_curve(
    model: SensingModel, noise_sigma: float, k: float, distances: Iterable[float]
) -> List[Tuple[float, Optional[float]]]:
    out = []
    for r in distances:
        try:
            out.append((r, tracking_resolution(model, noise_sigma, k, r)))
        except NotResolvable:
            out.append((r, None))
    return out


def swing_map(
    model: SensingModel,
    positions: Iterable[float],
    distances: Iterable[float],
    rx_pos: float,
    tx_pos: float,
    reference_distance_m: float = 1.0,
) -> List[Tuple[float, float, float]]:
    """(L, r, dV) with dV the perturbation change against a subject at ``reference_distance_m``."""
    rows = []
    for r in distances:
        for pos in positions:
            ref = perturbation(model, IntruderState(pos, reference_distance_m), rx_pos, tx_pos)
            now = perturbation(model, IntruderState(pos, r), rx_pos, tx_pos)
            rows.append((pos, r, now - ref))
    return rows


def staircase_trajectory(
    position_m: float = 1.5,
    stage_ns: int = config.NS_PER_S,
    distances: Sequence[float] = (1.0, 0.5, 0.25, 0.10),
    squeeze: float = 1.0,
) -> IntruderTrajectory:
    """Approach in steps, touch, squeeze, then step back."""
    stages = [(d, 0.0) for d in distances] + [(0.0, 0.0), (0.0, squeeze), (distances[0], 0.0)]
    samples = [TrajectorySample((i + 1) * stage_ns, position_m, d, s) for i, (d, s) in enumerate(stages)]
    return IntruderTrajectory(tuple(samples))


def load_trajectory_csv(path: Path) -> IntruderTrajectory:
    samples = []
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = {"t_ns", "L_m", "r_m", "squeeze"} - set(reader.fieldnames or [])
        if missing:
            raise SensingError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            samples.append(
                TrajectorySample(int(row["t_ns"]), float(row["L_m"]), float(row["r_m"]), float(row["squeeze"]))
            )
    return IntruderTrajectory(tuple(samples))
