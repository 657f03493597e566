"""Harvester and per-packet energy calibration against the measured charge times
and packet rates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

from . import config
from .neuron import (
    FitDiverged,
    HarvesterModel,
    NeuronError,
    fit_harvester,
    simulated_packet_rate,
    sustainable_packet_rate,
    time_to_voltage,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Calibration:
    harvesters: Dict[float, HarvesterModel]
    leak_per_farad: float
    leak_bounds: Tuple[float, float]

    @property
    def distances(self) -> List[float]:
        return sorted(self.harvesters)

    def harvester_at(self, distance_m: float) -> HarvesterModel:
        """Log-linear interpolation of the harvest drive between calibrated distances."""
        if distance_m <= 0:
            raise NeuronError("harvest distance must be > 0")
        points = self.distances
        if distance_m in self.harvesters:
            return self.harvesters[distance_m]
        if distance_m < points[0]:
            a, b = points[0], points[1]
        elif distance_m > points[-1]:
            a, b = points[-2], points[-1]
        else:
            a = max(p for p in points if p < distance_m)
            b = min(p for p in points if p > distance_m)
        ha, hb = self.harvesters[a], self.harvesters[b]
        frac = (distance_m - a) / (b - a)
        log_drive = math.log(ha.drive_a) + frac * (math.log(hb.drive_a) - math.log(ha.drive_a))
        v_inf = ha.v_inf
        return HarvesterModel(v_inf=v_inf, r_s=v_inf / math.exp(log_drive), leak_per_farad=self.leak_per_farad)


def _bisect(predicate, lo: float, hi: float, iterations: int = 100) -> float:
    """Boundary of a predicate that is False at ``lo`` and True at ``hi``."""
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return hi


def fit_far_leakage(
    far: HarvesterModel,
    activates_f: float = config.FAR_ACTIVATES_F,
    fails_f: float = config.FAR_FAILS_F,
    horizon_s: float = config.ACTIVATION_HORIZON_S,
    v_on: float = config.V_ON,
    i_off: float = config.I_OFF_A,
) -> Tuple[float, float, float]:
    """Per-farad leakage making ``fails_f`` never activate while ``activates_f``
    still activates within the horizon. Returns (estimate, lower, upper)."""
    lower = max(0.0, (far.harvest_current(v_on) - i_off) / fails_f)

    def too_slow(leak: float) -> bool:
        h = HarvesterModel(far.v_inf, far.r_s, leak)
        t = time_to_voltage(h, activates_f, i_off, 0.0, v_on)
        return t is None or t > horizon_s

    if too_slow(0.0):
        raise FitDiverged(f"{activates_f * 1e6:.0f} uF cannot activate within {horizon_s} s even without leakage")
    ceiling = far.drive_a / activates_f
    upper = _bisect(too_slow, 0.0, ceiling)
    if lower >= upper:
        raise FitDiverged(f"no leakage satisfies both outcomes (lower {lower:.6g} >= upper {upper:.6g})")
    estimate = math.sqrt(lower * upper) if lower > 0 else 0.5 * upper
    return estimate, lower, upper


@lru_cache(maxsize=None)
def calibrate(
    v_inf: float = config.HARVEST_V_INF,
    far_distance_m: float = config.FAR_DISTANCE_M,
    far_drive_ratio: float = config.FAR_DRIVE_RATIO,
) -> Calibration:
    """Fit each measured distance with V_inf pinned, extrapolate to the far
    distance, fit leakage there, then refit the measured distances with it."""
    observed = config.CHARGE_TIME_OBSERVATIONS
    first = {d: fit_harvester(obs, v_inf=v_inf, leak_per_farad=0.0) for d, obs in observed.items()}
    reference = first[max(first)]
    far = HarvesterModel(v_inf=v_inf, r_s=reference.r_s / far_drive_ratio)
    leak, lower, upper = fit_far_leakage(far)
    logger.info("Calibration: leakage %.6g A/F (bounds %.6g .. %.6g)", leak, lower, upper)

    harvesters = {d: fit_harvester(obs, v_inf=v_inf, leak_per_farad=leak) for d, obs in observed.items()}
    harvesters[far_distance_m] = HarvesterModel(v_inf=v_inf, r_s=far.r_s, leak_per_farad=leak)
    for d, h in sorted(harvesters.items()):
        logger.debug("Calibration: %.2f m -> R_s %.1f ohm", d, h.r_s)
    return Calibration(harvesters=harvesters, leak_per_farad=leak, leak_bounds=(lower, upper))


@dataclass(frozen=True)
class ChargeTimeRow:
    distance_m: float
    capacitance_f: float
    observed_s: float
    predicted_s: Optional[float]

    @property
    def rel_error(self) -> Optional[float]:
        if self.predicted_s is None:
            return None
        return self.predicted_s / self.observed_s - 1.0


def charge_time_table(cal: Calibration, i_off: float = config.I_OFF_A) -> List[ChargeTimeRow]:
    rows = []
    for distance, obs in sorted(config.CHARGE_TIME_OBSERVATIONS.items()):
        h = cal.harvesters[distance]
        for cap, observed in obs:
            rows.append(ChargeTimeRow(distance, cap, observed, time_to_voltage(h, cap, i_off, 0.0, config.V_ON)))
    return rows


def calibrate_packet_energy(cal: Calibration) -> float:
    """E_pkt such that the reference (distance, capacitor) cell is matched exactly."""
    distance, cap = config.PACKET_RATE_REFERENCE
    observed = dict(config.PACKET_RATE_OBSERVATIONS[distance])[cap]
    h = cal.harvesters[distance]
    per_joule = sustainable_packet_rate(h, cap, 1.0)
    if per_joule <= 0:
        raise FitDiverged("reference cell has no energy surplus")
    return per_joule / observed


@dataclass(frozen=True)
class PacketRateRow:
    distance_m: float
    capacitance_f: float
    observed: float
    analytic: float
    simulated: float
    flag: str

    @property
    def rel_error(self) -> float:
        return self.analytic / self.observed - 1.0

    @property
    def loop_agreement(self) -> float:
        if self.analytic == 0:
            return 0.0 if self.simulated == 0 else math.inf
        return abs(self.simulated / self.analytic - 1.0)


def packet_rate_table(cal: Calibration, e_pkt: float, tolerance: float = 0.4) -> List[PacketRateRow]:
    rows = []
    for distance, obs in sorted(config.PACKET_RATE_OBSERVATIONS.items()):
        h = cal.harvesters[distance]
        for cap, observed in obs:
            analytic = sustainable_packet_rate(h, cap, e_pkt)
            simulated = simulated_packet_rate(h, cap, e_pkt)
            if (distance, cap) == config.PACKET_RATE_REFERENCE:
                flag = "reference"
            elif cap == config.PACKET_RATE_ANOMALY_F:
                flag = "anomaly"
            elif abs(analytic / observed - 1.0) <= tolerance:
                flag = "ok"
            else:
                flag = "miss"
            rows.append(PacketRateRow(distance, cap, observed, analytic, simulated, flag))
    return rows
