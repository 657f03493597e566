"""Project configuration.

Module-level defaults for the protocol, the substrate, the neuron energy model
and the presets. Scenario files override the substrate/node/run values; keep
calibration tables and output formats centralized here.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, List, Tuple

_REPO_ROOT = Path(__file__).resolve().parent.parent

# --- Time base (integer nanoseconds) ---

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

SYMBOL_NS = 5 * NS_PER_US  # 200 kbaud half-bit symbol
BIT_NS = 2 * SYMBOL_NS
CELL_NS = 20 * NS_PER_US  # one preamble / SFD on-off cell
SFD_CELLS = 10
BODY_BITS = 64
FRAME_NS = SFD_CELLS * CELL_NS + BODY_BITS * BIT_NS  # 840 us

JITTER_TOLERANCE = 0.1
# Trailing delimiter cells a receiver needs to lock onto a frame body.
SFD_LOCK_CELLS = 3

# --- Frame ---

N_PRIORITY = 9
BROADCAST_ADDRESS = 0xFF
PAYLOAD_OCTETS = 6
CRC8_POLY = 0x07

# --- MAC timing ---

T_IDLE_NS = 100 * NS_PER_US
T_TURN_NS = 10 * NS_PER_US
T_CHECK_NS = 20 * NS_PER_US

# --- Substrate ---

SUBSTRATE_LENGTH_M = 2.0
RESISTANCE_PER_M = 850.0
V_REF = 1.0
DECAY_PER_M = 0.3
DEMOD_THRESHOLD_V = 0.1
NOISE_SIGMA_V = 0.010
SENSE_ERROR_PROB = 0.0
FRAME_LOSS_PROB = 0.004
BURST_MIN_BITS = 20
BURST_MAX_BITS = 60

# --- Neuron energy ---

V_ON = 2.0
V_OFF = 1.8
CAPACITOR_SIZES_F: Tuple[float, ...] = (100e-6, 220e-6, 470e-6)
DEFAULT_CAPACITOR_F = 100e-6

I_LISTEN_A = 1.82e-6
I_RX_A = 501.8e-6
I_TX_A = 5.32e-3
I_OFF_A = 0.3e-6
I_SENSE_A = 501.8e-6

EXTERNAL_SUPPLY_V = 3.3
BOOT_NS = 0

# --- Harvester calibration ---

# Charge time (s) from 0 V to V_ON per distance (m) and capacitance (F).
CHARGE_TIME_OBSERVATIONS: Dict[float, List[Tuple[float, float]]] = {
    0.5: [(100e-6, 0.42), (220e-6, 1.36), (470e-6, 1.82)],
    1.0: [(100e-6, 1.02), (220e-6, 2.79), (470e-6, 3.43)],
}
# Sustainable packets per second per distance (m) and capacitance (F).
PACKET_RATE_OBSERVATIONS: Dict[float, List[Tuple[float, float]]] = {
    0.5: [(100e-6, 27.3), (220e-6, 17.7), (470e-6, 24.6)],
    1.0: [(100e-6, 10.6), (220e-6, 5.6), (470e-6, 10.1)],
}
PACKET_RATE_ANOMALY_F = 220e-6
PACKET_RATE_REFERENCE = (0.5, 100e-6)

HARVEST_V_INF = 3.0
FAR_DISTANCE_M = 2.0
FAR_DRIVE_RATIO = 0.02  # harvest drive at FAR_DISTANCE_M relative to 1.0 m
# Expected outcomes at FAR_DISTANCE_M within the activation horizon.
FAR_ACTIVATES_F = 100e-6
FAR_FAILS_F = 470e-6
ACTIVATION_HORIZON_S = 60.0
SWITCHING_OVERHEAD_A = 0.0

FIT_MAX_REL_ERROR = 0.5
FIT_MAX_ITERATIONS = 20000

# --- Sensing ---

SENSE_DELTA_V0 = 0.3
SENSE_R0_M = 0.05
SENSE_ALPHA = 2.0
SENSE_SQUEEZE_GAIN_V = 0.1
SENSE_G_FLOOR = 0.2
SENSE_SAMPLE_PERIOD_NS = NS_PER_MS
SENSE_WINDOW_NS = 250 * NS_PER_MS
DETECT_K = 5.0

# --- Engine / runs ---

DEFAULT_SEED = 1
TRACE_PERIOD_NS = NS_PER_MS
DEFAULT_REPLICATES = 1000
CONFIDENCE_Z = 1.96

# --- Outputs ---

OUTPUT_DIR = "out"
SCENARIO_DIR = _REPO_ROOT / "scenarios"
VOLT_FMT = "{:.6f}"
RELIABILITY_FMT = "{:.4f}"


def env_out_dir() -> str:
    return (os.environ.get("SETH_OUT_DIR") or "").strip() or OUTPUT_DIR


def env_seed() -> int:
    raw = (os.environ.get("SETH_SEED") or "").strip()
    return int(raw) if raw else DEFAULT_SEED
