"""Output reporting helpers.

Every file is written atomically with fixed headers and fixed numeric
formatting, so equal seeds give byte-identical outputs.
"""
from __future__ import annotations

import csv
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Iterable, Iterator, Optional, Sequence, TextIO, Tuple

from . import config

logger = logging.getLogger(__name__)

FRAMES_HEADER = ("enqueue_ns", "deliver_ns", "src", "dst", "priority", "crc_ok", "winner_correct")
ENERGY_HEADER = ("time_ns", "node_id", "v_cap", "mode")
SENSING_HEADER = ("t_ns", "volts")
SUMMARY_HEADER = ("metric", "value", "ci_low", "ci_high")
DETECTIONS_HEADER = ("t_start_ns", "t_end_ns", "peak_swing_v")
TRANSMISSIONS_HEADER = ("node_id", "kind", "start_ns", "end_ns")


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _fsync_dir(path: str) -> None:
    try:
        dir_fd = os.open(path, os.O_DIRECTORY)
    except Exception:
        return
    try:
        os.fsync(dir_fd)
    except Exception:
        pass
    finally:
        os.close(dir_fd)


@contextmanager
def atomic_writer(
    path: str,
    mode: str = "w",
    encoding: str = "utf-8",
    newline: Optional[str] = None,
) -> Iterator[TextIO]:
    dir_path = os.path.dirname(path) or "."
    base = os.path.basename(path)
    fd, tmp_path = tempfile.mkstemp(prefix=f".{base}.", suffix=".tmp", dir=dir_path)
    try:
        with os.fdopen(fd, mode, encoding=encoding, newline=newline) as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
        _fsync_dir(dir_path)
    except Exception:
        try:
            os.unlink(tmp_path)
        except Exception:
            pass
        raise


def atomic_write_text(path: str, text: str) -> None:
    with atomic_writer(path, mode="w", encoding="utf-8") as f:
        f.write(text)


def fmt_volts(value: float) -> str:
    return config.VOLT_FMT.format(value)


def fmt_ratio(value: float) -> str:
    return config.RELIABILITY_FMT.format(value)


def fmt_opt(value: Any, fmt=str) -> str:
    return "" if value is None else fmt(value)


def fmt_bool(value: Optional[bool]) -> str:
    return "" if value is None else str(int(bool(value)))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    count = 0
    with atomic_writer(path, mode="w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug("wrote %s (%d rows)", path, count)
    return count


def write_frames_csv(path: str, frames: Iterable[Any]) -> int:
    return write_csv(
        path,
        FRAMES_HEADER,
        (
            (
                r.enqueue_ns,
                fmt_opt(r.deliver_ns),
                r.src,
                r.dst,
                r.priority,
                fmt_bool(r.crc_ok),
                fmt_bool(r.winner_correct),
            )
            for r in frames
        ),
    )


def write_energy_csv(path: str, trace: Iterable[Tuple[int, int, float, str]]) -> int:
    return write_csv(path, ENERGY_HEADER, ((t, nid, fmt_volts(v), mode) for t, nid, v, mode in trace))


def write_sensing_csv(path: str, samples: Iterable[Tuple[int, float]]) -> int:
    return write_csv(path, SENSING_HEADER, ((t, fmt_volts(v)) for t, v in samples))


def write_detections_csv(path: str, detections: Iterable[Any]) -> int:
    return write_csv(
        path, DETECTIONS_HEADER, ((d.t_start_ns, d.t_end_ns, fmt_volts(d.peak_swing_v)) for d in detections)
    )


def write_transmissions_csv(path: str, log: Iterable[Any]) -> int:
    return write_csv(path, TRANSMISSIONS_HEADER, ((t.node_id, t.kind, t.start_ns, t.end_ns) for t in log))


def write_summary_csv(path: str, rows: Iterable[Tuple[str, float, float, float]], fmt=fmt_ratio) -> int:
    return write_csv(path, SUMMARY_HEADER, ((m, fmt(v), fmt(lo), fmt(hi)) for m, v, lo, hi in rows))
