import pytest

from src.engine import FrameRecord
from src.reporting import (
    FRAMES_HEADER,
    atomic_write_text,
    atomic_writer,
    write_csv,
    write_energy_csv,
    write_frames_csv,
    write_summary_csv,
)


def test_atomic_write_text(tmp_path):
    path = tmp_path / "atomic.txt"

    atomic_write_text(str(path), "first")
    assert path.read_text(encoding="utf-8") == "first"

    atomic_write_text(str(path), "second")
    assert path.read_text(encoding="utf-8") == "second"

    leftovers = [p for p in tmp_path.iterdir() if p.name != "atomic.txt"]
    assert not leftovers


def test_atomic_writer_keeps_old_file_on_error(tmp_path):
    path = tmp_path / "keep.txt"
    atomic_write_text(str(path), "old")
    with pytest.raises(RuntimeError):
        with atomic_writer(str(path)) as f:
            f.write("partial")
            raise RuntimeError("boom")
    assert path.read_text(encoding="utf-8") == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["keep.txt"]


def test_write_csv_fixed_format(tmp_path):
    path = tmp_path / "rows.csv"
    assert write_csv(str(path), ("a", "b"), [(1, "x"), (2, "y")]) == 2
    assert path.read_text(encoding="utf-8") == "a,b\n1,x\n2,y\n"


def test_frames_csv_leaves_missing_values_empty(tmp_path):
    path = tmp_path / "frames.csv"
    delivered = FrameRecord(frame_id=0, enqueue_ns=0, src=1, dst=0, priority=1, deliver_ns=890_000, crc_ok=True,
                            winner_correct=True)
    pending = FrameRecord(frame_id=1, enqueue_ns=5, src=2, dst=0, priority=2)
    write_frames_csv(str(path), [delivered, pending])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(FRAMES_HEADER)
    assert lines[1] == "0,890000,1,0,1,1,1"
    assert lines[2] == "5,,2,0,2,0,"


def test_energy_and_summary_formats(tmp_path):
    energy = tmp_path / "energy.csv"
    write_energy_csv(str(energy), [(0, 1, 1.5, "OFF")])
    assert energy.read_text(encoding="utf-8").splitlines()[1] == "0,1,1.500000,OFF"
    summary = tmp_path / "summary.csv"
    write_summary_csv(str(summary), [("joint", 0.98, 0.97, 0.99)])
    assert summary.read_text(encoding="utf-8").splitlines()[1] == "joint,0.9800,0.9700,0.9900"
