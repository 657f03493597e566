import pytest

from src import config
from src.calibration import (
    calibrate,
    calibrate_packet_energy,
    charge_time_table,
    fit_far_leakage,
    packet_rate_table,
)
from src.neuron import FitDiverged, HarvesterModel, NeuronError, time_to_voltage


def test_calibration_covers_measured_and_far_distances():
    cal = calibrate()
    assert cal.distances == [0.5, 1.0, config.FAR_DISTANCE_M]
    # drive falls with distance
    drives = [cal.harvesters[d].drive_a for d in cal.distances]
    assert drives == sorted(drives, reverse=True)
    lower, upper = cal.leak_bounds
    assert lower < cal.leak_per_farad < upper


def test_charge_times_match_observations():
    rows = charge_time_table(calibrate())
    assert len(rows) == 6
    for row in rows:
        assert row.predicted_s is not None
        assert abs(row.rel_error) <= 0.30, row


def test_far_distance_outcomes_within_horizon():
    far = calibrate().harvester_at(config.FAR_DISTANCE_M)
    small = time_to_voltage(far, config.FAR_ACTIVATES_F, config.I_OFF_A, 0.0, config.V_ON)
    large = time_to_voltage(far, config.FAR_FAILS_F, config.I_OFF_A, 0.0, config.V_ON)
    assert small is not None and small <= config.ACTIVATION_HORIZON_S
    assert large is None


def test_harvester_interpolates_between_calibrated_distances():
    cal = calibrate()
    mid = cal.harvester_at(1.5)
    assert cal.harvesters[2.0].drive_a < mid.drive_a < cal.harvesters[1.0].drive_a
    assert mid.leak_per_farad == cal.leak_per_farad
    assert cal.harvester_at(1.0) is cal.harvesters[1.0]
    with pytest.raises(NeuronError):
        cal.harvester_at(0.0)


def test_far_leakage_fails_when_nothing_can_activate():
    hopeless = HarvesterModel(v_inf=3.0, r_s=1e9)
    with pytest.raises(FitDiverged):
        fit_far_leakage(hopeless)


def test_packet_energy_matches_reference_cell():
    cal = calibrate()
    e_pkt = calibrate_packet_energy(cal)
    assert 5e-6 < e_pkt < 50e-6
    rows = packet_rate_table(cal, e_pkt)
    assert len(rows) == 6
    reference = [r for r in rows if r.flag == "reference"]
    assert len(reference) == 1
    assert reference[0].rel_error == pytest.approx(0.0, abs=1e-9)
    assert {r.capacitance_f for r in rows if r.flag == "anomaly"} == {config.PACKET_RATE_ANOMALY_F}
    for row in rows:
        assert row.flag != "miss", row
        assert row.loop_agreement <= 0.05, row
