import pytest

from src import config
from src.scenario import ParseError, ValidationError, load_scenario, parse_config, parse_config_text

BASIC = """
[substrate]
frame_loss_prob = 0.0

[nodes.0]
position = 0.0
priority = 7
coordinator = yes

[nodes.1]
position = 0.5
priority = 1
capacitor_uf = 220
supply = harvest
harvest_distance_m = 0.5

[nodes.2]
position = 1.0
priority = 2

[traffic]
send =
    0:2:0
    1_000:2:0:5
periodic = 0:2_000_000:3:2:0
request = 5_000_000:2
carrier = 0:1_000_000

[run]
duration_ns = 10_000_000
seed = 42
runs = 5
"""


def test_parse_basic_scenario():
    cfg, runs = parse_config_text(BASIC)
    assert runs == 5
    assert cfg.seed == 42
    assert cfg.duration_ns == 10_000_000
    assert cfg.substrate.frame_loss_prob == 0.0
    assert [n.node_id for n in cfg.nodes] == [0, 1, 2]
    assert cfg.coordinator.node_id == 0
    harvester = cfg.node(1)
    assert harvester.capacitor_f == pytest.approx(220e-6)
    assert not harvester.externally_powered
    assert harvester.harvest_distance_m == 0.5
    sends = cfg.traffic.sends
    assert len(sends) == 5
    assert sends[1].time_ns == 1_000 and sends[1].priority == 5
    assert [s.time_ns for s in sends[2:]] == [0, 2_000_000, 4_000_000]
    assert cfg.traffic.requests[0].fanout == 2
    assert cfg.traffic.carriers[0].end_ns == 1_000_000
    assert cfg.lock_cells == config.SFD_LOCK_CELLS


def test_overrides_replace_values_and_add_sections():
    cfg, runs = parse_config_text(BASIC, overrides=["nodes.2.position=1.5", "run.runs=1", "substrate.noise_sigma_v=0"])
    assert cfg.node(2).position == 1.5
    assert runs == 1
    assert cfg.substrate.noise_sigma_v == 0.0
    with pytest.raises(ParseError):
        parse_config_text(BASIC, overrides=["nodes.2.position"])


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as exc:
        parse_config_text("[nodes.1]\nposition = 0.0\npriority = x\n", path="bad.ini")
    assert exc.value.lineno == 3
    assert "bad.ini:3" in str(exc.value)
    with pytest.raises(ParseError):
        parse_config_text("position = 0.0\n")
    with pytest.raises(ParseError):
        parse_config_text("[nodes.1]\nposition = 0\npriority = 1\n[bogus]\nx = 1\n")
    with pytest.raises(ParseError):
        parse_config_text("[nodes.1]\nposition = 0\npriority = 1\n[traffic]\nsend = 0:1\n")


def test_validation_errors_name_the_field():
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[nodes.1]\nposition = 0\npriority = 1\ncolour = red\n")
    assert exc.value.field == "nodes.1.colour"
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[nodes.1]\nposition = 3.0\npriority = 1\n")
    assert exc.value.field == "position"
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[nodes.1]\nposition = 0\npriority = 1\n[nodes.2]\nposition = 1\npriority = 1\n")
    assert exc.value.field == "priority"
    with pytest.raises(ValidationError):
        parse_config_text("[substrate]\nsense_error_prob = 2\n[nodes.1]\nposition = 0\npriority = 1\n")


def test_sensing_section_builds_a_trajectory(tmp_path):
    walk = tmp_path / "walk.csv"
    walk.write_text("t_ns,L_m,r_m,squeeze\n0,1.0,0.2,0\n", encoding="utf-8")
    text = (
        "[nodes.0]\nposition = 0\npriority = 2\ncoordinator = yes\n"
        "[nodes.1]\nposition = 2\npriority = 1\n"
        "[sensing]\nnode = 1\ntrajectory = walk.csv\nwindow_ns = 100_000_000\n"
    )
    path = tmp_path / "touch.ini"
    path.write_text(text, encoding="utf-8")
    cfg = parse_config(path)
    assert cfg.sensing.node_id == 1
    assert cfg.sensing.model.window_ns == 100_000_000
    assert cfg.sensing.trajectory.state_at(5).distance_m == 0.2
    with pytest.raises(ValidationError):
        parse_config_text(text.replace("node = 1", "node = 0"), base_dir=tmp_path)


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "nope.ini")


@pytest.mark.parametrize(
    "name",
    [
        "fig7_reliability",
        "fig8_latency",
        "fig9_contention",
        "fig10_charging",
        "fig11_touch",
        "fig12_resolution",
        "table3_chargetimes",
    ],
)
def test_bundled_scenarios_parse(name):
    cfg, runs = load_scenario(config.SCENARIO_DIR / f"{name}.ini")
    assert cfg.nodes
    assert runs >= 1


def test_contention_repliers_sit_within_half_a_metre():
    cfg, _ = load_scenario(config.SCENARIO_DIR / "fig9_contention.ini", ["traffic.request=0:9"])
    repliers = [cfg.node(i) for i in cfg.repliers(9)]
    assert [n.priority for n in repliers] == list(range(1, 10))
    assert max(n.position for n in repliers) - cfg.coordinator.position <= 0.5
