import json

import numpy as np
import pytest

from patrolsim.cli import main as cli_main
from patrolsim.engine import (
    MetricsSummary,
    ScenarioError,
    load_scenario,
    metrics_from_lines,
    read_replay,
    run,
    serialize_scenario,
    write_replay,
)

MINIMAL = """patrolsim-scenario v1
seed 5
duration 50
ped 0 start 2.0 2.0 speed 1.0 goals -2.0 2.0 2.0 2.0
"""

PATROL = """patrolsim-scenario v1
seed 11
duration 200
map.width 64
map.height 64
map.resolution 0.25
map.origin -8.0 -8.0
junction 0 -5.0 -5.0 1
junction 1 5.0 -5.0 0
robot.start 0.0 -5.0 0.0
ped 0 start 6.0 6.0 speed 0.8 goals -6.0 6.0 6.0 6.0
"""

ADVISORY = """patrolsim-scenario v1
seed 7
duration 200
map.width 64
map.height 64
map.resolution 0.25
map.origin -8.0 -8.0
robot.start -2.0 0.0 0.0
ped 1 start 5.0 0.6 speed 0.9 goals 5.0 0.6
ped 2 start 5.0 -0.6 speed 0.9 goals 5.0 -0.6
ped 3 start 5.8 0.0 speed 0.9 goals 5.8 0.0
comply.p 1.0
"""


def records(lines):
    return [json.loads(l) for l in lines[1:]]


class TestScenarioLoading:
    def test_minimal_defaults(self):
        sc = load_scenario(MINIMAL)
        assert sc.seed == 5 and sc.duration == 50
        assert sc.dt == 0.1
        assert sc.tracker.gate == 0.4
        assert sc.social.d_yellow == 2.0
        assert sc.robot_policy == "reactive_vo"

    def test_header_required(self):
        with pytest.raises(ScenarioError, match="line 1"):
            load_scenario("seed 1\nduration 1\n")

    def test_unknown_key_rejected_with_line(self):
        doc = MINIMAL + "frobnicate 1\n"
        with pytest.raises(ScenarioError, match="line 5.*frobnicate"):
            load_scenario(doc)

    def test_unknown_group_field_rejected(self):
        with pytest.raises(ScenarioError, match="tracker.bogus"):
            load_scenario(MINIMAL + "tracker.bogus 3\n")

    def test_seed_required(self):
        with pytest.raises(ScenarioError, match="seed"):
            load_scenario("patrolsim-scenario v1\nduration 10\nped 0 start 0 1 goals 0 1\n")

    def test_out_of_bounds_ped_start_names_field(self):
        doc = MINIMAL.replace("start 2.0 2.0", "start 200.0 2.0")
        with pytest.raises(ScenarioError, match="ped.0.start"):
            load_scenario(doc)

    def test_duplicate_ped_id(self):
        doc = MINIMAL + "ped 0 start 1.0 1.0 speed 1.0 goals 0.0 0.0\n"
        with pytest.raises(ScenarioError, match="duplicate"):
            load_scenario(doc)

    def test_bad_junction_link(self):
        doc = MINIMAL + "junction 0 1.0 1.0 9\n"
        with pytest.raises(ScenarioError, match="junction.0"):
            load_scenario(doc)

    def test_unknown_policy_rejected(self):
        with pytest.raises(KeyError):
            load_scenario(MINIMAL + "robot.policy learned\n")

    def test_round_trip_semantically_identical(self):
        sc = load_scenario(ADVISORY)
        text = serialize_scenario(sc)
        sc2 = load_scenario(text)
        assert serialize_scenario(sc2) == text
        assert sc2 == sc

    def test_parameter_overrides_applied(self):
        sc = load_scenario(MINIMAL + "tracker.gate 0.7\nnav.v_max 0.5\nsocial.window 100\n")
        assert sc.tracker.gate == 0.7
        assert sc.nav.v_max == 0.5
        assert sc.social.window == 100


class TestRun:
    def test_no_crowds_stays_patrol_and_moves(self):
        lines, metrics = run(load_scenario(PATROL))
        recs = records(lines)
        assert all(r["mission"][0] == "patrol" for r in recs)
        assert metrics.advisories == 0
        assert metrics.collisions == 0
        assert metrics.distance_traveled > 1.0  # actually patrolling

    def test_determinism_same_seed(self):
        sc = load_scenario(ADVISORY)
        lines1, _ = run(sc)
        lines2, _ = run(sc)
        assert lines1 == lines2

    def test_different_seed_differs(self):
        lines1, _ = run(load_scenario(ADVISORY))
        lines2, _ = run(load_scenario(ADVISORY.replace("seed 7", "seed 8")))
        assert lines1 != lines2

    def test_duration_zero_empty_log(self):
        sc = load_scenario(MINIMAL.replace("duration 50", "duration 0"))
        lines, metrics = run(sc)
        assert len(lines) == 1  # header only
        assert metrics == MetricsSummary()

    def test_metrics_match_independent_reader(self, tmp_path):
        lines, metrics = run(load_scenario(ADVISORY))
        path = tmp_path / "replay.log"
        write_replay(path, lines)
        again = metrics_from_lines(read_replay(path))
        assert again == metrics

    def test_advisory_pipeline_end_to_end(self):
        lines, metrics = run(load_scenario(ADVISORY))
        recs = records(lines)
        # the advisory fired below the 5 m threshold
        fired = [a for r in recs for a in r["adv"]]
        assert fired and fired[0]["distance"] < 5.0
        assert metrics.advisories >= 1
        # with p_comply = 1 every targeted pedestrian adopted a dispersal goal
        assert fired[0]["complied"] == fired[0]["targets"]
        # the crowd dissolved and the mission returned to patrol
        first_adv = next(i for i, r in enumerate(recs) if r["adv"])
        later = recs[first_adv + 1:]
        assert any(not r["crowds"] for r in later)
        assert recs[-1]["mission"][0] == "patrol"
        assert metrics.mean_dissolution_ticks > 0

    def test_mission_transitions_legal(self):
        lines, _ = run(load_scenario(ADVISORY))
        recs = records(lines)
        allowed = {
            ("patrol", "patrol"), ("patrol", "approaching"),
            ("approaching", "approaching"), ("approaching", "advising"),
            ("approaching", "patrol"), ("advising", "advising"),
            ("advising", "patrol"),
        }
        modes = [r["mission"][0] for r in recs]
        for a, b in zip(modes, modes[1:]):
            assert (a, b) in allowed, (a, b)

    def test_spawn_despawn(self):
        doc = (MINIMAL +
               "ped 5 start -2.0 -2.0 speed 1.0 goals 2.0 -2.0 spawn 10 despawn 30\n")
        lines, _ = run(load_scenario(doc))
        recs = records(lines)
        present = {r["t"] for r in recs for pid, *_ in r["peds"] if pid == 5}
        assert min(present) == 10
        assert max(present) == 29

    def test_replay_floats_canonicalized(self):
        lines, _ = run(load_scenario(MINIMAL))
        rec = json.loads(lines[1])
        for row in rec["peds"]:
            for v in row[1:]:
                assert float(f"{v:.9g}") == v


class TestCli:
    def test_run_and_replay(self, tmp_path, capsys):
        scenario = tmp_path / "s.scn"
        scenario.write_text(ADVISORY)
        out = tmp_path / "out"
        assert cli_main(["run", str(scenario), "--out", str(out), "--ticks", "60"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert (out / "replay.log").exists()
        assert (out / "metrics.json").exists()
        assert cli_main(["replay", str(out / "replay.log"), "--metrics"]) == 0
        replayed = json.loads(capsys.readouterr().out)
        assert replayed == printed

    def test_run_seed_override_changes_log(self, tmp_path):
        scenario = tmp_path / "s.scn"
        scenario.write_text(ADVISORY)
        cli_main(["run", str(scenario), "--out", str(tmp_path / "a"), "--ticks", "40"])
        cli_main(["run", str(scenario), "--out", str(tmp_path / "b"), "--ticks", "40", "--seed", "99"])
        a = (tmp_path / "a" / "replay.log").read_text()
        b = (tmp_path / "b" / "replay.log").read_text()
        assert a != b

    def test_validate_ok_and_failure(self, tmp_path, capsys):
        good = tmp_path / "good.scn"
        good.write_text(MINIMAL)
        assert cli_main(["validate", str(good)]) == 0
        assert capsys.readouterr().out.strip() == "ok"
        bad = tmp_path / "bad.scn"
        bad.write_text(MINIMAL + "nonsense 1\n")
        assert cli_main(["validate", str(bad)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_exit_2(self):
        assert cli_main(["validate", "/nonexistent.scn"]) == 2

    def test_batch(self, tmp_path, capsys):
        scenario = tmp_path / "s.scn"
        scenario.write_text(MINIMAL)
        out = tmp_path / "batch"
        assert cli_main(["batch", str(scenario), "--seeds", "1..3",
                         "--out", str(out), "--ticks", "20"]) == 0
        for seed in (1, 2, 3):
            assert (out / f"replay_{seed}.log").exists()
        rows = json.loads((out / "batch_metrics.json").read_text())
        assert [r["seed"] for r in rows] == [1, 2, 3]
