import json

import pytest

from clops import cli
from clops.partitioner import PartitionPlan


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    rc = cli.main(["synth", "grid", "--rows", "3", "--cols", "3", "--out", str(path)])
    assert rc == 0
    return path


def test_synth_corridor(tmp_path):
    path = tmp_path / "corridor.json"
    assert cli.main(["synth", "corridor", "--out", str(path)]) == 0
    doc = json.loads(path.read_text())
    assert doc["closures"] and doc["advisories"]


def test_partition_exact_k(tmp_path, scenario_file, capsys):
    out = tmp_path / "mob.json"
    rc = cli.main([
        "partition", "--scenario", str(scenario_file), "--mode", "mobility",
        "--k", "3", "--seed", "4", "--out", str(out),
    ])
    assert rc == 0
    plan = PartitionPlan.from_json(out.read_text())
    assert plan.k == 3
    assert "edge_cut" in capsys.readouterr().out


def test_partition_k_range(tmp_path, scenario_file):
    out = tmp_path / "comm.json"
    rc = cli.main([
        "partition", "--scenario", str(scenario_file), "--mode", "comm",
        "--k-min", "2", "--k-max", "4", "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert 2 <= doc["k"] <= 4 and doc["mode"] == "comm"


def test_run_then_hils_replay_round_trip(tmp_path, scenario_file):
    mob = tmp_path / "mob.json"
    comm = tmp_path / "comm.json"
    cli.main(["partition", "--scenario", str(scenario_file), "--mode", "mobility",
              "--k", "2", "--out", str(mob)])
    cli.main(["partition", "--scenario", str(scenario_file), "--mode", "comm",
              "--k", "2", "--out", str(comm)])
    out1 = tmp_path / "clsim"
    rc = cli.main([
        "run", "--scenario", str(scenario_file), "--mobility-plan", str(mob),
        "--comm-plan", str(comm), "-P", "2", "--seed", "9",
        "--duration", "15.0", "--out", str(out1),
    ])
    assert rc == 0
    for name in ("trajectories.csv", "bsm.csv", "arrivals.csv", "metrics.json", "digest.txt"):
        assert (out1 / name).exists()

    out2 = tmp_path / "hils"
    rc = cli.main([
        "run", "--scenario", str(scenario_file), "--mobility-plan", str(mob),
        "--comm-plan", str(comm), "--seed", "9", "--duration", "15.0",
        "--mode", "hils", "--sensor-dir", str(out1), "--out", str(out2),
    ])
    assert rc == 0
    m1 = json.loads((out1 / "metrics.json").read_text())
    m2 = json.loads((out2 / "metrics.json").read_text())
    assert m2["cv_digest"] == m1["cv_digest"]
