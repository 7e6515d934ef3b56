"""CLI surface: run/check/replay/scenarios, file formats, determinism."""

import json
import math
import os

import pytest

from popsim import cli
from popsim.cli import (
    CSV_HEADER,
    config_from_json,
    config_to_json,
    read_reset_log_csv,
    read_snapshots_csv,
)


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture
def batch_dir(tmp_path):
    out = tmp_path / "batch"
    rc = run_cli(
        "run", "--n", "200", "--time", "25", "--runs", "3", "--seed", "7",
        "--profile", "empirical", "--protocol", "dsc", "--out", str(out),
    )
    assert rc == 0
    return out


def test_run_writes_csv_and_manifest(batch_dir):
    csv_path = batch_dir / "snapshots.csv"
    manifest_path = batch_dir / "manifest.json"
    assert csv_path.exists() and manifest_path.exists()

    lines = csv_path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 3 * 26  # header + 3 runs x (t=0..25)
    runs = read_snapshots_csv(str(csv_path))
    assert sorted(runs) == [0, 1, 2]
    for rows in runs.values():
        assert [r.parallel_time for r in rows] == [float(t) for t in range(26)]
        for r in rows:
            assert r.phase_exchange + r.phase_hold + r.phase_reset == r.n

    manifest = json.loads(manifest_path.read_text())
    assert manifest["toolVersion"].startswith("popsim ")
    assert len(manifest["resolvedSeeds"]) == 3
    assert manifest["config"]["n0"] == 200
    assert manifest["config"]["masterSeed"] == 7


def test_csv_rows_sorted_and_fixed_format(batch_dir):
    body = (batch_dir / "snapshots.csv").read_text().splitlines()[1:]
    run_col = [int(line.split(",")[0]) for line in body]
    assert run_col == sorted(run_col)
    for line in body[:30]:
        fields = line.split(",")
        assert len(fields) == 11
        # six fixed decimals, no exponent
        assert fields[1].count(".") == 1 and len(fields[1].split(".")[1]) == 6
        assert "e" not in fields[3].lower()


def test_output_identical_across_jobs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, jobs in ((a, "1"), (b, "3")):
        rc = run_cli(
            "run", "--n", "100", "--time", "10", "--runs", "4", "--seed", "3",
            "--jobs", jobs, "--out", str(out),
        )
        assert rc == 0
    assert (a / "snapshots.csv").read_bytes() == (b / "snapshots.csv").read_bytes()


def test_config_round_trip_is_idempotent(tmp_path):
    raw = {
        "n0": 500,
        "durationParallelTime": 50.0,
        "runs": 2,
        "masterSeed": 11,
        "paramsProfile": {"theory": {"k": 3}},
        "protocol": "dsc",
        "initialEstimate": 4,
        "adversarySchedule": [
            {"atParallelTime": 10.0, "action": "remove", "count": 100,
             "policy": "largestEstimateFirst"}
        ],
        "snapshotEveryNInteractions": True,
        "collectResetLog": False,
    }
    once = config_to_json(config_from_json(raw))
    twice = config_to_json(config_from_json(once))
    assert once == twice
    assert once["paramsProfile"] == {"theory": {"k": 3}}
    assert once["adversarySchedule"][0]["policy"] == "largestEstimateFirst"


def test_scenario_presets_are_config_sugar(tmp_path):
    preset_out = tmp_path / "preset"
    rc = run_cli(
        "run", "--scenario", "fig3", "--n", "200", "--time", "30",
        "--seed", "5", "--runs", "2", "--out", str(preset_out),
    )
    assert rc == 0
    manifest = json.loads((preset_out / "manifest.json").read_text())
    schedule = manifest["config"]["adversarySchedule"]
    assert schedule == [
        {"atParallelTime": 1350.0, "action": "remove", "count": 190,
         "policy": "uniformRandom"}
    ]

    # the resolved config, written to a file, reproduces the same bytes
    config_path = tmp_path / "explicit.json"
    config_path.write_text(json.dumps(manifest["config"]))
    explicit_out = tmp_path / "explicit"
    rc = run_cli("run", "--config", str(config_path), "--out", str(explicit_out))
    assert rc == 0
    assert (preset_out / "snapshots.csv").read_bytes() == (
        explicit_out / "snapshots.csv"
    ).read_bytes()


def test_fig3_scenario_removal_snapshot(tmp_path):
    out = tmp_path / "fig3"
    rc = run_cli(
        "run", "--scenario", "fig3", "--n", "400", "--time", "1360",
        "--seed", "2", "--out", str(out),
    )
    assert rc == 0
    rows = read_snapshots_csv(str(out / "snapshots.csv"))[0]
    by_time = {r.parallel_time: r for r in rows}
    assert by_time[1350.0].n == 400
    assert by_time[1351.0].n == 20


def test_appendix_b_scenario_sets_initial_estimate(tmp_path):
    out = tmp_path / "apxb"
    rc = run_cli(
        "run", "--scenario", "appendixB", "--n", "100", "--time", "5",
        "--seed", "2", "--out", str(out),
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["initialEstimate"] == 60
    rows = read_snapshots_csv(str(out / "snapshots.csv"))[0]
    assert rows[0].est_median == 60.0


def test_invalid_config_exits_2(tmp_path, capsys):
    assert run_cli("run", "--n", "1", "--time", "5", "--out", str(tmp_path / "x")) == 2
    assert "n0" in capsys.readouterr().err


def test_unknown_scenario_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli("run", "--scenario", "nope", "--time", "1", "--out", str(tmp_path / "y"))
    assert exc.value.code == 2


def test_entropy_seed_is_resolved_and_replayable(tmp_path):
    out = tmp_path / "ent"
    rc = run_cli(
        "run", "--n", "64", "--time", "5", "--seed", "entropy", "--out", str(out)
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert isinstance(manifest["config"]["masterSeed"], int)
    assert run_cli("replay", str(out / "manifest.json")) == 0


def test_reset_log_round_trip(tmp_path):
    out = tmp_path / "logs"
    rc = run_cli(
        "run", "--n", "64", "--time", "150", "--seed", "4", "--reset-log",
        "--out", str(out),
    )
    assert rc == 0
    per_run = read_reset_log_csv(str(out / "resets.csv"))
    ids, times = per_run[0]
    assert ids.size > 0
    assert times.tolist() == sorted(times.tolist())


def test_replay_ok_and_mismatch_and_missing(batch_dir, capsys):
    manifest_path = batch_dir / "manifest.json"
    assert run_cli("replay", str(manifest_path)) == 0

    manifest = json.loads(manifest_path.read_text())
    manifest["resolvedSeeds"][0] ^= 1
    edited = batch_dir / "edited.json"
    edited.write_text(json.dumps(manifest))
    assert run_cli("replay", str(edited)) == 4
    assert "mismatch" in capsys.readouterr().err

    os.rename(batch_dir / "snapshots.csv", batch_dir / "gone.csv")
    assert run_cli("replay", str(manifest_path)) == 3
    os.rename(batch_dir / "gone.csv", batch_dir / "snapshots.csv")


def test_check_grv_suite(capsys):
    assert run_cli("check", "grv", "--n", "200", "--k", "2", "--trials", "100") == 0
    out = capsys.readouterr().out
    assert "grv-max-bounds" in out and "PASS" in out


def test_check_unknown_suite_exits_2(capsys):
    assert run_cli("check", "nonsense") == 2
    assert "unknown suite" in capsys.readouterr().err


def test_check_sync_suite_small():
    assert run_cli("check", "sync", "--n", "256", "--duration", "400") == 0


def test_check_rounds_suite_small():
    assert run_cli("check", "rounds", "--n", "256", "--bursts", "4") == 0


def test_scenarios_listing(capsys):
    assert run_cli("scenarios") == 0
    out = capsys.readouterr().out
    assert "fig3" in out and "appendixB" in out


def test_value_protocol_via_cli(tmp_path):
    out = tmp_path / "value"
    rc = run_cli(
        "run", "--protocol", "chvp", "--n", "64", "--time", "20",
        "--init-estimate", "100", "--seed", "6", "--out", str(out),
    )
    assert rc == 0
    rows = read_snapshots_csv(str(out / "snapshots.csv"))[0]
    assert rows[0].est_max == 100.0
    assert rows[-1].est_max < 100.0
    assert rows[-1].phase_exchange == rows[-1].n


def test_jobs_default_from_environment(monkeypatch):
    monkeypatch.setenv("POPSIM_JOBS", "5")
    args = cli.build_parser().parse_args(["run", "--n", "10", "--time", "1"])
    assert args.jobs == 5
    monkeypatch.setenv("POPSIM_JOBS", "garbage")
    args = cli.build_parser().parse_args(["run", "--n", "10", "--time", "1"])
    assert args.jobs == 1


def test_estimated_round_length_scales():
    from popsim.protocols import ProtocolParams

    p = ProtocolParams.empirical()
    assert cli.estimated_round_length(10**4, p) > cli.estimated_round_length(10**2, p)
    assert cli.estimated_round_length(10**4, p) == pytest.approx(
        3.0 * 6 * math.log2(16 * 10**4), rel=1e-9
    )
