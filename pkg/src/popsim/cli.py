"""Experiment runner CLI: seeded multi-run batches, check suites, deterministic outputs.

Subcommands:

* ``run``       -- execute a batch of independent seeded runs and write a
                   snapshots CSV plus a manifest JSON (and optionally a reset
                   log CSV); presets for the scripted scenarios.
* ``check``     -- run the Monte Carlo bound checkers and print a verdict table.
* ``replay``    -- re-run a batch from its manifest and verify the CSV bytes.
* ``scenarios`` -- list the run presets.

Exit codes: 0 success, 1 failed check verdicts, 2 invalid configuration or
arguments, 3 I/O failure, 4 replay mismatch.

Output files are deterministic: fixed column order, floats with six decimal
places, rows ordered by run index then parallel time, regardless of --jobs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, analysis, engine
from .engine import (
    AdversaryEvent,
    ConfigError,
    ExperimentConfig,
    RemovalPolicy,
    RunRecord,
)
from .protocols import ProtocolParams
from .sampling import SeededStream, derive_run_seed

CSV_HEADER = (
    "run,parallel_time,n,est_min,est_median,est_max,"
    "phase_exchange,phase_hold,phase_reset,resets,max_bits"
)
RESET_LOG_HEADER = "run,agent_id,parallel_time"


# ---------------------------------------------------------------------------
# config (de)serialization -- the stable on-disk JSON key names


def _params_profile_to_json(config: ExperimentConfig):
    if config.profile == "empirical":
        return "empirical"
    if config.profile == "theory":
        return {"theory": {"k": config.theory_k}}
    p = config.custom_params
    return {
        "custom": {
            "k": p.k,
            "tau1": p.tau1,
            "tau2": p.tau2,
            "tau3": p.tau3,
            "tauPrime": p.tau_prime,
            "overestimationFactor": p.overestimation_factor,
        }
    }


def _params_profile_from_json(value) -> tuple[str, int, ProtocolParams | None]:
    if value == "empirical":
        return "empirical", 2, None
    if isinstance(value, dict) and "theory" in value:
        return "theory", int(value["theory"].get("k", 2)), None
    if isinstance(value, dict) and "custom" in value:
        c = value["custom"]
        try:
            params = ProtocolParams(
                k=int(c["k"]),
                tau1=int(c["tau1"]),
                tau2=int(c["tau2"]),
                tau3=int(c["tau3"]),
                tau_prime=int(c["tauPrime"]),
                overestimation_factor=int(c.get("overestimationFactor", 1)),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError("paramsProfile", str(exc)) from exc
        return "custom", 2, params
    raise ConfigError("paramsProfile", f"unrecognized profile {value!r}")


def config_to_json(config: ExperimentConfig) -> dict:
    return {
        "n0": config.n0,
        "durationParallelTime": config.duration,
        "runs": config.runs,
        "masterSeed": config.master_seed,
        "paramsProfile": _params_profile_to_json(config),
        "protocol": config.protocol,
        "initialEstimate": config.initial_estimate,
        "adversarySchedule": [
            {
                "atParallelTime": ev.at_parallel_time,
                "action": ev.action,
                "count": ev.count,
                "policy": ev.policy.value,
            }
            for ev in config.adversary_schedule
        ],
        "snapshotEveryNInteractions": config.snapshot_every_n,
        "collectResetLog": config.collect_reset_log,
    }


def config_from_json(data: dict) -> ExperimentConfig:
    try:
        profile, theory_k, custom = _params_profile_from_json(
            data.get("paramsProfile", "empirical")
        )
        schedule = []
        for ev in data.get("adversarySchedule", []):
            schedule.append(
                AdversaryEvent(
                    at_parallel_time=float(ev["atParallelTime"]),
                    action=str(ev["action"]),
                    count=int(ev["count"]),
                    policy=RemovalPolicy(ev.get("policy", "uniformRandom")),
                )
            )
        master_seed = data.get("masterSeed", 0)
        if master_seed != "entropy":
            master_seed = int(master_seed)
        init_est = data.get("initialEstimate")
        config = ExperimentConfig(
            n0=int(data["n0"]),
            duration=float(data["durationParallelTime"]),
            runs=int(data.get("runs", 1)),
            master_seed=master_seed,
            profile=profile,
            theory_k=theory_k,
            custom_params=custom,
            protocol=str(data.get("protocol", "dsc")),
            initial_estimate=None if init_est is None else int(init_est),
            adversary_schedule=schedule,
            snapshot_every_n=bool(data.get("snapshotEveryNInteractions", True)),
            collect_reset_log=bool(data.get("collectResetLog", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("config", str(exc)) from exc
    return config


# ---------------------------------------------------------------------------
# scenario presets (sugar over explicit configs)

SCENARIOS = {
    "fig3": "adversary drops the population to n0/20 at t=1350 (duration 2500)",
    "appendixB": "all agents start with estimate 60 (duration 3500)",
}


def apply_scenario(config: ExperimentConfig, name: str) -> ExperimentConfig:
    if name == "fig3":
        config.duration = 2500.0
        config.adversary_schedule = [
            AdversaryEvent(
                at_parallel_time=1350.0,
                action="remove",
                count=config.n0 - max(config.n0 // 20, 2),
                policy=RemovalPolicy.UNIFORM_RANDOM,
            )
        ]
    elif name == "appendixB":
        config.duration = 3500.0
        config.initial_estimate = 60
    else:
        raise ConfigError("scenario", f"unknown scenario {name!r}")
    return config


# ---------------------------------------------------------------------------
# output files


def snapshot_rows(record: RunRecord) -> list[str]:
    rows = []
    for s in record.snapshots:
        rows.append(
            f"{record.run_index},{s.parallel_time:.6f},{s.n},"
            f"{s.est_min:.6f},{s.est_median:.6f},{s.est_max:.6f},"
            f"{s.phase_exchange},{s.phase_hold},{s.phase_reset},"
            f"{s.resets},{s.max_bits}"
        )
    return rows


def render_snapshots_csv(records: list[RunRecord]) -> str:
    lines = [CSV_HEADER]
    for record in sorted(records, key=lambda r: r.run_index):
        lines.extend(snapshot_rows(record))
    return "\n".join(lines) + "\n"


def render_reset_log_csv(records: list[RunRecord]) -> str:
    lines = [RESET_LOG_HEADER]
    for record in sorted(records, key=lambda r: r.run_index):
        if record.reset_ids is None:
            continue
        for agent_id, t in zip(record.reset_ids, record.reset_times):
            lines.append(f"{record.run_index},{int(agent_id)},{float(t):.6f}")
    return "\n".join(lines) + "\n"


@dataclass
class SnapshotRow:
    run: int
    parallel_time: float
    n: int
    est_min: float
    est_median: float
    est_max: float
    phase_exchange: int
    phase_hold: int
    phase_reset: int
    resets: int
    max_bits: int


def read_snapshots_csv(path: str) -> dict[int, list[SnapshotRow]]:
    """Parse a snapshots CSV into rows grouped by run index."""
    runs: dict[int, list[SnapshotRow]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            f = line.split(",")
            row = SnapshotRow(
                run=int(f[0]),
                parallel_time=float(f[1]),
                n=int(f[2]),
                est_min=float(f[3]),
                est_median=float(f[4]),
                est_max=float(f[5]),
                phase_exchange=int(f[6]),
                phase_hold=int(f[7]),
                phase_reset=int(f[8]),
                resets=int(f[9]),
                max_bits=int(f[10]),
            )
            runs.setdefault(row.run, []).append(row)
    return runs


def read_reset_log_csv(path: str) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Parse a reset log CSV into (agent ids, times) per run index."""
    per_run: dict[int, tuple[list[int], list[float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RESET_LOG_HEADER:
            raise ValueError(f"unexpected reset log header in {path}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            run_s, id_s, t_s = line.split(",")
            ids, times = per_run.setdefault(int(run_s), ([], []))
            ids.append(int(id_s))
            times.append(float(t_s))
    return {
        run: (np.array(ids, dtype=np.int64), np.array(times, dtype=np.float64))
        for run, (ids, times) in per_run.items()
    }


# ---------------------------------------------------------------------------
# subcommands


def _default_jobs() -> int:
    env = os.environ.get("POPSIM_JOBS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            pass
    return 1


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = config_from_json(json.load(fh))
    else:
        config = ExperimentConfig(n0=1000, duration=100.0)
    if args.n is not None:
        config.n0 = args.n
    if args.scenario:
        apply_scenario(config, args.scenario)
    if args.time is not None:
        config.duration = args.time
    if args.runs is not None:
        config.runs = args.runs
    if args.seed is not None:
        config.master_seed = args.seed if args.seed == "entropy" else int(args.seed)
    if args.profile is not None:
        config.profile = args.profile
    if args.k is not None:
        config.theory_k = args.k
    if args.protocol is not None:
        config.protocol = args.protocol
    if args.init_estimate is not None:
        config.initial_estimate = args.init_estimate
    if args.reset_log:
        config.collect_reset_log = True
    if config.master_seed == "entropy":
        config.master_seed = int.from_bytes(os.urandom(8), "little")
    config.validate()
    return config


def cmd_run(args) -> int:
    try:
        config = _resolve_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        if isinstance(exc, OSError):
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    records = engine.run_batch(config, jobs=args.jobs)
    seeds = [r.seed for r in records]

    out_dir = args.out
    try:
        os.makedirs(out_dir, exist_ok=True)
        snapshots_path = os.path.join(out_dir, "snapshots.csv")
        manifest_path = os.path.join(out_dir, "manifest.json")
        outputs = {"snapshots": "snapshots.csv"}
        with open(snapshots_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(render_snapshots_csv(records))
        if config.collect_reset_log:
            outputs["resetLog"] = "resets.csv"
            with open(
                os.path.join(out_dir, "resets.csv"), "w", encoding="utf-8", newline=""
            ) as fh:
                fh.write(render_reset_log_csv(records))
        manifest = {
            "config": config_to_json(config),
            "resolvedSeeds": seeds,
            "toolVersion": f"popsim {__version__}",
            "outputs": outputs,
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {snapshots_path} ({config.runs} runs) and {manifest_path}")
    return 0


CHECK_SUITES = ("grv", "epidemic", "chvp", "participation", "sync", "rounds", "all")


def _check_sync(n: int, duration: float, seed: int, params: ProtocolParams) -> analysis.BoundCheck:
    """Fraction of post-warmup configurations that satisfy the synchronized predicate."""
    from . import _kernels

    stream = SeededStream(derive_run_seed(seed, 0))
    pop = engine.Population.initial(n, params)
    rng = stream.export_state()
    dummy_ids = np.empty(0, dtype=np.int64)
    dummy_ts = np.empty(0, dtype=np.float64)
    grains = int(duration)
    warmup = grains // 2
    synced = 0
    checked = 0
    for unit in range(grains):
        _kernels.dsc_grain(
            pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
            n, float(unit),
            params.tau1, params.tau2, params.tau3, params.tau_prime,
            params.k, params.overestimation_factor,
            dummy_ids, dummy_ts, False,
        )
        if unit >= warmup:
            checked += 1
            synced += analysis.is_synchronized(pop, params).is_synchronized
    return analysis.BoundCheck(
        name="sync-occupancy",
        trials=checked,
        successes=synced,
        required_fraction=0.10,
    )


def _check_rounds(
    n: int, bursts_wanted: int, seed: int, params: ProtocolParams, gap_factor: float
) -> analysis.BoundCheck:
    """Burst structure after convergence: each live agent ticks exactly once."""
    round_units = estimated_round_length(n, params)
    warmup = 40 * math.log2(n)
    duration = warmup + (bursts_wanted + 4) * round_units
    config = ExperimentConfig(
        n0=n,
        duration=duration,
        runs=1,
        master_seed=seed,
        protocol="dsc",
        collect_reset_log=True,
        snapshot_every_n=False,
    )
    record = engine.run(config)
    report = analysis.detect_rounds(record.reset_ids, record.reset_times, n, gap_factor)
    inner = [b for b in report.bursts[1:-1] if b.start >= warmup]
    inner = inner[:bursts_wanted]
    clean = sum(b.every_agent_exactly_once(n) for b in inner)
    lo, hi = math.log2(n), 50 * math.log2(n)
    gaps = [
        b2.start - b1.start for b1, b2 in zip(inner, inner[1:])
    ]
    gaps_ok = all(lo <= g <= hi for g in gaps)
    return analysis.BoundCheck(
        name="round-structure",
        trials=len(inner),
        successes=clean if gaps_ok else 0,
        required_fraction=0.90,
        details={"gaps_ok": gaps_ok, "bursts_found": len(report.bursts)},
    )


def estimated_round_length(n: int, params: ProtocolParams) -> float:
    """Rough parallel-time length of one converged clock round (for sizing runs)."""
    est = math.log2(params.k * n) * params.overestimation_factor
    return 3.0 * params.tau1 * est


def cmd_check(args) -> int:
    suite = args.suite
    if suite not in CHECK_SUITES:
        print(f"error: unknown suite {suite!r} (choose from {', '.join(CHECK_SUITES)})", file=sys.stderr)
        return 2
    params = ProtocolParams.empirical()
    checks: list[analysis.BoundCheck] = []
    try:
        if suite in ("grv", "all"):
            n = args.n or 1000
            checks.append(
                analysis.check_grv_bounds(
                    n, args.k or 2, args.trials or 500, SeededStream(args.seed)
                )
            )
        if suite in ("epidemic", "all"):
            checks.append(
                analysis.check_epidemic_time(
                    args.n or 1024, args.k or 2, args.runs or 100, args.seed
                )
            )
        if suite in ("chvp", "all"):
            checks.append(
                analysis.check_chvp_bounds(
                    args.n or 1024,
                    args.m or 1000,
                    args.delta or 50,
                    args.k or 2,
                    args.runs or 100,
                    args.seed,
                )
            )
        if suite in ("participation", "all"):
            checks.append(
                analysis.check_participation(
                    args.n or 10000, args.c or 20, args.k or 4, args.runs or 20, args.seed
                )
            )
        if suite in ("sync", "all"):
            checks.append(
                _check_sync(args.n or 1000, args.duration or 600.0, args.seed, params)
            )
        if suite in ("rounds", "all"):
            checks.append(
                _check_rounds(
                    args.n or 2000, args.bursts or 10, args.seed, params, args.gap_factor
                )
            )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for check in checks:
        print(check.summary())
    return 0 if all(c.verdict for c in checks) else 1


def cmd_replay(args) -> int:
    try:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: bad manifest: {exc}", file=sys.stderr)
        return 2
    try:
        config = config_from_json(manifest["config"])
        config.validate()
        seeds = [int(s) for s in manifest["resolvedSeeds"]]
        outputs = manifest["outputs"]
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"error: bad manifest: {exc}", file=sys.stderr)
        return 2
    if len(seeds) != config.runs:
        print("error: bad manifest: seed count does not match runs", file=sys.stderr)
        return 2

    base = os.path.dirname(os.path.abspath(args.manifest))
    originals = {}
    for key, rel in outputs.items():
        path = os.path.join(base, rel)
        try:
            with open(path, "rb") as fh:
                originals[key] = fh.read()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3

    records = [
        engine.run(config, run_index=i, seed=seed) for i, seed in enumerate(seeds)
    ]
    rendered = {"snapshots": render_snapshots_csv(records).encode()}
    if "resetLog" in outputs:
        rendered["resetLog"] = render_reset_log_csv(records).encode()

    for key, original in originals.items():
        fresh = rendered.get(key)
        if fresh is None:
            continue
        if fresh != original:
            old_lines = original.decode().splitlines()
            new_lines = fresh.decode().splitlines()
            for i, (a, b) in enumerate(zip(old_lines, new_lines)):
                if a != b:
                    print(f"replay mismatch in {key} at row {i}:", file=sys.stderr)
                    print(f"  recorded: {a}", file=sys.stderr)
                    print(f"  replayed: {b}", file=sys.stderr)
                    break
            else:
                print(
                    f"replay mismatch in {key}: row counts differ "
                    f"({len(old_lines)} vs {len(new_lines)})",
                    file=sys.stderr,
                )
            return 4
    print("replay OK: outputs are byte-identical")
    return 0


def cmd_scenarios(args) -> int:
    for name, desc in SCENARIOS.items():
        print(f"{name}: {desc}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popsim",
        description="Population-protocol simulator for dynamic size counting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a batch of seeded simulation runs")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--n", type=int, help="initial population size")
    p_run.add_argument("--time", type=float, help="duration in parallel time")
    p_run.add_argument("--runs", type=int, help="number of independent runs")
    p_run.add_argument("--seed", help="master seed (64-bit int or 'entropy')")
    p_run.add_argument(
        "--profile", choices=["empirical", "theory"], help="parameter profile"
    )
    p_run.add_argument("--k", type=int, help="k for the theory profile")
    p_run.add_argument(
        "--protocol", choices=list(engine.PROTOCOLS), help="protocol to simulate"
    )
    p_run.add_argument("--init-estimate", type=int, help="initial size estimate")
    p_run.add_argument("--scenario", choices=list(SCENARIOS), help="apply a preset")
    p_run.add_argument("--reset-log", action="store_true", help="record per-agent resets")
    p_run.add_argument("--out", default="popsim-out", help="output directory")
    p_run.add_argument("--jobs", type=int, default=_default_jobs(), help="parallel runs")
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check", help="run Monte Carlo bound-check suites")
    p_check.add_argument("suite", help=f"one of: {', '.join(CHECK_SUITES)}")
    p_check.add_argument("--n", type=int)
    p_check.add_argument("--k", type=int)
    p_check.add_argument("--m", type=int)
    p_check.add_argument("--delta", type=int)
    p_check.add_argument("--c", type=int)
    p_check.add_argument("--trials", type=int)
    p_check.add_argument("--runs", type=int)
    p_check.add_argument("--bursts", type=int)
    p_check.add_argument("--duration", type=float)
    p_check.add_argument("--gap-factor", type=float, default=0.5)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(func=cmd_check)

    p_replay = sub.add_parser("replay", help="re-run a recorded batch and compare bytes")
    p_replay.add_argument("manifest", help="manifest.json from a previous run")
    p_replay.set_defaults(func=cmd_replay)

    p_scen = sub.add_parser("scenarios", help="list run presets")
    p_scen.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
