"""Command-line runner: mine attack plans, evaluate formulas, run scenarios."""
import argparse
import concurrent.futures
import dataclasses
import json
import logging
import random
import statistics
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import analysis
from .attacker import prepare_attack
from .ident import BUCKET_DISTANCES, id_from_hex, log_distance
from .simnet import ConfigError, ScenarioConfig, VARIANTS, preset, run_scenario

log = logging.getLogger("falsefriends")

NS = 1_000_000_000
PRESET_NAMES = sorted(VARIANTS)


class CliError(Exception):
    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind


def _fail(exc: CliError) -> int:
    print(json.dumps({"error": exc.kind, "message": str(exc)}, sort_keys=True), file=sys.stderr)
    return 2


# -- mine ------------------------------------------------------------------


def cmd_mine(args: argparse.Namespace) -> int:
    try:
        victim = id_from_hex(args.victim_id)
    except ValueError as exc:
        raise CliError("invalid_victim_id", str(exc)) from None
    if args.pool_size < 1:
        raise CliError("invalid_pool_size", "--pool-size must be >= 1")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("unwritable_output", str(exc)) from None
    plan = prepare_attack(
        victim, args.pool_size, random.Random(args.seed), inbound_fillers=args.inbound_fillers
    )
    for d, rec in plan.bucket_sybils.items():
        assert log_distance(victim, rec.id) == d
    pool_path = out / "pool.bin"
    try:
        plan.pool.save(pool_path)
        plan.save(out / "plan.json", pool_file=str(pool_path.resolve()))
    except OSError as exc:
        raise CliError("unwritable_output", str(exc)) from None
    print("distance,attempts,node_id")
    for d in BUCKET_DISTANCES:
        print(f"{d},{plan.mining_attempts[d]},{plan.bucket_sybils[d].id:064x}")
    print(f"total,{sum(plan.mining_attempts.values())},")
    return 0


# -- analyze ---------------------------------------------------------------


def _grid_rows(grid: Dict[str, Any], trials: int, seed: int) -> List[analysis.Row]:
    rows: List[analysis.Row] = []
    if "keygens" in grid:
        spec = grid["keygens"] or {}
        rows += analysis.keygen_rows(spec.get("lo", 239), spec.get("hi", 255))
    if "fig5" in grid:
        spec = grid["fig5"] or {}
        rows += analysis.fig5_rows(
            spec.get("N", (32, 136, 272)),
            spec.get("a", list(range(1, 21))),
            spec.get("l", 17),
            trials,
            seed,
        )
    if "min_id" in grid:
        spec = grid["min_id"] or {}
        rows += analysis.min_id_rows(spec.get("m", 100), spec.get("n", (10, 100, 1000)), trials, seed)
    if "fig7" in grid:
        spec = grid["fig7"] or {}
        rows += analysis.fig7_rows(spec.get("m", (9000, 25000, 500000)), spec.get("n"))
    unknown = set(grid) - {"keygens", "fig5", "min_id", "fig7"}
    if unknown:
        raise CliError("invalid_grid", f"unknown grid sections {sorted(unknown)}")
    return rows


GRID_PRESETS = {
    "fig5": {"fig5": {}},
    "fig7": {"fig7": {}},
    "min-id": {"min_id": {}},
    "keygens": {"keygens": {}},
    "all": {"keygens": {}, "fig5": {}, "min_id": {}, "fig7": {}},
    "empty": {},
}


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.grid in GRID_PRESETS:
        grid = GRID_PRESETS[args.grid]
    else:
        try:
            grid = json.loads(Path(args.grid).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("invalid_grid", f"{args.grid}: {exc}") from None
    if args.trials < 0:
        raise CliError("invalid_trials", "--trials must be >= 0")
    try:
        rows = _grid_rows(grid, args.trials, args.seed)
    except analysis.AnalysisDomainError as exc:
        raise CliError("domain_error", str(exc)) from None
    text = analysis.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- simulate / report -----------------------------------------------------


def load_scenario(ref: str) -> ScenarioConfig:
    if ref in VARIANTS:
        return preset(ref)
    try:
        obj = json.loads(Path(ref).read_text())
    except OSError as exc:
        raise CliError("invalid_scenario", f"{ref}: not a preset ({', '.join(PRESET_NAMES)}) or readable file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError("invalid_scenario", f"{ref}: {exc}") from None
    try:
        return ScenarioConfig.from_json(obj)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise CliError("invalid_scenario", str(exc)) from None


def _apply_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    changes: Dict[str, Any] = {}
    if args.neighbors_limit is not None:
        changes["neighbors_limit"] = args.neighbors_limit
    if args.no_restart:
        changes["restart_victim"] = False
    if args.duration_hours is not None:
        changes["duration_limit"] = args.duration_hours * 3600.0
    if args.no_attack:
        changes["attack"] = None
    elif args.pool_size is not None:
        if args.pool_size < 1:
            raise CliError("invalid_pool_size", "--pool-size must be >= 1")
        if cfg.attack is None:
            raise CliError("invalid_pool_size", "--pool-size given but the scenario has no attack")
        changes["attack"] = dataclasses.replace(cfg.attack, pool_size=args.pool_size)
    cfg = cfg.replace(**changes)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise CliError("invalid_scenario", str(exc)) from None
    return cfg


def _seed_list(args: argparse.Namespace) -> List[int]:
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    else:
        seeds = list(range(args.seed, args.seed + args.runs))
    if len(set(seeds)) != len(seeds):
        raise CliError("duplicate_seeds", "seeds must be distinct")
    if not seeds or any(not 0 <= s < 2**64 for s in seeds):
        raise CliError("invalid_seed", "seeds must be 64-bit unsigned integers")
    return seeds


def _run_one(cfg_json: Dict[str, Any], seed: int, out_dir: str) -> Dict[str, Any]:
    cfg = ScenarioConfig.from_json(cfg_json).replace(seed=seed)
    try:
        trace = run_scenario(cfg)
    except Exception as exc:  # one bad seed must not sink the batch
        return {"seed": seed, "outcome": "ERROR", "eclipse_time_ns": None, "error": f"{type(exc).__name__}: {exc}"}
    path = Path(out_dir) / f"trace-{seed}.ndjson"
    trace.write(str(path))
    rec = trace.outcome_record()
    return {"seed": seed, "outcome": rec["outcome"], "eclipse_time_ns": rec["eclipse_time_ns"], "trace": path.name}


def quartiles(values: Sequence[float]) -> Optional[Dict[str, float]]:
    if not values:
        return None
    if len(values) == 1:
        v = float(values[0])
        return {"q1": v, "median": v, "q3": v}
    q1, med, q3 = statistics.quantiles(sorted(values), n=4, method="inclusive")
    return {"q1": q1, "median": med, "q3": q3}


def summarize(runs: List[Dict[str, Any]], scenario: Dict[str, Any]) -> Dict[str, Any]:
    runs = sorted(runs, key=lambda r: r["seed"])
    times = [r["eclipse_time_ns"] / NS for r in runs if r["outcome"] == "ECLIPSED"]
    return {
        "scenario": scenario,
        "runs": runs,
        "seeds": len(runs),
        "successes": len(times),
        "errors": sum(1 for r in runs if r["outcome"] == "ERROR"),
        "eclipse_time_s": quartiles(times),
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_scenario(args.scenario), args)
    seeds = _seed_list(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("unwritable_output", str(exc)) from None
    cfg_json = cfg.to_json()
    (out / "scenario.json").write_text(json.dumps(cfg_json, indent=2, sort_keys=True) + "\n")
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(args.workers) as ex:
            runs = list(ex.map(_run_one, [cfg_json] * len(seeds), seeds, [str(out)] * len(seeds)))
    else:
        runs = []
        for seed in seeds:
            runs.append(_run_one(cfg_json, seed, str(out)))
            log.info("seed %d: %s", seed, runs[-1]["outcome"])
    summary = summarize(runs, cfg_json)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: summary[k] for k in ("seeds", "successes", "errors", "eclipse_time_s")}, sort_keys=True))
    return 1 if summary["errors"] else 0


def _fmt_duration(seconds: Optional[float]) -> str:
    if seconds is None:
        return "-"
    if seconds < 3600:
        return f"{seconds:.1f} s"
    if seconds < 86400:
        return f"{seconds / 3600:.2f} h"
    return f"{seconds / 86400:.2f} d"


def cmd_report(args: argparse.Namespace) -> int:
    """Rebuild the batch summary from the trace files alone and print it."""
    out = Path(args.out)
    traces = sorted(out.glob("trace-*.ndjson"), key=lambda p: int(p.stem.split("-", 1)[1]))
    if not traces:
        raise CliError("no_traces", f"no trace-*.ndjson files in {out}")
    runs = []
    for path in traces:
        lines = path.read_text().splitlines()
        try:
            final = json.loads(lines[-1])
        except (IndexError, json.JSONDecodeError) as exc:
            raise CliError("corrupt_trace", f"{path.name}: {exc}") from None
        runs.append({"seed": final["seed"], "outcome": final["outcome"],
                     "eclipse_time_ns": final["eclipse_time_ns"], "trace": path.name})
    scenario_path = out / "scenario.json"
    scenario = json.loads(scenario_path.read_text()) if scenario_path.exists() else {}
    summary = summarize(runs, scenario)
    q = summary["eclipse_time_s"] or {}
    lines = [
        f"# Batch report: {out.name}",
        "",
        f"variant: {scenario.get('geth_variant', {}).get('name', '?')}, "
        f"restart: {scenario.get('restart_victim', '?')}",
        f"eclipsed: {summary['successes']} / {summary['seeds']}",
        f"eclipse time Q1 / median / Q3: {_fmt_duration(q.get('q1'))} / "
        f"{_fmt_duration(q.get('median'))} / {_fmt_duration(q.get('q3'))}",
        "",
        "| seed | outcome | eclipse time |",
        "|---:|---|---:|",
    ]
    for r in summary["runs"]:
        t = None if r["eclipse_time_ns"] is None else r["eclipse_time_ns"] / NS
        lines.append(f"| {r['seed']} | {r['outcome']} | {_fmt_duration(t)} |")
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text)
    sys.stdout.write(text)
    return 0


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="falsefriends", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mine", help="mine bucket IDs and a pool for one victim")
    m.add_argument("--victim-id", required=True, help="64 hex characters")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--pool-size", type=int, default=1_000_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--inbound-fillers", type=int, default=17)
    m.set_defaults(func=cmd_mine)

    a = sub.add_parser("analyze", help="closed forms and Monte Carlo checks as CSV")
    a.add_argument("--grid", default="all", help=f"{', '.join(GRID_PRESETS)} or a JSON grid file")
    a.add_argument("--trials", type=int, default=0, help="Monte Carlo trials per row (0: closed forms only)")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a scenario for a batch of seeds")
    s.add_argument("--scenario", default="geth-1.8", help=f"{', '.join(PRESET_NAMES)} or a JSON file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0, help="first seed")
    s.add_argument("--runs", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--seeds", help="explicit comma-separated seeds (overrides --seed/--runs)")
    s.add_argument("--pool-size", type=int)
    s.add_argument("--neighbors-limit", type=int, choices=(12, 16))
    s.add_argument("--no-restart", action="store_true", help="warm the victim up before the attack")
    s.add_argument("--no-attack", action="store_true")
    s.add_argument("--duration-hours", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarize the traces in a simulate output directory")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc)
    except Exception as exc:  # keep failures machine-readable
        return _fail(CliError(type(exc).__name__, str(exc)))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
