"""Command-line front end: run scenarios, execute presets, validate configs."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .presets import PRESET_NAMES, ExperimentPreset, run_preset
from .scenario import ScenarioError, config_hash, load_scenario, scenario_from_dict, scenario_to_dict
from .sim import run_scenario


def _load(path: str, overrides: argparse.Namespace):
    scenario = load_scenario(path) if path else scenario_from_dict({})
    data = scenario_to_dict(scenario)
    if overrides.seed is not None:
        data["seed"] = overrides.seed
        # regenerate the topology for the new seed unless it was explicit
        if getattr(overrides, "reseed_topology", False):
            data["network"].pop("nodes", None)
            data["network"].pop("routes", None)
        data["channel"]["rng_seed"] = overrides.seed
    if overrides.duration is not None:
        data["duration_s"] = overrides.duration
    if getattr(overrides, "protocol", None):
        data["mac"]["protocol"] = overrides.protocol
    return scenario_from_dict(data)


def _write_metrics_csv(path: str, scenario, metrics) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    header = ["generated", "delivered", "dropped", "in_flight", "mean_delay_s",
              "drop_ratio", "throughput_bps", "busy_time_s", "data_frames_transmitted"]
    row = [metrics.generated, metrics.delivered, metrics.dropped, metrics.in_flight,
           metrics.mean_delay, metrics.drop_ratio, metrics.throughput,
           metrics.busy_time, metrics.data_frames_transmitted]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config={config_hash(scenario)} seed={scenario.seed}\n")
        fh.write(",".join(header) + "\n")
        fh.write(",".join(str(v) for v in row) + "\n")


def _cmd_run(args) -> int:
    scenario = _load(args.scenario, args)
    result = run_scenario(scenario, sample_every=args.sample_every,
                          record_events=args.trace is not None)
    metrics = result.metrics
    out_dir = args.out
    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), scenario, metrics)
    if metrics.series:
        series_path = os.path.join(out_dir, "metrics_series.csv")
        with open(series_path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config={config_hash(scenario)} seed={scenario.seed}\n")
            fh.write("time_s,mean_delay_s,drop_ratio,throughput_bps\n")
            for row in metrics.series:
                fh.write(f"{row['time']},{row['mean_delay']},{row['drop_ratio']},{row['throughput']}\n")
    if args.trace is not None:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for record in result.trace.events:
                fh.write(json.dumps(record) + "\n")
    delay = "nan" if math.isnan(metrics.mean_delay) else f"{metrics.mean_delay:.3f}"
    print(
        f"{scenario.mac.protocol}: generated={metrics.generated} delivered={metrics.delivered} "
        f"dropped={metrics.dropped} mean_delay={delay}s "
        f"drop_ratio={metrics.drop_ratio:.4f} throughput={metrics.throughput:.1f}bps"
    )
    print(f"metrics written to {os.path.join(out_dir, 'metrics.csv')}")
    return 0


def _cmd_preset(args) -> int:
    params: dict = {}
    if args.duration is not None:
        params["duration"] = args.duration
    if args.loads:
        params["loads"] = tuple(args.loads)
    if args.jobs is not None:
        params["workers"] = args.jobs
    preset = ExperimentPreset(
        name=args.name,
        params=params,
        seeds=tuple(args.seeds) if args.seeds else (args.seed if args.seed is not None else 1,),
        output_dir=args.out,
    )
    path = run_preset(preset)
    print(f"wrote {path}")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"OK: {args.scenario} (config={config_hash(scenario)}, "
          f"{len(scenario.positions)} nodes, {len(scenario.routes)} routes)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwansim",
        description="Simulate multi-hop underwater acoustic networks with a "
                    "time-reversal physical layer and MAC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and write metrics CSV")
    run_p.add_argument("scenario", nargs="?", default=None, help="scenario YAML (defaults when omitted)")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--reseed-topology", action="store_true",
                       help="regenerate node placement for the overridden seed")
    run_p.add_argument("--duration", type=float, default=None)
    run_p.add_argument("--protocol", choices=("trmac", "csma_ca", "s_csma_ca"), default=None)
    run_p.add_argument("--out", default=".", help="output directory")
    run_p.add_argument("--sample-every", type=float, default=None,
                       help="also write cumulative metric series at this period")
    run_p.add_argument("--trace", default=None, help="write an NDJSON event trace here")
    run_p.set_defaults(func=_cmd_run)

    preset_p = sub.add_parser("preset", help="run a canned experiment preset")
    preset_p.add_argument("name", choices=PRESET_NAMES)
    preset_p.add_argument("--out", default=".", help="output directory")
    preset_p.add_argument("--seed", type=int, default=None)
    preset_p.add_argument("--seeds", type=int, nargs="+", default=None)
    preset_p.add_argument("--duration", type=float, default=None)
    preset_p.add_argument("--loads", type=int, nargs="+", default=None)
    preset_p.add_argument("--jobs", type=int, default=None, help="parallel run workers")
    preset_p.set_defaults(func=_cmd_preset)

    val_p = sub.add_parser("validate", help="check a scenario file")
    val_p.add_argument("scenario")
    val_p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
