"""Command-line entry point: ``phev-marl <command> [options]``.

Every command prints line-delimited JSON on stdout. Exit status is 0 on
success, 2 for configuration or input errors, 3 for model or training
failures and 4 when some sweep cells failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .drivecycle import CycleParseError, build_learning_cycle, canonical_cycle, load_cycle, write_cycle
from .environment import write_trace
from .maps import ConfigurationError, default_fuel_map, default_motor_map, provenance_lines, write_map
from .neural import TrainingError
from .powertrain import ModelValidationError, VehicleConfig
from .trainer import (
    ExperimentConfig,
    agent_policy,
    compare,
    evaluate,
    load_checkpoint,
    rollout,
    sweep_rind,
    train,
    write_metrics,
    zero_policy,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 2, 3, 4


def emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_config(args) -> ExperimentConfig:
    """Config file first, then any flag the user actually passed."""
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for flag, key in (("mode", "mode"), ("r_ind", "r_ind"), ("episodes", "episodes"),
                      ("initial_soc", "initial_soc"), ("seeds", "seeds")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = tuple(value) if key == "seeds" else value
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "socs", None) is not None:
        changes["evaluation_socs"] = tuple(args.socs)
    if not changes:
        return config
    try:
        return config.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None


def write_manifest(out: Path, kind: str, config: ExperimentConfig, **extra) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": kind, "config": config.to_dict(), "config_hash": config.config_hash(), **extra}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = load_config(args)
    cycle = load_cycle(args.cycle, config.dt) if args.cycle else canonical_cycle(config.cycle_spec(0))
    if args.policy == "zero":
        policy = zero_policy
    elif args.policy.startswith("checkpoint:"):
        ck_config, agents = load_checkpoint(args.policy.split(":", 1)[1])
        config = config.replace(mode=ck_config.mode, r_ind=ck_config.r_ind)
        policy = agent_policy(ck_config.mode, agents)
    else:
        raise ConfigurationError(f"--policy must be 'zero' or 'checkpoint:PATH', got {args.policy!r}")
    env = config.make_env()
    res = rollout(env, policy, cycle, config.initial_soc, record=args.trace is not None)
    if args.trace:
        write_trace(res["trace"], args.trace)
    emit({"command": "simulate", "cycle": cycle.name, "steps": res["steps"], "fuel_g": res["fuel_g"],
          "distance_m": res["distance_m"], "end_soc": res["end_soc"], "p_loss_j": res["p_loss_j"],
          "trace": args.trace})
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in config.seeds:
        run_dir = out / f"seed_{seed}" if len(config.seeds) > 1 else out
        runlog = train(config, seed, checkpoint_dir=run_dir / "checkpoint")
        runlog.to_csv(run_dir / "runlog.csv")
        runlog.to_json(run_dir / "runlog.json")
        rel = run_dir.relative_to(out)
        record = {"seed": seed, "runlog_csv": str(rel / "runlog.csv"), "checkpoint": str(rel / "checkpoint"),
                  "final10_combined_reward": runlog.final_mean(), "end_soc": runlog.records[-1].end_soc}
        runs.append(record)
        emit({"command": "train", **record, "runlog_csv": str(run_dir / "runlog.csv"),
              "checkpoint": str(run_dir / "checkpoint")})
    write_manifest(out, "train", config, runs=runs)
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args)
    ratios = args.ratios if args.ratios is not None else (0.0, 0.2, 0.4, 0.6, 0.8)
    logs, failed = sweep_rind(config, ratios, Path(args.out), jobs=args.jobs)
    for ratio, by_seed in logs.items():
        for seed, lg in sorted(by_seed.items()):
            emit({"command": "sweep", "ratio": ratio, "seed": seed, "status": "ok",
                  "final10_combined_reward": lg.final_mean()})
    for cell in failed:
        emit({"command": "sweep", "ratio": cell["ratio"], "seed": cell["seed"], "status": cell["status"]})
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    cycle = load_cycle(args.cycle) if args.cycle else None
    by_mode = {}
    rows = []
    for ck in args.checkpoint:
        config, _ = load_checkpoint(ck)
        got = evaluate(ck, cycle, args.socs)
        by_mode.setdefault(config.mode, []).append(got)
        rows.extend(got)
    if len(by_mode.get("Single", [])) == 1 and len(by_mode.get("Multi", [])) == 1:
        rows = compare(by_mode["Single"][0], by_mode["Multi"][0])
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(rows, out / "metrics.csv")
    for r in rows:
        emit({"command": "evaluate", "initial_soc": r.initial_soc, "method": r.method, "end_soc": r.end_soc,
              "soc_error_pct": r.soc_error_pct, "fuel_l_per_100km": r.fuel_l_per_100km, "saving_pct": r.saving_pct})
    (out / "manifest.json").write_text(json.dumps(
        {"kind": "evaluate", "checkpoints": [str(c) for c in args.checkpoint], "cycle": args.cycle,
         "initial_socs": args.socs, "metrics": str(out / "metrics.csv")}, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    from . import report  # matplotlib is only needed here

    if not args.metrics and not args.sweep:
        raise ConfigurationError("report needs --metrics and/or --sweep")
    out = Path(args.out)
    if args.metrics:
        if not Path(args.metrics).exists():
            raise ConfigurationError(f"metrics file not found: {args.metrics}")
        res = report.metrics_report(args.metrics, out)
        emit({"command": "report", "part": "table", "table": Path(res["table_txt"]).read_text(), **res})
        if args.figures:
            rows = report.with_savings(report.read_metrics(args.metrics))
            emit({"command": "report", "part": "figure", "path": str(report.plot_soc_comparison(rows, out / "soc.png"))})
    if args.sweep:
        if not (Path(args.sweep) / "manifest.json").exists():
            raise ConfigurationError(f"no sweep manifest in {args.sweep}")
        res = report.sweep_report(args.sweep, out)
        res["best_ratio_by_seed"] = {str(k): v for k, v in res["best_ratio_by_seed"].items()}
        emit({"command": "report", "part": "sweep", **res})
    return EXIT_OK


def cmd_export_cycle(args) -> int:
    config = load_config(args)
    spec = config.cycle_spec(config.seeds[0])
    cycle = canonical_cycle(spec) if args.episode is None else build_learning_cycle(spec, args.episode)
    path = write_cycle(cycle, args.out)
    emit({"command": "export-cycle", "name": cycle.name, "samples": len(cycle), "duration_s": cycle.duration,
          "distance_m": cycle.distance_m, "path": str(path)})
    return EXIT_OK


def cmd_gen_maps(args) -> int:
    vehicle = VehicleConfig.load(args.vehicle) if args.vehicle else VehicleConfig()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "engine": write_map(default_fuel_map(vehicle.t_eng_max, vehicle.engine_speed_range[1]), out / "engine_fuel.csv",
                                provenance_lines("engine")),
            "mg1": write_map(default_motor_map(vehicle.t_mot1_max), out / "mg1_efficiency.csv",
                             provenance_lines("motor") + [f"T_max={vehicle.t_mot1_max!r} n_max=10000.0"]),
            "mg2": write_map(default_motor_map(vehicle.t_mot2_max), out / "mg2_efficiency.csv",
                             provenance_lines("motor") + [f"T_max={vehicle.t_mot2_max!r} n_max=10000.0"]),
        }
    except OSError as exc:
        raise ConfigurationError(f"cannot write maps to {out}: {exc}") from None
    for kind, path in paths.items():
        emit({"command": "gen-maps", "map": kind, "path": str(path)})
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phev-marl", description="Multi-mode PHEV energy management with DDPG agents.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p, seeds=False):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--mode", choices=["Single", "Multi"])
        p.add_argument("--r-ind", dest="r_ind", type=float)
        p.add_argument("--episodes", type=int)
        p.add_argument("--initial-soc", dest="initial_soc", type=float)
        p.add_argument("--seed", type=int, help="run a single seed")
        if seeds:
            p.add_argument("--seeds", type=int_list, help="comma-separated seeds")

    p = sub.add_parser("simulate", help="one deterministic rollout with a fixed policy")
    experiment_flags(p)
    p.add_argument("--cycle", help="speed trace CSV (default: the evaluation cycle)")
    p.add_argument("--policy", default="zero", help="'zero' or 'checkpoint:PATH'")
    p.add_argument("--trace", help="per-step trace CSV to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train agents for one configuration")
    experiment_flags(p, seeds=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="multi-agent training over independence ratios")
    experiment_flags(p, seeds=True)
    p.add_argument("--ratios", type=float_list)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="noise-free rollouts of trained checkpoints")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint directory; give one Single and one Multi to fill the saving column")
    p.add_argument("--cycle")
    p.add_argument("--socs", type=float_list)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="tables, curve CSVs and figures from existing outputs")
    p.add_argument("--metrics", help="metrics.csv written by evaluate")
    p.add_argument("--sweep", help="output directory of a sweep")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-cycle", help="write a realised learning or evaluation cycle")
    experiment_flags(p)
    p.add_argument("--episode", type=int, help="learning-cycle episode index (default: evaluation cycle)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_cycle)

    p = sub.add_parser("gen-maps", help="write the default synthetic engine and motor maps")
    p.add_argument("--vehicle", help="vehicle config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_maps)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CycleParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelValidationError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
