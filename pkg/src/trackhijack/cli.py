"""Command-line entry point.

Subcommands: validate (check a scenario file), gen (write a synthetic
scenario), attack (run one hijack or erase attack and dump its trace),
sweep (run the experiment grid), analyze (derived figures such as the
per-frame AE reliability an erasure attack needs).

Every attack/sweep run writes a manifest.json with all resolved settings
before any results; feeding that manifest back via --config reproduces the
outputs byte for byte. Flags override config-file values; the merged
result is what lands in the manifest.

Exit codes: 0 success, 2 validation/config error, 3 infeasible attack,
4 attack failed (budget exhausted or erase probe failed), 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackSpec,
    BudgetExhausted,
    Infeasible,
    erase_attack,
    hijack,
    resolve_target,
)
from .estimation import NoiseConfig
from .experiments import (
    PRESETS,
    ConfigError,
    erase_reliability_requirement,
    run_sweep,
    sweep_config_from_json,
)
from .geometry import Vec2
from .scenarios import (
    ParseError,
    ValidationError,
    gen_move_in,
    gen_move_out,
    load_scenario,
    save_scenario,
)
from .tracking import TrackerConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_FAILED = 4

GENERATORS = {"move-in": gen_move_in, "move-out": gen_move_out}

ATTACK_DEFAULTS = {
    "scenario": None,
    "gen": None,
    "gen_seed": 0,
    "noise_sigma": 0.5,
    "gen_frames": 100,
    "kind": "hijack",
    "frames": 10,
    "cov": 0.1,
    "process_noise": 1.0,
    "r_frames": 60,
    "h_frames": 6,
    "iou_gate": 0.3,
    "gamma": 0.1,
    "direction": None,
    "start_frame": None,
    "ae_success_prob": 1.0,
    "seed": 0,
}


def default_out_dir(subcommand: str) -> Path:
    root = os.environ.get("TRACKHIJACK_OUT", "runs")
    return Path(root) / subcommand


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")


def _write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / "manifest.json",
        {
            "tool": "trackhijack",
            "version": __version__,
            "subcommand": subcommand,
            "config": config,
            "inputs": sorted(str(p) for p in inputs),
        },
    )


def _load_config_file(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(payload, dict) and "config" in payload and "subcommand" in payload:
        payload = payload["config"]
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return payload


# --- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.path)
    except (ParseError, ValidationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(
        f"ok: {scenario.name}: {len(scenario.frames)} frames, "
        f"target {scenario.target_label!r}, fps {scenario.fps:g}"
    )
    return EXIT_OK


def cmd_gen(args) -> int:
    generator = GENERATORS[args.kind]
    scenario = generator(
        seed=args.seed,
        noise_sigma=args.noise_sigma,
        n_frames=args.frames,
        name=f"{args.kind.replace('-', '_')}_seed{args.seed}",
    )
    out = Path(args.out) if args.out else default_out_dir("gen") / f"{scenario.name}.scn"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out)
    print(f"wrote {out} ({len(scenario.frames)} frames)")
    return EXIT_OK


def _resolve_attack_config(args) -> dict:
    config = dict(ATTACK_DEFAULTS)
    if args.config:
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(ATTACK_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown attack config fields: {sorted(unknown)}")
        config.update(file_cfg)
    overrides = {
        "scenario": args.scenario,
        "gen": args.gen,
        "gen_seed": args.gen_seed,
        "gen_frames": args.gen_frames,
        "noise_sigma": args.noise_sigma,
        "kind": args.kind,
        "frames": args.frames,
        "cov": args.cov,
        "process_noise": args.process_noise,
        "r_frames": args.reserved_age,
        "h_frames": args.hit_count,
        "iou_gate": args.gate,
        "gamma": args.gamma,
        "direction": list(args.direction) if args.direction else None,
        "start_frame": args.start_frame,
        "ae_success_prob": args.ae_success_prob,
        "seed": args.seed,
    }
    config.update({k: v for k, v in overrides.items() if v is not None})
    if bool(config["scenario"]) == bool(config["gen"]):
        raise ConfigError("exactly one of --scenario and --gen is required")
    if config["gen"] is not None and config["gen"] not in GENERATORS:
        raise ConfigError(f"gen: expected one of {sorted(GENERATORS)}")
    if config["kind"] not in ("hijack", "erase"):
        raise ConfigError("kind: expected 'hijack' or 'erase'")
    return config


def cmd_attack(args) -> int:
    config = _resolve_attack_config(args)
    out_dir = Path(args.out) if args.out else default_out_dir("attack")
    inputs = [config["scenario"]] if config["scenario"] else []
    _write_manifest(out_dir, "attack", config, inputs)

    if config["scenario"]:
        scenario = load_scenario(config["scenario"])
    else:
        scenario = GENERATORS[config["gen"]](
            seed=config["gen_seed"],
            noise_sigma=config["noise_sigma"],
            n_frames=config["gen_frames"],
            name=f"{config['gen'].replace('-', '_')}_seed{config['gen_seed']}",
        )

    tracker = TrackerConfig(
        r_frames=config["r_frames"],
        h_frames=config["h_frames"],
        iou_gate=config["iou_gate"],
        noise=NoiseConfig(cov=config["cov"], q=config["process_noise"]),
        fps=scenario.fps,
    )
    start = config["start_frame"]
    target = resolve_target(scenario, tracker, start)

    direction = (
        Vec2(*config["direction"]) if config["direction"] else scenario.direction
    )
    if direction is None:
        raise ConfigError("no attack direction: pass --direction or use a generator")

    log: list = []
    failure = None
    if config["kind"] == "hijack":
        spec = AttackSpec(
            target=target,
            direction=direction,
            patch=scenario.patch,
            gamma=config["gamma"],
            max_frames=config["frames"],
        )
        try:
            result = hijack(
                scenario,
                tracker,
                spec,
                start_frame=start,
                ae_success_prob=config["ae_success_prob"],
                rng=np.random.default_rng(config["seed"]),
                log_sink=log,
            )
        except BudgetExhausted as exc:
            failure = exc
            result = None
    else:
        result = erase_attack(
            scenario, tracker, target, config["frames"], start_frame=start, log_sink=log
        )

    with open(out_dir / "frames.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    if failure is not None:
        _write_json(
            out_dir / "result.json",
            {
                "kind": config["kind"],
                "success": False,
                "frames_attacked": failure.frames_attacked,
                "hijacked_track_id": None,
                "start_frame": start if start is not None else tracker.h_frames + 3,
                "trace": None,
            },
        )
        print(f"attack failed: {failure}")
        return EXIT_FAILED

    trace = None
    if result.trace is not None:
        trace = {
            "ghost_frames": result.trace.ghost_frames,
            "reconfirm_frames": result.trace.reconfirm_frames,
        }
    _write_json(
        out_dir / "result.json",
        {
            "kind": config["kind"],
            "success": result.success,
            "frames_attacked": result.frames_attacked,
            "hijacked_track_id": result.hijacked_track_id,
            "start_frame": result.start_frame,
            "trace": trace,
        },
    )
    if not result.success:
        print(
            f"attack failed: track {target} recaptured its detection after "
            f"{result.frames_attacked} erased frames"
        )
        return EXIT_FAILED
    summary = (
        f"{config['kind']} succeeded: track {result.hijacked_track_id} lost its "
        f"object after {result.frames_attacked} attacked frames"
    )
    if trace and trace["ghost_frames"] is not None:
        summary += f"; ghost persisted {trace['ghost_frames']} frames"
    if trace and trace["reconfirm_frames"] is not None:
        summary += f"; target reconfirmed after {trace['reconfirm_frames']} frames"
    print(summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("exactly one of --config and --preset is required")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"preset: expected one of {sorted(PRESETS)}")
        sweep_cfg = PRESETS[args.preset]()
    else:
        sweep_cfg = sweep_config_from_json(Path(args.config).read_text("utf-8"))
    out_dir = Path(args.out) if args.out else default_out_dir("sweep")
    # Inputs derive from the resolved config so a rerun from the manifest
    # produces an identical manifest.
    inputs = (
        [] if sweep_cfg.scenario_set.startswith("bundled") else [sweep_cfg.scenario_set]
    )
    _write_manifest(out_dir, "sweep", json.loads(sweep_cfg.to_json()), inputs)
    table = run_sweep(sweep_cfg, out_dir=out_dir, workers=args.workers, resume=args.resume)
    print(f"wrote {out_dir / 'table.csv'} ({len(table.rows)} rows)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    r = args.reserved_age
    req = erase_reliability_requirement(r)
    print(f"reserved_age {r}")
    print(f"erase_frames_required {r}")
    print(f"required_per_frame_ae_reliability {req!r}  ({r - 1}/{r})")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackhijack",
        description="Tracking-by-detection MOT engine and tracker-hijacking attack simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="write a synthetic scenario file")
    p.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--out", help="output file path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("attack", help="run one attack and dump its trace")
    p.add_argument("--scenario", help="scenario file to attack")
    p.add_argument("--gen", choices=sorted(GENERATORS), help="generate the scenario")
    p.add_argument("--gen-seed", type=int, default=None)
    p.add_argument("--gen-frames", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--kind", choices=["hijack", "erase"], default=None)
    p.add_argument("--frames", type=int, default=None,
                   help="attack budget (hijack) or erasure window (erase)")
    p.add_argument("--cov", type=float, default=None, help="measurement noise scale")
    p.add_argument("--process-noise", type=float, default=None)
    p.add_argument("--reserved-age", "--R", type=int, default=None, dest="reserved_age")
    p.add_argument("--hit-count", "--H", type=int, default=None, dest="hit_count")
    p.add_argument("--gate", type=float, default=None, help="association IoU gate")
    p.add_argument("--gamma", type=float, default=None, help="min fabricated-box/patch IoU")
    p.add_argument("--direction", type=float, nargs=2, default=None,
                   metavar=("DX", "DY"))
    p.add_argument("--start-frame", type=int, default=None)
    p.add_argument("--ae-success-prob", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON config or a previous run's manifest.json")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run an experiment grid")
    p.add_argument("--config", help="sweep config JSON (or a sweep manifest.json)")
    p.add_argument("--preset", help=f"built-in config: {', '.join(sorted(PRESETS))}")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="derived attack-economics figures")
    p.add_argument("--reserved-age", type=int, default=60)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Infeasible as exc:
        print(f"infeasible attack: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
