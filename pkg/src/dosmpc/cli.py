"""Command-line interface.

Subcommands: collect (offline data), attack-check (validate or generate DoS
schedules), run (single closed-loop experiment), sweep (one-axis grid),
compare (data-driven vs model-based on shared randomness). All outputs are
CSV/JSON in the chosen output directory; the exit code is nonzero on
validation failure or divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dos
from .data import collect_offline
from .errors import ConfigError
from .experiment import ExperimentConfig, compare, prepare, run_experiment, sweep


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    overrides = {}
    for name in ("model", "t_sim", "v_bar", "horizon", "n_samples", "u_max",
                 "controller", "data_seed", "noise_seed", "attack_seed",
                 "lambda_g", "lambda_h"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "ratio", None) is not None:
        overrides["attack"] = dos.params_for_ratio(args.ratio)
    if getattr(args, "no_attack", False):
        overrides["attack"] = None
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    return config


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--model", help='"batch-reactor" or model JSON path')
    p.add_argument("--t-sim", dest="t_sim", type=int)
    p.add_argument("--v-bar", dest="v_bar", type=float)
    p.add_argument("--horizon", type=int, help="prediction horizon L")
    p.add_argument("--n-samples", dest="n_samples", type=int, help="offline record length N")
    p.add_argument("--u-max", dest="u_max", type=float)
    p.add_argument("--lambda-g", dest="lambda_g", type=float)
    p.add_argument("--lambda-h", dest="lambda_h", type=float)
    p.add_argument("--controller", choices=["data-driven", "data-driven-periodic",
                                            "model-based"])
    p.add_argument("--ratio", type=float, help="attack pressure 1/nu_f + 1/nu_d")
    p.add_argument("--no-attack", action="store_true")
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--noise-seed", dest="noise_seed", type=int)
    p.add_argument("--attack-seed", dest="attack_seed", type=int)
    p.add_argument("--out", help="output directory")


def _cmd_collect(args) -> int:
    config = _load_config(args)
    prepared = prepare(config)
    traj = collect_offline(prepared.model, config.n_samples, prepared.pe_order,
                           amplitude=config.amplitude(),
                           noise_bound=config.v_bar, seed=config.data_seed)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    traj.save_csv(out / "offline_data.csv")
    print(f"collected N={len(traj)} samples, certified excitation order "
          f"{traj.pe.order} (margin {traj.pe.sigma_min:.3g})")
    return 0


def _cmd_attack_check(args) -> int:
    if args.schedule:
        schedule = dos.load_schedule(args.schedule)
        report = dos.validate_schedule(schedule.indicators, schedule.params)
        print(json.dumps({
            "passed": report.passed,
            "worst_interval": [report.worst_t1, report.worst_t2],
            "worst_kind": report.worst_kind,
            "worst_excess": report.worst_excess,
            "attack_fraction": schedule.attack_fraction,
        }, indent=2))
        return 0 if report.passed else 1
    params = dos.params_for_ratio(args.ratio) if args.ratio is not None else \
        dos.AttackParams(kappa_f=args.kappa_f, nu_f=args.nu_f,
                         kappa_d=args.kappa_d, nu_d=args.nu_d)
    if args.worst_case:
        schedule = dos.generate_worst_case(params, args.t_sim)
    else:
        schedule = dos.generate_random(params, args.t_sim, args.seed)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    dos.save_schedule(schedule, out / "schedule.txt")
    print(f"generated T={args.t_sim} schedule, attack fraction "
          f"{schedule.attack_fraction:.4f}, max gap "
          f"{dos.max_success_gap(schedule.indicators)}")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    if config.output_dir is None:
        from dataclasses import replace
        config = replace(config, output_dir="out")
    record = run_experiment(config)
    print(json.dumps({k: v for k, v in record.summary.items() if k != "seeds"},
                     indent=2, default=str))
    return 0 if record.summary["status"] == "ok" else 2


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    values = [float(v) for v in args.values.split(",")]
    if args.axis in ("N", "L"):
        values = [int(v) for v in values]
    rows = sweep(config, args.axis, values, repetitions=args.repetitions,
                 output_dir=args.out or "out")
    bad = [r for r in rows if r["status"] != "ok"]
    for row in rows:
        print(f"{args.axis}={row['value']} rep={row['repetition']} "
              f"status={row['status']} tail={row['tail_norm']:.6g}")
    return 0 if not bad else 2


def _cmd_compare(args) -> int:
    config = _load_config(args)
    if config.output_dir is None:
        from dataclasses import replace
        config = replace(config, output_dir="out")
    result = compare(config)
    print(json.dumps(result["delta"], indent=2))
    ok = (result["data_driven"].summary["status"] == "ok"
          and result["model_based"].summary["status"] == "ok")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dosmpc",
        description="Data-driven resilient MPC simulator for LTI plants under DoS attacks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect certified offline data")
    _add_common(p)
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("attack-check", help="validate or generate DoS schedules")
    p.add_argument("--schedule", help="existing schedule file to validate")
    p.add_argument("--ratio", type=float)
    p.add_argument("--kappa-f", dest="kappa_f", type=float, default=1.0)
    p.add_argument("--nu-f", dest="nu_f", type=float, default=4.0)
    p.add_argument("--kappa-d", dest="kappa_d", type=float, default=1.0)
    p.add_argument("--nu-d", dest="nu_d", type=float, default=2.0)
    p.add_argument("--t-sim", dest="t_sim", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--worst-case", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_attack_check)

    p = sub.add_parser("run", help="run one closed-loop experiment")
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="grid of runs along one axis")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=["N", "L", "ratio", "v_bar"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repetitions", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="data-driven vs model-based, shared seeds")
    _add_common(p)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
