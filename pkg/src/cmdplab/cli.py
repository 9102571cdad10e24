"""Operator command line: train, profile, sweep, compare, oracle, tasks.

Every experiment command resolves its configuration as defaults <- JSON
config file <- command-line flags, rejects unknown keys, and echoes the
fully resolved document into `manifest.json` next to its outputs. Re-running
a command from its manifest reproduces the aggregate CSVs byte for byte.

Exit codes: 0 success, 2 config error, 3 divergence abort, 4 infeasible
model. The default output root is `./out`, overridable with CMDPLAB_OUT.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .multiplier import ControllerConfig, ga_config, pid_config
from .oracle import InfeasibleModelError, lambda_star_with_interval, solve_lp
from .records import save_run_record, write_json
from .tasks import model_to_json, registry, task_by_name
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4

DEFAULT_GRID = (0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0)
DEFAULT_LIMIT_SCALES = (0.5, 0.75, 1.0, 1.5, 2.0, 4.0)


class ConfigError(ValueError):
    pass


def _out_root() -> Path:
    return Path(os.environ.get("CMDPLAB_OUT", "out"))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"malformed JSON in {path} at line {err.lineno}, column {err.colno}: {err.msg}"
        ) from err
    if isinstance(data, dict) and data.get("schema") in (
        "cmdplab-experiment-v1",
        "cmdplab-run-v1",
    ):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _merge(defaults: dict, file_cfg: dict, overrides: dict, where: str) -> dict:
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _train_config(doc: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad train config: {err}") from err


def _controller(doc: dict) -> ControllerConfig:
    try:
        return ControllerConfig.from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad controller config: {err}") from err


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"bad numeric list {text!r}: {err}") from err


def _seed_list(n_seeds: int) -> list[int]:
    return list(range(n_seeds))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_tasks(args) -> int:
    specs = registry()
    if args.export:
        spec = task_by_name(args.export)
        doc = model_to_json(spec.model, name=spec.name)
        if args.out:
            write_json(doc, Path(args.out))
            print(f"wrote {args.out}")
        else:
            print(json.dumps(doc))
        return EXIT_OK
    for spec in specs:
        m = spec.model
        print(
            f"{spec.name:20s} rank={spec.difficulty_rank} states={m.n_states:3d} "
            f"actions={m.n_actions} gamma={m.gamma} d={m.cost_limits[0]:.4g}  {spec.description}"
        )
    return EXIT_OK


def cmd_oracle(args) -> int:
    spec = task_by_name(args.task)
    try:
        sol = solve_lp(spec.model)
    except InfeasibleModelError as err:
        print(json.dumps({"task": args.task, "infeasible": True, "detail": str(err)}))
        return EXIT_INFEASIBLE
    doc = {"task": spec.name, "cost_limits": spec.model.cost_limits.tolist()}
    doc.update(sol.to_dict())
    if args.check_degeneracy and spec.model.n_constraints == 1:
        doc["lambda_star_check"] = lambda_star_with_interval(spec.model)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


_TRAIN_DEFAULTS = TrainConfig().to_dict()


def cmd_train(args) -> int:
    overrides = {
        "task": args.task,
        "mode": "exact_dual" if args.mode == "exact" else args.mode,
        "epochs": args.epochs,
        "seed": args.seed,
        "steps_per_epoch": args.steps_per_epoch,
        "constraint_signal": args.constraint_signal,
    }
    doc = _merge(_TRAIN_DEFAULTS, _load_config_file(args.config), overrides, "train")
    if args.controller is not None:
        base = {"ga": ga_config(), "pid": pid_config()}.get(args.controller)
        if base is not None:
            doc["controller"] = base.to_dict()
        else:
            doc["controller"] = {"kind": "fixed", "fixed_lambda": args.fixed_lambda or 0.0}
    if args.fixed_lambda is not None and doc["controller"].get("kind") == "fixed":
        doc["controller"]["fixed_lambda"] = args.fixed_lambda
    config = _train_config(doc)
    task_by_name(config.task)  # fail fast on unknown tasks
    record = train(config)
    out_dir = Path(args.out) if args.out else _out_root() / "train" / config.task
    name = f"run_seed{config.seed}"
    csv_path, manifest_path = save_run_record(record, out_dir, name)
    print(f"wrote {csv_path} and {manifest_path}")
    if record.diverged:
        print("run aborted: divergence guard tripped", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


_PROFILE_DEFAULTS = {
    "task": "chain-speed",
    "grid": list(DEFAULT_GRID),
    "seeds": _seed_list(10),
    "tail_fraction": harness.DEFAULT_TAIL_FRACTION,
    "workers": 1,
    "train": _TRAIN_DEFAULTS,
}


def cmd_profile(args) -> int:
    overrides = {
        "task": args.task,
        "grid": _floats(args.grid) if args.grid else None,
        "seeds": _seed_list(args.seeds) if args.seeds is not None else None,
        "workers": args.workers,
    }
    doc = _merge(_PROFILE_DEFAULTS, _load_config_file(args.config), overrides, "profile")
    doc["train"] = _apply_train_flags(doc["train"], args)
    if 0.0 not in [float(g) for g in doc["grid"]]:
        raise ConfigError("lambda grid must include 0 (the unconstrained baseline)")
    config = _train_config(doc["train"])
    out_dir = Path(args.out) if args.out else _out_root() / "profile" / doc["task"]
    profile = harness.run_lambda_profile(
        doc["task"],
        doc["grid"],
        doc["seeds"],
        config,
        workers=int(doc["workers"]),
        tail_fraction=float(doc["tail_fraction"]),
        out_dir=out_dir if args.keep_runs else None,
    )
    agg = harness.write_profile_csv(profile, out_dir / "profile.csv")
    harness.write_experiment_manifest(
        "profile",
        doc,
        out_dir,
        {
            "aggregate": "profile.csv",
            "lambda_star_estimate": profile.lambda_star_estimate,
            "lambda_star_status": profile.lambda_star_status,
        },
    )
    print(f"wrote {agg} ({len(profile.points)} points); "
          f"lambda* estimate {profile.lambda_star_estimate:.6g} [{profile.lambda_star_status}]")
    return EXIT_OK


_SWEEP_DEFAULTS = {
    "task": "chain-speed",
    "limits": [],
    "limit_scales": list(DEFAULT_LIMIT_SCALES),
    "seeds": _seed_list(10),
    "controller": ga_config().to_dict(),
    "tail_fraction": harness.DEFAULT_TAIL_FRACTION,
    "workers": 1,
    "train": _TRAIN_DEFAULTS,
}


def cmd_sweep(args) -> int:
    overrides = {
        "task": args.task,
        "limits": _floats(args.limits) if args.limits else None,
        "seeds": _seed_list(args.seeds) if args.seeds is not None else None,
        "workers": args.workers,
    }
    doc = _merge(_SWEEP_DEFAULTS, _load_config_file(args.config), overrides, "sweep")
    doc["train"] = _apply_train_flags(doc["train"], args)
    spec = task_by_name(doc["task"])
    if not doc["limits"]:
        base = float(spec.model.cost_limits[0])
        doc["limits"] = [round(base * s, 12) for s in doc["limit_scales"]]
    config = _train_config(doc["train"])
    out_dir = Path(args.out) if args.out else _out_root() / "sweep" / doc["task"]
    points = harness.run_cost_limit_sweep(
        doc["task"],
        doc["limits"],
        _controller(doc["controller"]),
        doc["seeds"],
        config,
        workers=int(doc["workers"]),
        tail_fraction=float(doc["tail_fraction"]),
        out_dir=out_dir if args.keep_runs else None,
    )
    agg = harness.write_sweep_csv(points, out_dir / "sweep.csv")
    harness.write_experiment_manifest("sweep", doc, out_dir, {"aggregate": "sweep.csv"})
    print(f"wrote {agg} ({len(points)} limits)")
    return EXIT_OK


_COMPARE_DEFAULTS = {
    "task": "chain-speed",
    "seeds": _seed_list(6),
    "epochs": 600,
    "ga": ga_config().to_dict(),
    "pid": pid_config().to_dict(),
    "workers": 1,
    "train": _TRAIN_DEFAULTS,
}


def cmd_compare(args) -> int:
    overrides = {
        "task": args.task,
        "seeds": _seed_list(args.seeds) if args.seeds is not None else None,
        "epochs": args.epochs,
        "workers": args.workers,
    }
    doc = _merge(_COMPARE_DEFAULTS, _load_config_file(args.config), overrides, "compare")
    doc["train"] = _apply_train_flags(doc["train"], args)
    config = _train_config(doc["train"])
    out_dir = Path(args.out) if args.out else _out_root() / "compare" / doc["task"]
    report = harness.run_stability_compare(
        doc["task"],
        _controller(doc["ga"]),
        _controller(doc["pid"]),
        doc["seeds"],
        int(doc["epochs"]),
        config,
        workers=int(doc["workers"]),
        out_dir=out_dir if args.keep_runs else None,
    )
    agg = harness.write_compare_csv(report, out_dir / "compare.csv")
    harness.write_experiment_manifest("compare", doc, out_dir, {"aggregate": "compare.csv"})
    for m in (report.ga, report.pid):
        best = "--" if m.best_return is None else f"{m.best_return:.4g}"
        rate = "--" if m.violation_rate is None else f"{100 * m.violation_rate:.1f}%"
        print(
            f"{m.method:4s} best_return={best} violations={rate} "
            f"lambda_std={m.lambda_std:.4g} ({m.n_seeds_with_metrics}/{m.n_seeds} seeds)"
        )
    print(f"wrote {agg}")
    return EXIT_OK


def _apply_train_flags(train_doc: dict, args) -> dict:
    doc = dict(train_doc)
    for key in ("mode", "epochs", "steps_per_epoch", "constraint_signal"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if doc.get("mode") == "exact":
        doc["mode"] = "exact_dual"
    return doc


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["exact", "exact_dual", "sampled"], default=None,
                   help="trainer mode; 'exact' is an alias for exact_dual "
                        "(default: from config, sampled)")
    p.add_argument("--epochs", type=int, default=None, help="epochs per run (default: from config)")
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int, default=None,
                   help="sampled transitions per epoch (default: from config)")
    p.add_argument("--constraint-signal", dest="constraint_signal",
                   choices=["discounted", "episodic_mean"], default=None,
                   help="cost statistic fed to the controller (default: from config)")


def _add_common(p: argparse.ArgumentParser, seeds_default: int) -> None:
    p.add_argument("--config", default=None, help="JSON config file or experiment manifest (default: none)")
    p.add_argument("--out", default=None, help="output directory (default: $CMDPLAB_OUT/<command>/<task>)")
    p.add_argument("--seeds", type=int, default=None,
                   help=f"number of seeds 0..n-1 (default: {seeds_default})")
    p.add_argument("--workers", type=int, default=None, help="parallel run workers (default: 1)")
    p.add_argument("--keep-runs", action="store_true", help="also write per-run CSVs (default: off)")
    _add_train_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdplab",
        description="Constrained-MDP laboratory for Lagrange multiplier dynamics.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tasks", help="list builtin tasks or export one as JSON",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--export", default=None, help="task name to export as model JSON")
    p.add_argument("--out", default=None, help="file for exported JSON (default: stdout)")
    p.set_defaults(func=cmd_tasks)

    p = sub.add_parser("oracle", help="print the exact LP solution for a task",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--task", required=True, help="builtin task name")
    p.add_argument("--check-degeneracy", action="store_true",
                   help="cross-check LP multiplier against dual bisection")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", help="run one training job",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--config", default=None, help="TrainConfig JSON or run manifest (default: none)")
    p.add_argument("--task", default=None, help="builtin task name (default: chain-speed)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: 0)")
    p.add_argument("--controller", choices=["ga", "pid", "fixed"], default=None,
                   help="controller preset (default: from config, ga)")
    p.add_argument("--fixed-lambda", dest="fixed_lambda", type=float, default=None,
                   help="multiplier for the fixed controller (default: 0)")
    p.add_argument("--out", default=None, help="output directory (default: $CMDPLAB_OUT/train/<task>)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="fixed-multiplier profile over a grid",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--task", default=None, help="builtin task name (default: chain-speed)")
    p.add_argument("--grid", default=None, help="comma-separated multiplier grid, must include 0")
    _add_common(p, seeds_default=10)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="cost-limit sweep with an updated multiplier",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--task", default=None, help="builtin task name (default: chain-speed)")
    p.add_argument("--limits", default=None,
                   help="comma-separated cost limits (default: scaled off the task limit)")
    _add_common(p, seeds_default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="GA versus PID stability comparison",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--task", default=None, help="builtin task name (default: chain-speed)")
    _add_common(p, seeds_default=6)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleModelError as err:
        print(f"infeasible model: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except KeyError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
