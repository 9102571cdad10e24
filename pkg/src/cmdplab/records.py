"""Run-record persistence: per-run CSV series plus a JSON manifest.

CSV columns are fixed (epoch, steps, return_mean, cost_mean, lambda, xi,
kl) and floats are written with repr, the shortest round-trip form, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import __version__ as _version
from .trainer import EpochMetrics, RunRecord, TrainConfig

RUN_CSV_COLUMNS = ("epoch", "steps", "return_mean", "cost_mean", "lambda", "xi", "kl")
RUN_MANIFEST_SCHEMA = "cmdplab-run-v1"


def fmt(value) -> str:
    """Canonical text form: repr for floats, str for ints."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_run_csv(record: RunRecord, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_CSV_COLUMNS)
        for m in record.metrics:
            writer.writerow(
                [
                    fmt(m.epoch),
                    fmt(m.steps),
                    fmt(m.return_mean),
                    fmt(m.cost_mean),
                    fmt(m.lam),
                    fmt(m.xi),
                    fmt(m.kl),
                ]
            )


def read_run_csv(path: Path) -> list[EpochMetrics]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [
            EpochMetrics(
                epoch=int(r["epoch"]),
                steps=int(r["steps"]),
                return_mean=float(r["return_mean"]),
                cost_mean=float(r["cost_mean"]),
                lam=float(r["lambda"]),
                xi=float(r["xi"]),
                kl=float(r["kl"]),
                inner_iters_used=0,
            )
            for r in reader
        ]
    return rows


def run_manifest(record: RunRecord) -> dict:
    return {
        "schema": RUN_MANIFEST_SCHEMA,
        "config": record.config.to_dict(),
        "task": record.config.task,
        "seed": record.config.seed,
        "code_version": _version,
        "epochs_completed": len(record.metrics),
        "diverged": record.diverged,
        "wall_time": record.wall_time,
    }


def write_json(data: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_run_record(record: RunRecord, directory, name: str) -> tuple[Path, Path]:
    """Persist one run as <name>.csv plus <name>.manifest.json."""
    directory = Path(directory)
    csv_path = directory / f"{name}.csv"
    manifest_path = directory / f"{name}.manifest.json"
    write_run_csv(record, csv_path)
    write_json(run_manifest(record), manifest_path)
    return csv_path, manifest_path


def load_train_config(path) -> TrainConfig:
    """Read a TrainConfig from a config file or a run manifest."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict) and data.get("schema") == RUN_MANIFEST_SCHEMA:
        data = data["config"]
    return TrainConfig.from_dict(data)
