"""Experiment harness: multiplier profiles, sweeps and stability studies.

Each experiment runs a batch of seeded training runs (optionally across a
process pool), reduces them deterministically (results are keyed and
sorted, never ordered by completion), and can emit per-run CSVs plus one
aggregate CSV per experiment under `out/<experiment>/<task>/`.

Reported statistics follow the tail-average convention (mean over the last
5% of epochs by default). Smoothing is available for emitted curves only;
raw series are always what lands in per-run CSVs.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .multiplier import ControllerConfig, fixed_config
from .records import fmt, save_run_record, write_json
from .tasks import TaskSpec, task_by_name
from .trainer import RunRecord, TrainConfig

DEFAULT_TAIL_FRACTION = 0.05
DEFAULT_SMOOTH_ALPHA = 0.9
OSCILLATION_TAIL_FRACTION = 0.5  # lambda-std window for stability reports


# ---------------------------------------------------------------------------
# Metric primitives
# ---------------------------------------------------------------------------


def tail_average(series: Sequence[float], fraction: float) -> float:
    """Mean of the last ceil(fraction * len) entries."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("series must be non-empty")
    k = math.ceil(fraction * series.size)
    return float(series[-k:].mean())


def smooth(series: Sequence[float], alpha: float) -> np.ndarray:
    """EMA for emitted curves only: y0 = x0, yk = alpha*y(k-1) + (1-alpha)*xk."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    series = np.asarray(series, dtype=float)
    out = np.empty_like(series)
    if series.size == 0:
        return out
    out[0] = series[0]
    for k in range(1, series.size):
        out[k] = alpha * out[k - 1] + (1.0 - alpha) * series[k]
    return out


def violation_rate_after_first_satisfaction(
    costs: Sequence[float], limit: float
) -> Optional[float]:
    """Share of epochs above the limit after the first epoch at or below it.

    None when the limit is never reached, or is reached only at the final
    epoch (no subsequent epochs to rate).
    """
    costs = np.asarray(costs, dtype=float)
    below = np.nonzero(costs <= limit)[0]
    if len(below) == 0:
        return None
    k0 = int(below[0])
    after = costs[k0 + 1 :]
    if after.size == 0:
        return None
    return float((after > limit).sum() / after.size)


def best_return_under_constraint(
    returns: Sequence[float], costs: Sequence[float], limit: float
) -> Optional[tuple[int, float]]:
    """Best (epoch, return) among feasible epochs from the first satisfaction on."""
    returns = np.asarray(returns, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if returns.shape != costs.shape:
        raise ValueError("returns and costs must have equal length")
    below = np.nonzero(costs <= limit)[0]
    if len(below) == 0:
        return None
    eligible = below[below >= below[0]]
    k = int(eligible[np.argmax(returns[eligible])])
    return k, float(returns[k])


# ---------------------------------------------------------------------------
# Parallel run execution
# ---------------------------------------------------------------------------


def _run_one(args: tuple) -> tuple[tuple, RunRecord]:
    key, task_spec, config = args
    return key, _train_spec(task_spec, config)


def _train_spec(task_spec: TaskSpec, config: TrainConfig) -> RunRecord:
    from .trainer import exact_dual_run, sampled_run

    if config.mode == "exact_dual":
        return exact_dual_run(task_spec, config.controller, config.epochs, config=config)
    return sampled_run(task_spec, config)


def run_batch(
    jobs: list[tuple[tuple, TaskSpec, TrainConfig]], workers: int = 1
) -> dict[tuple, RunRecord]:
    """Execute (key, task, config) jobs, returning {key: record}, order-free."""
    results: dict[tuple, RunRecord] = {}
    if workers <= 1:
        for key, spec, cfg in jobs:
            results[key] = _train_spec(spec, cfg)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for key, record in pool.map(_run_one, jobs):
            results[key] = record
    return results


def _resolve(task) -> TaskSpec:
    return task_by_name(task) if isinstance(task, str) else task


# ---------------------------------------------------------------------------
# Lambda profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfilePoint:
    lambda_fixed: float
    return_tail: float
    cost_tail: float
    return_std: float
    cost_std: float
    n_seeds: int


@dataclass(frozen=True)
class LambdaProfile:
    task: str
    cost_limit: float
    points: tuple[ProfilePoint, ...]
    lambda_star_estimate: float
    lambda_star_status: str


def _first_downward_crossing(
    lambdas: np.ndarray, costs: np.ndarray, limit: float
) -> tuple[float, str]:
    if np.all(costs <= limit):
        return 0.0, "all_below"
    above = costs > limit
    for i in range(len(lambdas) - 1):
        if above[i] and not above[i + 1]:
            t = (costs[i] - limit) / (costs[i] - costs[i + 1])
            return float(lambdas[i] + t * (lambdas[i + 1] - lambdas[i])), "crossed"
    return float("nan"), "no_crossing"


def find_lambda_star(profile: LambdaProfile) -> tuple[float, str]:
    """Interpolated multiplier where the cost column first crosses the limit.

    Status is "crossed", "all_below" (constraint inactive, estimate 0), or
    "no_crossing" (cost never comes down through the limit, estimate NaN).
    """
    lams = np.array([p.lambda_fixed for p in profile.points])
    costs = np.array([p.cost_tail for p in profile.points])
    return _first_downward_crossing(lams, costs, profile.cost_limit)


def run_lambda_profile(
    task,
    lambda_grid: Sequence[float],
    seeds: Sequence[int],
    train_config: TrainConfig,
    workers: int = 1,
    tail_fraction: float = DEFAULT_TAIL_FRACTION,
    out_dir=None,
) -> LambdaProfile:
    """One fixed-multiplier run per (grid value, seed), tail-averaged.

    Diverged runs are dropped from their point's statistics; a point with
    no surviving run is dropped from the profile rather than aborting it.
    """
    grid = sorted(float(g) for g in lambda_grid)
    if len(grid) == 0 or len(set(grid)) != len(grid) or grid[0] < 0:
        raise ValueError("lambda grid must be non-empty, distinct and non-negative")
    spec = _resolve(task)
    jobs = []
    for lam in grid:
        for seed in seeds:
            cfg = replace(
                train_config, task=spec.name, controller=fixed_config(lam), seed=int(seed)
            )
            jobs.append(((lam, int(seed)), spec, cfg))
    records = run_batch(jobs, workers)
    if out_dir is not None:
        for (lam, seed), record in sorted(records.items()):
            save_run_record(record, Path(out_dir), f"lam{lam:g}_seed{seed}")

    points = []
    for lam in grid:
        rets, costs = [], []
        for seed in seeds:
            rec = records[(lam, int(seed))]
            if rec.diverged or len(rec.metrics) == 0:
                continue
            rets.append(tail_average(rec.series("return_mean"), tail_fraction))
            costs.append(tail_average(rec.series("cost_mean"), tail_fraction))
        if rets:
            points.append(
                ProfilePoint(
                    lambda_fixed=lam,
                    return_tail=float(np.mean(rets)),
                    cost_tail=float(np.mean(costs)),
                    return_std=float(np.std(rets)),
                    cost_std=float(np.std(costs)),
                    n_seeds=len(rets),
                )
            )
    limit = float(spec.model.cost_limits[0])
    lams = np.array([p.lambda_fixed for p in points])
    costs = np.array([p.cost_tail for p in points])
    est, status = _first_downward_crossing(lams, costs, limit)
    return LambdaProfile(
        task=spec.name,
        cost_limit=limit,
        points=tuple(points),
        lambda_star_estimate=est,
        lambda_star_status=status,
    )


# ---------------------------------------------------------------------------
# Cost-limit sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    cost_limit: float
    return_tail: float
    cost_tail: float
    return_std: float
    cost_std: float
    n_seeds: int


def run_cost_limit_sweep(
    task,
    limits: Sequence[float],
    controller_config: ControllerConfig,
    seeds: Sequence[int],
    train_config: TrainConfig,
    workers: int = 1,
    tail_fraction: float = DEFAULT_TAIL_FRACTION,
    out_dir=None,
) -> list[SweepPoint]:
    """One controller-updated run per (limit, seed); the return-cost frontier."""
    limits = [float(x) for x in limits]
    if len(limits) == 0 or min(limits) <= 0:
        raise ValueError("limits must be non-empty and positive")
    spec = _resolve(task)
    jobs = []
    for d in limits:
        model = replace(spec.model, cost_limits=np.array([d]))
        limited = replace(spec, model=model)
        for seed in seeds:
            cfg = replace(
                train_config, task=spec.name, controller=controller_config, seed=int(seed)
            )
            jobs.append(((d, int(seed)), limited, cfg))
    records = run_batch(jobs, workers)
    if out_dir is not None:
        for (d, seed), record in sorted(records.items()):
            save_run_record(record, Path(out_dir), f"limit{d:g}_seed{seed}")

    points = []
    for d in sorted(limits):
        rets, costs = [], []
        for seed in seeds:
            rec = records[(d, int(seed))]
            if rec.diverged or len(rec.metrics) == 0:
                continue
            rets.append(tail_average(rec.series("return_mean"), tail_fraction))
            costs.append(tail_average(rec.series("cost_mean"), tail_fraction))
        if rets:
            points.append(
                SweepPoint(
                    cost_limit=d,
                    return_tail=float(np.mean(rets)),
                    cost_tail=float(np.mean(costs)),
                    return_std=float(np.std(rets)),
                    cost_std=float(np.std(costs)),
                    n_seeds=len(rets),
                )
            )
    return points


# ---------------------------------------------------------------------------
# GA-versus-PID stability comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodStability:
    method: str
    best_return: Optional[float]
    best_return_epoch: Optional[float]
    violation_rate: Optional[float]
    lambda_std: float
    n_seeds: int
    n_seeds_with_metrics: int


@dataclass(frozen=True)
class StabilityReport:
    task: str
    cost_limit: float
    ga: MethodStability
    pid: MethodStability


def _stability_of(
    method: str, records: list[RunRecord], limit: float
) -> MethodStability:
    best_returns, best_epochs, rates, lam_stds = [], [], [], []
    for rec in records:
        returns = rec.series("return_mean")
        costs = rec.series("cost_mean")
        lam = rec.series("lam")
        half = len(lam) // 2
        lam_stds.append(float(np.std(lam[half:])))
        best = best_return_under_constraint(returns, costs, limit)
        rate = violation_rate_after_first_satisfaction(costs, limit)
        if best is not None:
            best_epochs.append(best[0])
            best_returns.append(best[1])
        if rate is not None:
            rates.append(rate)
    return MethodStability(
        method=method,
        best_return=float(np.mean(best_returns)) if best_returns else None,
        best_return_epoch=float(np.mean(best_epochs)) if best_epochs else None,
        violation_rate=float(np.mean(rates)) if rates else None,
        lambda_std=float(np.mean(lam_stds)),
        n_seeds=len(records),
        n_seeds_with_metrics=len(best_returns),
    )


def run_stability_compare(
    task,
    ga_controller: ControllerConfig,
    pid_controller: ControllerConfig,
    seeds: Sequence[int],
    epochs: int,
    train_config: TrainConfig,
    workers: int = 1,
    out_dir=None,
) -> StabilityReport:
    """Long GA and PID runs side by side, reduced to stability metrics.

    Per method: mean best feasible return after the limit is first reached,
    mean post-satisfaction violation rate (absent if never reached), and
    the multiplier's standard deviation over the last half of training.
    """
    spec = _resolve(task)
    jobs = []
    for method, controller in (("ga", ga_controller), ("pid", pid_controller)):
        for seed in seeds:
            cfg = replace(
                train_config,
                task=spec.name,
                controller=controller,
                seed=int(seed),
                epochs=epochs,
            )
            jobs.append(((method, int(seed)), spec, cfg))
    records = run_batch(jobs, workers)
    if out_dir is not None:
        for (method, seed), record in sorted(records.items()):
            save_run_record(record, Path(out_dir), f"{method}_seed{seed}")
    limit = float(spec.model.cost_limits[0])
    ga_records = [records[("ga", int(s))] for s in seeds]
    pid_records = [records[("pid", int(s))] for s in seeds]
    return StabilityReport(
        task=spec.name,
        cost_limit=limit,
        ga=_stability_of("ga", ga_records, limit),
        pid=_stability_of("pid", pid_records, limit),
    )


# ---------------------------------------------------------------------------
# Aggregate CSV emission
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header: Sequence[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else fmt(v) for v in row])


def write_profile_csv(profile: LambdaProfile, path) -> Path:
    path = Path(path)
    rows = [
        [p.lambda_fixed, p.return_tail, p.cost_tail, p.return_std, p.cost_std, p.n_seeds]
        for p in profile.points
    ]
    _write_csv(
        path,
        ("lambda", "return_tail", "cost_tail", "return_std", "cost_std", "n_seeds"),
        rows,
    )
    return path


def write_sweep_csv(points: list[SweepPoint], path) -> Path:
    path = Path(path)
    rows = [
        [p.cost_limit, p.return_tail, p.cost_tail, p.return_std, p.cost_std, p.n_seeds]
        for p in points
    ]
    _write_csv(
        path,
        ("cost_limit", "return_tail", "cost_tail", "return_std", "cost_std", "n_seeds"),
        rows,
    )
    return path


def write_compare_csv(report: StabilityReport, path) -> Path:
    path = Path(path)
    rows = []
    for m in (report.ga, report.pid):
        rows.append(
            [
                m.method,
                m.best_return,
                m.best_return_epoch,
                m.violation_rate,
                m.lambda_std,
                m.n_seeds,
                m.n_seeds_with_metrics,
            ]
        )
    _write_csv(
        path,
        (
            "method",
            "best_return",
            "best_return_epoch",
            "violation_rate",
            "lambda_std",
            "n_seeds",
            "n_seeds_with_metrics",
        ),
        rows,
    )
    return path


def write_experiment_manifest(command: str, config: dict, out_dir, outputs: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    write_json(
        {
            "schema": "cmdplab-experiment-v1",
            "command": command,
            "config": config,
            "outputs": outputs,
        },
        path,
    )
    return path
