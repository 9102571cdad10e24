"""
Return-cost frontier traced by sweeping the cost limit.

Each point trains a GA-updated agent against a different budget. Looser
budgets buy return until the constraint stops binding, after which the
curve flattens at the unconstrained optimum; the LP frontier per limit is
printed alongside as ground truth.
"""
import numpy as np
from dataclasses import replace

from cmdplab import ga_config, solve_lp, task_by_name
from cmdplab.harness import run_cost_limit_sweep
from cmdplab.trainer import TrainConfig

task = "chain-speed"
spec = task_by_name(task)
base_limit = float(spec.model.cost_limits[0])
limits = [0.25 * base_limit, 0.5 * base_limit, base_limit, 1.5 * base_limit, 2.6 * base_limit]

config = TrainConfig(mode="sampled", epochs=300, steps_per_epoch=4000,
                     inner_iters=10, batch_size=512, learning_rate=0.3,
                     constraint_signal="discounted")
points = run_cost_limit_sweep(task, limits, ga_config(), seeds=[0, 1, 2],
                              train_config=config, workers=2)

print(f"{'limit':>8} {'trained ret':>12} {'trained cost':>13} {'LP ret':>9} {'LP cost':>9}")
for p in points:
    sol = solve_lp(replace(spec.model, cost_limits=np.array([p.cost_limit])))
    print(f"{p.cost_limit:8.2f} {p.return_tail:12.3f} {p.cost_tail:13.3f} "
          f"{sol.optimal_return:9.3f} {sol.optimal_cost[0]:9.3f}")
