"""
Fixed-lambda* versus GA-updated training trajectories.

Both land at the constrained optimum, but they travel differently: the
fixed multiplier is conservative from the first epoch, while the GA run
first maximizes reward and then corrects back into the feasible region.
The early-training return gap is the signature.
"""
import numpy as np

from cmdplab import fixed_config, ga_config, lambda_star_bisection, task_by_name, train
from cmdplab.harness import smooth, tail_average
from cmdplab.trainer import TrainConfig
from dataclasses import replace

task = "grid-hazard-small"
spec = task_by_name(task)
lam_star = lambda_star_bisection(spec.model, lambda_hi=50.0)
print(f"{task}: oracle lambda* = {lam_star:.4f}, limit d = {spec.model.cost_limits[0]:.3f}")

base = TrainConfig(task=task, mode="sampled", epochs=300, steps_per_epoch=4000,
                   inner_iters=10, batch_size=512, learning_rate=0.3,
                   constraint_signal="discounted")
runs = {}
for name, ctrl in (("ga", ga_config()), ("fixed-lam*", fixed_config(lam_star))):
    returns, costs = [], []
    for seed in range(3):
        rec = train(replace(base, controller=ctrl, seed=seed))
        returns.append(rec.series("return_mean"))
        costs.append(rec.series("cost_mean"))
    runs[name] = (np.mean(returns, axis=0), np.mean(costs, axis=0))

n_early = int(0.1 * base.epochs)
print(f"\n{'method':>10} {'early-10% return':>18} {'tail return':>12} {'tail cost':>10}")
for name, (ret, cost_series) in runs.items():
    print(f"{name:>10} {np.mean(ret[:n_early]):18.3f} "
          f"{tail_average(ret, 0.05):12.3f} {tail_average(cost_series, 0.05):10.3f}")

print("\nsmoothed return curves (every 30 epochs):")
ga_s = smooth(runs["ga"][0], 0.9)
fx_s = smooth(runs["fixed-lam*"][0], 0.9)
print(f"{'epoch':>6} {'ga':>8} {'fixed':>8}")
for k in range(0, base.epochs, 30):
    print(f"{k:6d} {ga_s[k]:8.3f} {fx_s[k]:8.3f}")
