"""
Sampled PPO-Lag training with a gradient-ascent multiplier.

The multiplier starts near zero, so early training chases reward and
overshoots the cost budget; lambda then integrates the violation and pulls
the policy back. The tail of training hovers around the limit, and the
tail-averaged return approaches the LP optimum.
"""
import numpy as np

from cmdplab import ga_config, solve_lp, task_by_name, train
from cmdplab.harness import tail_average
from cmdplab.trainer import TrainConfig

task = "grid-hazard-small"
spec = task_by_name(task)
sol = solve_lp(spec.model)
d = float(spec.model.cost_limits[0])

config = TrainConfig(
    task=task, controller=ga_config(), mode="sampled", epochs=300,
    steps_per_epoch=4000, inner_iters=10, batch_size=512, learning_rate=0.3,
    constraint_signal="discounted", seed=0,
)
print(f"training GA-updated PPO-Lag on {task} (d={d:.3f}, LP return {sol.optimal_return:.3f})")
record = train(config)

print(f"\n{'epoch':>6} {'lambda':>8} {'cost':>8} {'return':>8}")
for k in range(0, config.epochs, 30):
    m = record.metrics[k]
    print(f"{m.epoch:6d} {m.lam:8.4f} {m.cost_mean:8.3f} {m.return_mean:8.3f}")

ret_tail = tail_average(record.series("return_mean"), 0.05)
cost_tail = tail_average(record.series("cost_mean"), 0.05)
print(f"\ntail (last 5%): return {ret_tail:.3f} (LP {sol.optimal_return:.3f}), "
      f"cost {cost_tail:.3f} (limit {d:.3f})")
print(f"wall time: {record.wall_time:.1f}s for {record.metrics[-1].steps} sampled steps")
