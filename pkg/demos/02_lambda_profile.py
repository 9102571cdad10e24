"""
Multiplier profile: final return and cost as a function of a fixed lambda.

Exact-dual training with a manually fixed multiplier is stationary, so a
handful of epochs per grid point suffices. The cost column decreases with
lambda; where it crosses the cost limit sits the optimal trade-off, and the
interpolated crossing agrees with the bisection oracle.
"""
from cmdplab import lambda_star_bisection, task_by_name
from cmdplab.harness import find_lambda_star, run_lambda_profile
from cmdplab.trainer import TrainConfig

task = "chain-speed"
grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.1, 1.3, 1.5, 2.0]
config = TrainConfig(mode="exact_dual", epochs=3, constraint_signal="discounted")

profile = run_lambda_profile(task, grid, seeds=[0], train_config=config)
print(f"task: {task}   cost limit: {profile.cost_limit:g}\n")
print(f"{'lambda':>8} {'return':>10} {'cost':>10}")
for p in profile.points:
    marker = "  <-- cost crosses the limit here" if (
        p.cost_tail <= profile.cost_limit
        and any(q.cost_tail > profile.cost_limit and q.lambda_fixed < p.lambda_fixed
                for q in profile.points)
        and all(q.cost_tail > profile.cost_limit
                for q in profile.points if q.lambda_fixed < p.lambda_fixed)
    ) else ""
    print(f"{p.lambda_fixed:8.3f} {p.return_tail:10.4f} {p.cost_tail:10.4f}{marker}")

est, status = find_lambda_star(profile)
oracle = lambda_star_bisection(task_by_name(task).model, lambda_hi=20.0)
print(f"\ninterpolated lambda*: {est:.4f} ({status})")
print(f"bisection lambda*:    {oracle:.4f}")
