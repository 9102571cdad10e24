"""
Oracle basics on the chain-speed task.

The ring rewards fast motion (r=1) over slow motion (r=0.4), but going fast
triggers a costly excursion half the time. We solve the occupancy-measure
LP for the exact constrained optimum, read the optimal multiplier off the
cost-row dual, and confirm it against dual bisection and the zero duality
gap D(lambda*) == primal.
"""
import numpy as np

from cmdplab import dual_function, lambda_star_bisection, solve_lp, task_by_name

spec = task_by_name("chain-speed")
m = spec.model
d = float(m.cost_limits[0])
print(f"task: {spec.name} ({m.n_states} states, {m.n_actions} actions, limit d={d:g})")

sol = solve_lp(m)
print(f"LP optimum: return {sol.optimal_return:.4f}, cost {sol.optimal_cost[0]:.4f} "
      f"(active: {bool(sol.constraint_active[0])})")
print(f"lambda* from LP duals: {sol.lambda_star[0]:.6f}")

lam_bis = lambda_star_bisection(m, lambda_hi=20.0, tol=1e-8)
print(f"lambda* from bisection: {lam_bis:.6f}")

print("\ndual function D(lambda) along a line (weak duality: D >= primal):")
for lam in [0.0, 0.5, 1.0, lam_bis, 1.5, 2.0]:
    dval = dual_function(m, [lam])
    print(f"  D({lam:7.4f}) = {dval:9.4f}   (primal {sol.optimal_return:.4f})")
gap = dual_function(m, [lam_bis]) - sol.optimal_return
print(f"\nduality gap at lambda*: {gap:.2e}")

print("\noptimal policy mixes fast/slow per state (probabilities of 'fast'):")
print(np.round(sol.policy.probs[:, 1], 4))
