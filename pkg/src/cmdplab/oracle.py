"""Exact ground truth for constrained tabular MDPs.

Three independent routes to the constrained optimum:

* `solve_lp` — the occupancy-measure linear program, solved by the in-repo
  dense simplex with post-hoc KKT verification; optimal multipliers are
  read off the cost-row duals.
* `lambda_star_bisection` — bisection on the exact-dual cost curve, which
  is weakly non-increasing in the multiplier.
* `brute_force` — enumeration of all deterministic policies plus boundary
  mixtures of feasible/infeasible pairs (exact for one constraint, grid
  fallback otherwise).

Agreement between the routes is what the test suite certifies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cmdp import (
    CmdpModel,
    OccupancyMeasure,
    PolicyTable,
    cost,
    evaluate,
    policy_from_occupancy,
)
from .simplex import LpInfeasibleError, simplex_solve
from .trainer import DEFAULT_VI_TOL, shaped_signal, value_iteration

KKT_TOL = 1e-6


class InfeasibleModelError(ValueError):
    """No policy satisfies every cost limit.

    `certificate` aggregates the LP rows into one equality that every
    non-negative occupancy violates (None when detected by enumeration).
    """

    def __init__(self, message: str, certificate: Optional[np.ndarray] = None):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class OracleSolution:
    optimal_return: float
    optimal_cost: np.ndarray
    occupancy: OccupancyMeasure
    lambda_star: np.ndarray
    constraint_active: np.ndarray
    policy: PolicyTable

    def to_dict(self) -> dict:
        return {
            "optimal_return": self.optimal_return,
            "optimal_cost": self.optimal_cost.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "constraint_active": [bool(b) for b in self.constraint_active],
        }


def _lp_system(model: CmdpModel):
    """Equality-form LP data: variables are mu(s,a) raveled plus m slacks."""
    s, a, m = model.n_states, model.n_actions, model.n_constraints
    flow = np.repeat(np.eye(s), a, axis=1) - model.gamma * model.transition.reshape(s * a, s).T
    cost_rows = np.stack([model.mean_signal(c).ravel() for c in model.costs])
    a_eq = np.zeros((s + m, s * a + m))
    a_eq[:s, : s * a] = flow
    a_eq[s:, : s * a] = cost_rows
    a_eq[s:, s * a :] = np.eye(m)
    b_eq = np.concatenate([model.initial_dist, model.cost_limits])
    c_obj = np.concatenate([model.mean_signal(model.reward).ravel(), np.zeros(m)])
    return c_obj, a_eq, b_eq


def solve_lp(model: CmdpModel) -> OracleSolution:
    """Maximize <mu, r> over the discounted flow polytope under cost limits.

    The optimal multipliers are the duals of the cost rows. KKT residuals
    (feasibility, stationarity, complementary slackness) are re-verified on
    the returned solution.
    """
    s, a, m = model.n_states, model.n_actions, model.n_constraints
    c_obj, a_eq, b_eq = _lp_system(model)
    try:
        sol = simplex_solve(c_obj, a_eq, b_eq, maximize=True)
    except LpInfeasibleError as err:
        raise InfeasibleModelError(str(err), certificate=err.certificate) from err

    x = sol.x
    mu = np.clip(x[: s * a].reshape(s, a), 0.0, None)
    lambda_star = np.clip(sol.duals[s:], 0.0, None)
    optimal_return = float(model.mean_signal(model.reward).ravel() @ mu.ravel())
    optimal_cost = np.array(
        [float(model.mean_signal(c).ravel() @ mu.ravel()) for c in model.costs]
    )
    _verify_kkt(c_obj, a_eq, b_eq, x, sol.duals)
    active = np.abs(optimal_cost - model.cost_limits) <= KKT_TOL * (
        1.0 + np.abs(model.cost_limits)
    )
    return OracleSolution(
        optimal_return=optimal_return,
        optimal_cost=optimal_cost,
        occupancy=OccupancyMeasure(mu=mu),
        lambda_star=lambda_star,
        constraint_active=active,
        policy=policy_from_occupancy(OccupancyMeasure(mu=mu)),
    )


def _verify_kkt(c_obj, a_eq, b_eq, x, duals) -> None:
    scale = 1.0 + max(np.abs(b_eq).max(), np.abs(c_obj @ x))
    primal = np.abs(a_eq @ x - b_eq).max()
    if primal > KKT_TOL * scale:
        raise ArithmeticError(f"LP primal residual {primal:.3e} too large")
    reduced = c_obj - a_eq.T @ duals  # <= 0 required at a maximum
    if reduced.max() > KKT_TOL * scale:
        raise ArithmeticError(f"LP dual residual {reduced.max():.3e} too large")
    slack = np.abs(reduced * x).max()
    if slack > KKT_TOL * scale:
        raise ArithmeticError(f"LP complementary slackness {slack:.3e} violated")


def dual_function(model: CmdpModel, lambda_vec, tol: float = DEFAULT_VI_TOL) -> float:
    """D(lambda) = max_pi [J^R - sum_i lam_i (J^Ci - d_i)], solved exactly."""
    lam = np.asarray(lambda_vec, dtype=float)
    vt, _ = value_iteration(model, shaped_signal(model, lam), tol)
    return float(model.initial_dist @ vt.v + lam @ model.cost_limits)


def exact_dual_cost(
    model: CmdpModel, lam: float, tol: float = DEFAULT_VI_TOL, v0=None
) -> tuple[float, np.ndarray]:
    """Cost of the greedy policy on the shaped signal at a scalar multiplier."""
    vt, policy = value_iteration(model, shaped_signal(model, [lam]), tol, v0=v0)
    j_c = float(model.initial_dist @ evaluate(model, policy, cost(0)).v)
    return j_c, vt.v


def lambda_star_bisection(
    model: CmdpModel, lambda_hi: float = 100.0, tol: float = 1e-6
) -> float:
    """Smallest multiplier whose exact-dual policy is feasible (m == 1).

    Bisects the weakly non-increasing cost-versus-multiplier curve; returns
    0 when the unconstrained optimum is already feasible, and raises when
    even `lambda_hi` cannot reach the limit.
    """
    if model.n_constraints != 1:
        raise ValueError("bisection handles exactly one constraint")
    d = float(model.cost_limits[0])
    cost_lo, v_warm = exact_dual_cost(model, 0.0)
    if cost_lo <= d:
        return 0.0
    cost_hi, _ = exact_dual_cost(model, lambda_hi, v0=v_warm)
    if cost_hi > d:
        raise ValueError(
            f"exact-dual cost {cost_hi:.6g} still exceeds limit {d:.6g} at "
            f"lambda_hi={lambda_hi:g}; raise lambda_hi"
        )
    lo, hi = 0.0, lambda_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cost_mid, v_warm = exact_dual_cost(model, mid, v0=v_warm)
        if cost_mid <= d:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def lambda_star_with_interval(
    model: CmdpModel, lambda_hi: float = 100.0, tol: float = 1e-4
) -> dict:
    """Cross-check the LP multiplier against bisection (m == 1).

    Returns the LP dual, the bisection bracket, and a degeneracy flag set
    when the two disagree beyond max(tol, 1e-4); degenerate LPs admit an
    interval of optimal multipliers, and the bracket is the canonical
    report in that case.
    """
    lp = solve_lp(model)
    bisect = lambda_star_bisection(model, lambda_hi=lambda_hi, tol=min(tol, 1e-6))
    lp_lam = float(lp.lambda_star[0])
    disagreement = abs(lp_lam - bisect)
    degenerate = disagreement > max(tol, 1e-4)
    return {
        "lambda_star_lp": lp_lam,
        "lambda_star_bisection": bisect,
        "interval": (min(lp_lam, bisect), max(lp_lam, bisect)),
        "degenerate": degenerate,
    }


# ---------------------------------------------------------------------------
# Brute force enumeration
# ---------------------------------------------------------------------------

MAX_DETERMINISTIC_POLICIES = 4096


def _enumerate_deterministic(model: CmdpModel):
    """Exact J^R, J^C and occupancies of every deterministic policy."""
    s, a = model.n_states, model.n_actions
    n_pol = a**s
    actions = np.array(list(itertools.product(range(a), repeat=s)), dtype=int)
    rows = np.arange(s)
    p_pi = model.transition[rows[None, :], actions, :]  # (n_pol, s, s)
    eye = np.eye(s)
    mean_r = model.mean_signal(model.reward)
    systems = eye[None, :, :] - model.gamma * p_pi
    v_r = np.linalg.solve(systems, mean_r[rows[None, :], actions][:, :, None])[:, :, 0]
    returns = v_r @ model.initial_dist
    costs = np.empty((n_pol, model.n_constraints))
    for i, c in enumerate(model.costs):
        mean_c = model.mean_signal(c)
        v_c = np.linalg.solve(systems, mean_c[rows[None, :], actions][:, :, None])[:, :, 0]
        costs[:, i] = v_c @ model.initial_dist
    rhs = np.broadcast_to(model.initial_dist, (n_pol, s))[:, :, None].copy()
    d_pi = np.linalg.solve(np.swapaxes(systems, 1, 2), rhs)[:, :, 0]
    return actions, returns, costs, d_pi


def _occupancy_of(actions_row: np.ndarray, d_pi_row: np.ndarray, n_actions: int) -> np.ndarray:
    mu = np.zeros((len(actions_row), n_actions))
    mu[np.arange(len(actions_row)), actions_row] = d_pi_row
    return mu


def brute_force(model: CmdpModel) -> OracleSolution:
    """Constrained optimum by enumeration plus boundary pair mixtures.

    Exact for a single constraint: the optimal vertex of the constrained
    flow polytope lies on an edge between two deterministic occupancies,
    and every feasible/infeasible pair mixed onto the constraint boundary
    is examined. With several constraints a fine mixture grid is searched
    instead (test-only fallback).
    """
    s, a, m = model.n_states, model.n_actions, model.n_constraints
    if a**s > MAX_DETERMINISTIC_POLICIES:
        raise ValueError(
            f"{a}**{s} deterministic policies exceed the {MAX_DETERMINISTIC_POLICIES} guard"
        )
    actions, returns, costs, d_pi = _enumerate_deterministic(model)
    d = model.cost_limits
    feas = np.all(costs <= d + 1e-9, axis=1)
    if not np.any(feas):
        raise InfeasibleModelError(
            f"no deterministic policy satisfies the limits (min cost "
            f"{costs.min(axis=0)}, limits {d})"
        )

    best_idx = int(np.flatnonzero(feas)[np.argmax(returns[feas])])
    best_return = float(returns[best_idx])
    best_mu = _occupancy_of(actions[best_idx], d_pi[best_idx], a)
    best_cost = costs[best_idx].copy()
    lambda_star = np.zeros(m)

    if m == 1:
        viol = ~feas
        if np.any(viol):
            c_f, r_f = costs[feas, 0], returns[feas]
            c_v, r_v = costs[viol, 0], returns[viol]
            f_ids, v_ids = np.flatnonzero(feas), np.flatnonzero(viol)
            alpha = (c_v[None, :] - d[0]) / (c_v[None, :] - c_f[:, None])
            mix_ret = alpha * r_f[:, None] + (1.0 - alpha) * r_v[None, :]
            fi, vi = np.unravel_index(np.argmax(mix_ret), mix_ret.shape)
            if mix_ret[fi, vi] > best_return + 1e-12:
                best_return = float(mix_ret[fi, vi])
                al = float(alpha[fi, vi])
                i_f, i_v = int(f_ids[fi]), int(v_ids[vi])
                best_mu = al * _occupancy_of(actions[i_f], d_pi[i_f], a) + (
                    1.0 - al
                ) * _occupancy_of(actions[i_v], d_pi[i_v], a)
                best_cost = np.array([float(d[0])])
                lambda_star = np.array(
                    [
                        (returns[i_v] - returns[i_f])
                        / (costs[i_v, 0] - costs[i_f, 0])
                    ]
                )
    else:
        # Fine-grid fallback over pairwise mixtures; approximate by design.
        grid = np.linspace(0.0, 1.0, 201)
        for i in range(len(returns)):
            for j in range(i + 1, len(returns)):
                mc = grid[:, None] * costs[i] + (1 - grid)[:, None] * costs[j]
                ok = np.all(mc <= d + 1e-9, axis=1)
                if np.any(ok):
                    mr = grid[ok] * returns[i] + (1 - grid[ok]) * returns[j]
                    k = int(np.argmax(mr))
                    if mr[k] > best_return + 1e-12:
                        best_return = float(mr[k])
                        al = float(grid[ok][k])
                        best_mu = al * _occupancy_of(actions[i], d_pi[i], a) + (
                            1 - al
                        ) * _occupancy_of(actions[j], d_pi[j], a)
                        best_cost = al * costs[i] + (1 - al) * costs[j]
        lambda_star = np.full(m, np.nan)

    active = np.abs(best_cost - d) <= KKT_TOL * (1.0 + np.abs(d))
    return OracleSolution(
        optimal_return=best_return,
        optimal_cost=np.asarray(best_cost, dtype=float),
        occupancy=OccupancyMeasure(mu=best_mu),
        lambda_star=lambda_star,
        constraint_active=active,
        policy=policy_from_occupancy(OccupancyMeasure(mu=best_mu)),
    )
