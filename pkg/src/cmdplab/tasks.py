"""Builtin tabular CMDP tasks and the seeded random-CMDP generator.

Four registry tasks of increasing difficulty stand in for physics-based
navigation suites: a ring where speed is rewarded but risks excursions, two
hazard gridworlds, and a two-goal grid where the lucrative goal sits behind
a hazard band. Every task is calibrated at construction so its default
cost limit is violated by the unconstrained optimum by roughly 2-4x, which
keeps the constraint active where the multiplier dynamics are interesting.

Cost limits are expressed in discounted units (the same objective the LP
oracle constrains). Difficulty is encoded as state count plus hazard
pressure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .cmdp import CmdpModel, cost, evaluate, validate_model
from .trainer import value_iteration

GRID_SLIP = 0.1  # chance of slipping to a uniformly random neighbor


@dataclass(frozen=True)
class TaskSpec:
    name: str
    model: CmdpModel
    description: str
    difficulty_rank: int


def _calibrated_limit(model: CmdpModel, active_fraction: float = 1.0 / 3.0) -> float:
    """Cost limit between the cheapest and the unconstrained policy's cost.

    Placing d at `active_fraction` of the way up from the minimum
    achievable cost keeps the task feasible while the unconstrained optimum
    overshoots the budget by a factor of ~1/active_fraction.
    """
    _, greedy = value_iteration(model, model.reward)
    c_unc = float(model.initial_dist @ evaluate(model, greedy, cost(0)).v)
    _, frugal = value_iteration(model, -model.costs[0])
    c_min = float(model.initial_dist @ evaluate(model, frugal, cost(0)).v)
    if c_unc - c_min < 1e-9:
        return c_unc + 1.0  # constraint can never be active; keep it slack
    return c_min + active_fraction * (c_unc - c_min)


def _with_limit(model: CmdpModel) -> CmdpModel:
    return replace(model, cost_limits=np.array([_calibrated_limit(model)]))


@lru_cache(maxsize=None)
def make_chain_speed(n: int, seed: int) -> TaskSpec:
    """Ring task: 'fast' earns 1 but excursions cost, 'slow' earns 0.4 safely.

    Action 0 (slow) advances one state for reward 0.4 and zero cost. Action
    1 (fast) earns reward 1 and advances one state, but with probability
    0.5 it overshoots to the second-next state at cost 1. The layout is
    fixed; `seed` is accepted for interface uniformity only.
    """
    if n < 4:
        raise ValueError("chain-speed needs n >= 4")
    p = np.zeros((n, 2, n))
    r = np.zeros((n, 2, n))
    c = np.zeros((n, 2, n))
    for s in range(n):
        nxt, skip = (s + 1) % n, (s + 2) % n
        p[s, 0, nxt] = 1.0
        r[s, 0, nxt] = 0.4
        p[s, 1, nxt] = 0.5
        p[s, 1, skip] = 0.5
        r[s, 1, nxt] = 1.0
        r[s, 1, skip] = 1.0
        c[s, 1, skip] = 1.0
    p0 = np.zeros(n)
    p0[0] = 1.0
    model = CmdpModel(
        n_states=n,
        n_actions=2,
        transition=p,
        reward=r,
        costs=(c,),
        initial_dist=p0,
        gamma=0.99,
        cost_limits=np.array([0.0]),
        horizon=500,
    )
    model = replace(model, cost_limits=np.array([0.4 * 0.5 / (1.0 - model.gamma)]))
    return TaskSpec(
        name="chain-speed",
        model=model,
        description=f"{n}-state ring, fast motion risks costly excursions",
        difficulty_rank=1,
    )


def _grid_neighbors(size: int) -> list[list[int]]:
    nbrs = []
    for s in range(size * size):
        r, col = divmod(s, size)
        cells = []
        if r > 0:
            cells.append(s - size)
        if r < size - 1:
            cells.append(s + size)
        if col > 0:
            cells.append(s - 1)
        if col < size - 1:
            cells.append(s + 1)
        nbrs.append(cells)
    return nbrs


def _grid_intended(size: int, s: int, a: int) -> int:
    r, col = divmod(s, size)
    if a == 0 and r > 0:
        return s - size
    if a == 1 and r < size - 1:
        return s + size
    if a == 2 and col > 0:
        return s - 1
    if a == 3 and col < size - 1:
        return s + 1
    return s  # bumping a wall keeps you in place


def _hazard_free_reachable(size: int, hazards: set[int], start: int, goals: set[int]) -> bool:
    nbrs = _grid_neighbors(size)
    seen = {start}
    frontier = [start]
    while frontier:
        s = frontier.pop()
        if s in goals:
            return True
        for t in nbrs[s]:
            if t not in seen and t not in hazards:
                seen.add(t)
                frontier.append(t)
    return False


def _grid_model(size: int, hazards: set[int], goal_rewards: dict[int, float]) -> CmdpModel:
    n = size * size
    nbrs = _grid_neighbors(size)
    p = np.zeros((n, 4, n))
    r = np.zeros((n, 4, n))
    c = np.zeros((n, 4, n))
    goals = set(goal_rewards)
    # Exploring starts: episodes (and in-model resets) begin uniformly over
    # non-goal cells, which keeps every state visited under any policy.
    p0 = np.array([0.0 if s in goals else 1.0 for s in range(n)])
    p0 /= p0.sum()
    for s in range(n):
        if s in goals:
            p[s, :, :] = p0  # in-model reset
            continue
        for a in range(4):
            p[s, a, _grid_intended(size, s, a)] += 1.0 - GRID_SLIP
            for t in nbrs[s]:
                p[s, a, t] += GRID_SLIP / len(nbrs[s])
    for g, reward in goal_rewards.items():
        r[:, :, g] = reward
        r[g, :, g] = 0.0  # no reward on the reset transition
    for h in hazards:
        c[h, :, :] = 1.0  # cost accrues per step spent in a hazard cell
    return CmdpModel(
        n_states=n,
        n_actions=4,
        transition=p,
        reward=r,
        costs=(c,),
        initial_dist=p0,
        gamma=0.99,
        cost_limits=np.array([0.0]),
        horizon=500,
    )


@lru_cache(maxsize=None)
def make_grid_hazard(size: int, hazard_density: float, seed: int) -> TaskSpec:
    """size x size gridworld with seeded hazard cells and a resetting goal.

    Four move actions with a 10% slip to a uniformly random neighbor; +1
    reward on reaching the far corner (then an in-model reset to the start);
    cost 1 for every step taken from a hazard cell. Raises when the drawn
    hazards cut every hazard-free start-to-goal path.
    """
    if size < 3:
        raise ValueError("grid-hazard needs size >= 3")
    if not 0.0 <= hazard_density <= 1.0:
        raise ValueError("hazard_density must lie in [0, 1]")
    n = size * size
    start, goal = 0, n - 1
    rng = np.random.default_rng(seed)
    candidates = np.array([s for s in range(n) if s not in (start, goal)])
    n_hazards = min(int(round(hazard_density * n)), len(candidates))
    hazards = set(int(h) for h in rng.choice(candidates, size=n_hazards, replace=False))
    if not _hazard_free_reachable(size, hazards, start, {goal}):
        raise ValueError(
            f"hazard draw (density={hazard_density}, seed={seed}) blocks every "
            "hazard-free start-to-goal path"
        )
    model = _with_limit(_grid_model(size, hazards, {goal: 1.0}))
    return TaskSpec(
        name=f"grid-hazard-{size}x{size}-d{hazard_density:g}-s{seed}",
        model=model,
        description=f"{size}x{size} hazard grid, density {hazard_density:g}, seed {seed}",
        difficulty_rank=2,
    )


@lru_cache(maxsize=None)
def make_grid_two_goal(size: int, seed: int) -> TaskSpec:
    """Grid with a safe cheap goal and a lucrative goal behind a hazard band.

    The top-right goal pays 0.3 and is reachable hazard-free along the top
    row; the bottom-right goal pays 1.0 but every route to it crosses a
    full-width hazard band in the middle row. The layout is fixed; `seed`
    is accepted for interface uniformity only.
    """
    if size < 4:
        raise ValueError("grid-two-goal needs size >= 4")
    n = size * size
    start = 0
    goal_a = size - 1  # top-right, safe
    goal_b = n - 1  # bottom-right, behind the band
    band_row = size // 2
    hazards = {band_row * size + col for col in range(size)}
    model = _with_limit(
        _grid_model(size, hazards, {goal_a: 0.3, goal_b: 1.0})
    )
    return TaskSpec(
        name="grid-two-goal",
        model=model,
        description=f"{size}x{size} grid, rich goal behind a hazard band",
        difficulty_rank=4,
    )


@lru_cache(maxsize=None)
def make_random_cmdp(
    n_states: int, n_actions: int, cost_density: float, seed: int
) -> TaskSpec:
    """Seeded random CMDP: Dirichlet(1) transitions, uniform rewards.

    Each (s, a) carries cost 1 with probability `cost_density`. The cost
    limit sits halfway between the cheapest policy's cost and the
    unconstrained optimum's cost, so the constraint is active whenever the
    drawn costs matter at all.
    """
    if n_states < 2 or n_actions < 2:
        raise ValueError("random CMDP needs n_states >= 2 and n_actions >= 2")
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.random((n_states, n_actions, n_states))
    cost_mask = rng.random((n_states, n_actions)) < cost_density
    c = np.repeat(cost_mask[:, :, None].astype(float), n_states, axis=2)
    p0 = rng.dirichlet(np.ones(n_states))
    model = CmdpModel(
        n_states=n_states,
        n_actions=n_actions,
        transition=p,
        reward=r,
        costs=(c,),
        initial_dist=p0,
        gamma=0.9,
        cost_limits=np.array([0.0]),
        horizon=200,
    )
    model = replace(
        model, cost_limits=np.array([_calibrated_limit(model, active_fraction=0.5)])
    )
    return TaskSpec(
        name=f"random-{n_states}s{n_actions}a-d{cost_density:g}-s{seed}",
        model=model,
        description=f"random CMDP ({n_states} states, {n_actions} actions, "
        f"cost density {cost_density:g}, seed {seed})",
        difficulty_rank=0,
    )


def _scaled_costs(spec: TaskSpec, unit: float) -> TaskSpec:
    """Rescale cost tensors and limit together (feasible set unchanged)."""
    m = spec.model
    model = replace(
        m, costs=tuple(unit * c for c in m.costs), cost_limits=unit * m.cost_limits
    )
    return replace(spec, model=model)


def registry() -> list[TaskSpec]:
    """The four builtin tasks, ordered by increasing difficulty.

    grid-hazard-small uses a 0.25 cost unit per hazard step: rescaling cost
    and limit together leaves the constrained optimum untouched but slows
    the multiplier's residual feedback, which keeps the gradient-ascent
    update's early reward-chasing phase observable at this scale.
    """
    tasks = [
        make_chain_speed(8, seed=0),
        _scaled_costs(
            replace(
                make_grid_hazard(5, 0.2, seed=7),
                name="grid-hazard-small",
                difficulty_rank=2,
            ),
            unit=0.25,
        ),
        replace(
            make_grid_hazard(6, 0.3, seed=5),
            name="grid-hazard-dense",
            difficulty_rank=3,
        ),
        make_grid_two_goal(6, seed=0),
    ]
    return sorted(tasks, key=lambda t: t.difficulty_rank)


def task_by_name(name: str) -> TaskSpec:
    for spec in registry():
        if spec.name == name:
            return spec
    known = ", ".join(t.name for t in registry())
    raise KeyError(f"unknown task {name!r}; builtin tasks: {known}")


# ---------------------------------------------------------------------------
# JSON export of models for external tooling
# ---------------------------------------------------------------------------

MODEL_SCHEMA = "cmdplab-model-v1"


def model_to_json(model: CmdpModel, name: str = "") -> dict:
    """Flatten a model into the documented JSON-serializable schema."""
    return {
        "schema": MODEL_SCHEMA,
        "name": name,
        "n_states": model.n_states,
        "n_actions": model.n_actions,
        "gamma": model.gamma,
        "horizon": model.horizon,
        "initial_dist": model.initial_dist.tolist(),
        "transition": model.transition.ravel().tolist(),
        "reward": model.reward.ravel().tolist(),
        "costs": [c.ravel().tolist() for c in model.costs],
        "cost_limits": model.cost_limits.tolist(),
    }


def model_from_json(data: dict) -> CmdpModel:
    if data.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"expected schema {MODEL_SCHEMA!r}, got {data.get('schema')!r}")
    s, a = int(data["n_states"]), int(data["n_actions"])
    shape = (s, a, s)
    model = CmdpModel(
        n_states=s,
        n_actions=a,
        transition=np.asarray(data["transition"], dtype=float).reshape(shape),
        reward=np.asarray(data["reward"], dtype=float).reshape(shape),
        costs=tuple(np.asarray(c, dtype=float).reshape(shape) for c in data["costs"]),
        initial_dist=np.asarray(data["initial_dist"], dtype=float),
        gamma=float(data["gamma"]),
        cost_limits=np.asarray(data["cost_limits"], dtype=float),
        horizon=int(data["horizon"]),
    )
    violations = validate_model(model)
    if violations:
        raise ValueError("imported model is invalid: " + "; ".join(violations))
    return model
