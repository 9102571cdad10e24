"""Tabular constrained MDP model and exact evaluation machinery.

A model is the full tuple (S, A, p, r, C, p0, gamma, d) stored as dense
numpy tensors indexed (s, a, s'). Policies are softmax tables over logits.
Evaluation solves the policy Bellman equations directly (linear solve, no
iterative sweeps), so value tables and occupancy measures are exact up to
floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

Signal = Union[str, tuple[str, int]]

REWARD: Signal = "reward"

#: Logit gap used to encode (near-)deterministic policies with finite logits.
#: exp(-60) ~ 8.8e-27, far below every tolerance used in this package.
DETERMINISTIC_LOGIT_GAP = 60.0

#: Floor applied to probabilities before taking logs, keeps logits finite.
MIN_POLICY_PROB = 1e-26


def cost(i: int) -> Signal:
    """Signal selector for the i-th cost function."""
    return ("cost", i)


def _as_float_array(x, shape=None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class CmdpModel:
    """Constrained MDP: transition/reward/cost tensors indexed (s, a, s').

    `cost_limits[i]` is the budget for the discounted cost objective of the
    i-th constraint. `horizon` only truncates sampled episodes; the exact
    solvers are infinite-horizon discounted.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    costs: tuple[np.ndarray, ...]
    initial_dist: np.ndarray
    gamma: float
    cost_limits: np.ndarray
    horizon: int = 500

    def __post_init__(self):
        s, a = self.n_states, self.n_actions
        object.__setattr__(self, "transition", _as_float_array(self.transition, (s, a, s)))
        object.__setattr__(self, "reward", _as_float_array(self.reward, (s, a, s)))
        object.__setattr__(
            self, "costs", tuple(_as_float_array(c, (s, a, s)) for c in self.costs)
        )
        object.__setattr__(self, "initial_dist", _as_float_array(self.initial_dist, (s,)))
        object.__setattr__(self, "cost_limits", _as_float_array(self.cost_limits))
        for arr in (self.transition, self.reward, self.initial_dist, self.cost_limits, *self.costs):
            arr.flags.writeable = False

    @property
    def n_constraints(self) -> int:
        return len(self.costs)

    def signal_tensor(self, signal: Signal) -> np.ndarray:
        """The (s, a, s') tensor selected by `signal` ("reward" or ("cost", i))."""
        if signal == "reward":
            return self.reward
        kind, i = signal
        if kind != "cost":
            raise ValueError(f"unknown signal {signal!r}")
        if not 0 <= i < self.n_constraints:
            raise IndexError(f"cost index {i} out of range for m={self.n_constraints}")
        return self.costs[i]

    def mean_signal(self, signal_or_tensor) -> np.ndarray:
        """Expected per-step signal, shape (s, a): sum_s' p(s'|s,a) x(s,a,s')."""
        tensor = (
            signal_or_tensor
            if isinstance(signal_or_tensor, np.ndarray)
            else self.signal_tensor(signal_or_tensor)
        )
        return np.einsum("ijk,ijk->ij", self.transition, tensor)


@dataclass(frozen=True)
class PolicyTable:
    """Softmax-parameterized stochastic policy: pi(a|s) = softmax(logits[s])."""

    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", _as_float_array(self.logits))
        self.logits.flags.writeable = False

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return softmax_rows(self.logits)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def uniform_policy(n_states: int, n_actions: int) -> PolicyTable:
    return PolicyTable(np.zeros((n_states, n_actions)))


def deterministic_policy(actions: Sequence[int], n_actions: int) -> PolicyTable:
    """Near-deterministic softmax policy selecting `actions[s]` in state s.

    Off-action mass is exp(-DETERMINISTIC_LOGIT_GAP) per action, negligible
    against every tolerance in this package but keeps logits finite and
    probabilities strictly positive.
    """
    actions = np.asarray(actions, dtype=int)
    logits = np.zeros((len(actions), n_actions))
    logits[np.arange(len(actions)), actions] = DETERMINISTIC_LOGIT_GAP
    return PolicyTable(logits)


def policy_from_probs(probs: np.ndarray) -> PolicyTable:
    """PolicyTable whose softmax reproduces `probs` (floored at MIN_POLICY_PROB)."""
    probs = _as_float_array(probs)
    return PolicyTable(np.log(np.clip(probs, MIN_POLICY_PROB, None)))


@dataclass(frozen=True)
class ValueTable:
    """State values of one signal under one policy, from a direct solve."""

    v: np.ndarray
    signal_kind: Signal
    gamma_used: float


@dataclass(frozen=True)
class OccupancyMeasure:
    """Discounted state-action visitation, total mass 1/(1-gamma)."""

    mu: np.ndarray

    def total_mass(self) -> float:
        return float(self.mu.sum())

    def flow_residual(self, model: CmdpModel) -> np.ndarray:
        """Per-state residual of sum_a mu(s',a) = p0(s') + gamma sum mu(s,a) p(s'|s,a)."""
        inflow = model.initial_dist + model.gamma * np.einsum(
            "ij,ijk->k", self.mu, model.transition
        )
        return self.mu.sum(axis=1) - inflow


@dataclass(frozen=True)
class TrajectoryBatch:
    """Fixed-horizon episode batch sampled from a model under a policy.

    All arrays are rectangular: episodes are truncated at the model horizon
    and the model has no terminal states (tasks reset in-model). Per-episode
    discounted and undiscounted return/cost sums are recorded at sampling
    time (discounted with the model's gamma).
    """

    states: np.ndarray  # (n_episodes, T) int
    actions: np.ndarray  # (n_episodes, T) int
    rewards: np.ndarray  # (n_episodes, T)
    costs: np.ndarray  # (n_episodes, T, m)
    next_states: np.ndarray  # (n_episodes, T) int
    seed: int
    disc_returns: np.ndarray  # (n_episodes,)
    undisc_returns: np.ndarray
    disc_costs: np.ndarray  # (n_episodes, m)
    undisc_costs: np.ndarray

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def episode_length(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.states.size

    def episodes(self) -> Iterator[tuple]:
        """Yield (state, action, reward, cost-vector, next-state) step sequences."""
        for e in range(self.n_episodes):
            yield list(
                zip(
                    self.states[e],
                    self.actions[e],
                    self.rewards[e],
                    self.costs[e],
                    self.next_states[e],
                )
            )


def validate_model(model: CmdpModel) -> list[str]:
    """Check every model invariant; return one description per violation."""
    bad = []
    s, a = model.n_states, model.n_actions
    if model.transition.shape != (s, a, s):
        bad.append(f"transition shape {model.transition.shape} != {(s, a, s)}")
        return bad
    if np.any(model.transition < 0):
        idx = tuple(int(i) for i in np.argwhere(model.transition < 0)[0])
        bad.append(f"negative transition probability at (s,a,s')={idx}")
    row_sums = model.transition.sum(axis=2)
    off = np.argwhere(np.abs(row_sums - 1.0) > 1e-12)
    for si, ai in off[:10]:
        bad.append(
            f"transition row (s={si}, a={ai}) sums to {row_sums[si, ai]!r}, expected 1"
        )
    if np.any(model.initial_dist < 0):
        bad.append("initial_dist has negative entries")
    if abs(model.initial_dist.sum() - 1.0) > 1e-12:
        bad.append(f"initial_dist sums to {model.initial_dist.sum()!r}, expected 1")
    for i, c in enumerate(model.costs):
        if np.any(c < 0):
            bad.append(f"cost tensor {i} has negative entries")
    if len(model.costs) != len(model.cost_limits):
        bad.append(
            f"{len(model.costs)} cost tensors but {len(model.cost_limits)} cost limits"
        )
    if not 0 <= model.gamma < 1:
        bad.append(f"gamma {model.gamma} outside [0, 1)")
    if model.horizon < 1:
        bad.append(f"horizon {model.horizon} < 1")
    return bad


def _policy_transition(model: CmdpModel, policy: PolicyTable) -> np.ndarray:
    """Policy-averaged transition matrix P_pi(s, s')."""
    return np.einsum("ij,ijk->ik", policy.probs, model.transition)


def policy_values(model: CmdpModel, policy: PolicyTable, tensor: np.ndarray) -> np.ndarray:
    """Exact state values of an arbitrary (s, a, s') signal tensor under `policy`.

    Solves (I - gamma P_pi) v = x_pi directly and asserts the Bellman
    residual is below 1e-10.
    """
    probs = policy.probs
    p_pi = _policy_transition(model, policy)
    x_pi = np.einsum("ij,ij->i", probs, model.mean_signal(tensor))
    v = np.linalg.solve(np.eye(model.n_states) - model.gamma * p_pi, x_pi)
    residual = np.max(np.abs(v - (x_pi + model.gamma * p_pi @ v)))
    if residual >= 1e-10:
        raise ArithmeticError(f"Bellman residual {residual:.3e} >= 1e-10")
    return v


def evaluate(model: CmdpModel, policy: PolicyTable, signal: Signal = REWARD) -> ValueTable:
    """Exact state values of `signal` under `policy` via direct linear solve."""
    v = policy_values(model, policy, model.signal_tensor(signal))
    return ValueTable(v=v, signal_kind=signal, gamma_used=model.gamma)


def tensor_objective(model: CmdpModel, policy: PolicyTable, tensor: np.ndarray) -> float:
    """Initial-distribution-weighted value of an arbitrary signal tensor."""
    return float(model.initial_dist @ policy_values(model, policy, tensor))


def objective(model: CmdpModel, policy: PolicyTable, signal: Signal = REWARD) -> float:
    """Initial-distribution-weighted value: J = sum_s p0(s) v(s)."""
    return tensor_objective(model, policy, model.signal_tensor(signal))


def occupancy_from_policy(model: CmdpModel, policy: PolicyTable) -> OccupancyMeasure:
    """Discounted occupancy mu(s,a) = d_pi(s) pi(a|s) via direct flow solve."""
    p_pi = _policy_transition(model, policy)
    d_pi = np.linalg.solve(
        np.eye(model.n_states) - model.gamma * p_pi.T, model.initial_dist
    )
    return OccupancyMeasure(mu=d_pi[:, None] * policy.probs)


def policy_from_occupancy(mu: OccupancyMeasure) -> PolicyTable:
    """Normalize occupancy rows into a policy; zero-mass rows become uniform."""
    m = np.asarray(mu.mu, dtype=float)
    row_mass = m.sum(axis=1)
    n_actions = m.shape[1]
    probs = np.full_like(m, 1.0 / n_actions)
    has_mass = row_mass > 1e-12
    probs[has_mass] = m[has_mass] / row_mass[has_mass, None]
    return policy_from_probs(probs)


def sample_trajectories(
    model: CmdpModel, policy: PolicyTable, n_episodes: int, seed: int
) -> TrajectoryBatch:
    """Sample `n_episodes` horizon-length episodes, deterministic in `seed`."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    horizon = model.horizon
    n_s, m = model.n_states, model.n_constraints
    probs = policy.probs
    pol_cdf = probs.cumsum(axis=1)
    trans_cdf = model.transition.cumsum(axis=2)

    states = np.empty((n_episodes, horizon), dtype=np.int64)
    actions = np.empty_like(states)
    next_states = np.empty_like(states)
    rewards = np.empty((n_episodes, horizon))
    cost_steps = np.empty((n_episodes, horizon, m))

    s = np.searchsorted(model.initial_dist.cumsum(), rng.random(n_episodes), side="right")
    s = np.minimum(s, n_s - 1)
    ep = np.arange(n_episodes)
    for t in range(horizon):
        a = (pol_cdf[s] < rng.random(n_episodes)[:, None]).sum(axis=1)
        a = np.minimum(a, probs.shape[1] - 1)
        nxt = (trans_cdf[s, a] < rng.random(n_episodes)[:, None]).sum(axis=1)
        nxt = np.minimum(nxt, n_s - 1)
        states[:, t] = s
        actions[:, t] = a
        next_states[:, t] = nxt
        rewards[:, t] = model.reward[s, a, nxt]
        for i in range(m):
            cost_steps[ep, t, i] = model.costs[i][s, a, nxt]
        s = nxt

    disc = model.gamma ** np.arange(horizon)
    batch = TrajectoryBatch(
        states=states,
        actions=actions,
        rewards=rewards,
        costs=cost_steps,
        next_states=next_states,
        seed=seed,
        disc_returns=rewards @ disc,
        undisc_returns=rewards.sum(axis=1),
        disc_costs=np.einsum("etm,t->em", cost_steps, disc),
        undisc_costs=cost_steps.sum(axis=1),
    )
    return batch
