"""Two-timescale dual-descent trainers.

Fast timescale: policy improvement under the current multipliers, either by
exact value iteration on the shaped signal (`exact_dual` mode) or by
clipped-surrogate ascent on sampled advantages (`sampled` mode, the tabular
analog of PPO-Lag). Slow timescale: one controller step per epoch on the
constraint residual.

The multiplier used for an epoch's policy update is the one read *before*
the controller step of the same epoch, and it is the one logged for that
epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cmdp import (
    CmdpModel,
    PolicyTable,
    TrajectoryBatch,
    ValueTable,
    cost,
    deterministic_policy,
    evaluate,
    policy_values,
    sample_trajectories,
    softmax_rows,
    uniform_policy,
)
from .multiplier import (
    ControllerConfig,
    ControllerState,
    PenaltyObservation,
    ga_config,
    make_controller,
    step as controller_step,
)

TRAIN_MODES = ("exact_dual", "sampled")
CONSTRAINT_SIGNALS = ("discounted", "episodic_mean")

#: Value-iteration tolerance used by exact-dual training and the oracles.
DEFAULT_VI_TOL = 1e-9


class DivergenceError(RuntimeError):
    """Raised when a policy update produces non-finite logits."""


# ---------------------------------------------------------------------------
# Configuration and run records
# ---------------------------------------------------------------------------

_TRAIN_CONFIG_KEYS = (
    "task",
    "controller",
    "mode",
    "epochs",
    "steps_per_epoch",
    "inner_iters",
    "clip_ratio",
    "gae_lambda",
    "gamma_r",
    "gamma_c",
    "learning_rate",
    "target_kl",
    "entropy_coef",
    "batch_size",
    "constraint_signal",
    "seed",
)


@dataclass(frozen=True)
class TrainConfig:
    task: str = "chain-speed"
    controller: ControllerConfig = field(default_factory=ga_config)
    mode: str = "sampled"
    epochs: int = 150
    steps_per_epoch: int = 4000
    inner_iters: int = 40
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    gamma_r: float = 0.99
    gamma_c: float = 0.99
    learning_rate: float = 0.3
    target_kl: float = 0.02
    entropy_coef: float = 0.0
    batch_size: int = 64
    constraint_signal: str = "episodic_mean"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.constraint_signal not in CONSTRAINT_SIGNALS:
            raise ValueError(
                f"constraint_signal must be one of {CONSTRAINT_SIGNALS}, got {self.constraint_signal!r}"
            )
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        for name in ("gamma_r", "gamma_c"):
            g = getattr(self, name)
            if not 0.0 <= g < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in _TRAIN_CONFIG_KEYS}
        d["controller"] = self.controller.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(_TRAIN_CONFIG_KEYS)
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "controller" in kwargs and isinstance(kwargs["controller"], dict):
            kwargs["controller"] = ControllerConfig.from_dict(kwargs["controller"])
        return cls(**kwargs)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    steps: int
    return_mean: float
    cost_mean: float
    lam: float
    xi: float
    kl: float
    inner_iters_used: int


@dataclass(frozen=True)
class RunRecord:
    config: TrainConfig
    metrics: tuple[EpochMetrics, ...]
    wall_time: float
    diverged: bool = False

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.metrics], dtype=float)


# ---------------------------------------------------------------------------
# Shaped signal and exact inner maximization
# ---------------------------------------------------------------------------


def shaped_signal(model: CmdpModel, lambda_vec: Sequence[float]) -> np.ndarray:
    """Lagrangian reward tensor r - sum_i lambda_i * C_i, indexed (s, a, s')."""
    lam = np.asarray(lambda_vec, dtype=float)
    if lam.shape != (model.n_constraints,):
        raise ValueError(f"lambda_vec must have length {model.n_constraints}")
    if np.any(lam < 0):
        raise ValueError("lambda_vec must be non-negative")
    shaped = model.reward.copy()
    for lam_i, c in zip(lam, model.costs):
        shaped -= lam_i * c
    return shaped


def value_iteration(
    model: CmdpModel,
    signal: np.ndarray,
    tol: float = DEFAULT_VI_TOL,
    v0: Optional[np.ndarray] = None,
) -> tuple[ValueTable, PolicyTable]:
    """Optimal values and greedy policy for an arbitrary (s, a, s') signal.

    Sweeps stop once the sup-norm update drops below tol*(1-gamma)/gamma.
    Ties in the greedy argmax break toward the lowest action index. The
    returned ValueTable holds the exact value of the greedy policy (direct
    solve), not the final iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mean_sig = model.mean_signal(signal)
    gamma = model.gamma
    thresh = tol * (1.0 - gamma) / gamma if gamma > 0 else np.inf
    v = np.zeros(model.n_states) if v0 is None else np.asarray(v0, dtype=float).copy()
    p_flat = model.transition.reshape(-1, model.n_states)
    shape = (model.n_states, model.n_actions)
    for _ in range(1_000_000):
        q = mean_sig + gamma * (p_flat @ v).reshape(shape)
        v_next = q.max(axis=1)
        delta = np.max(np.abs(v_next - v))
        v = v_next
        if delta < thresh:
            break
    else:
        raise ArithmeticError("value iteration failed to converge")
    greedy = np.argmax(mean_sig + gamma * (p_flat @ v).reshape(shape), axis=1)
    policy = deterministic_policy(greedy, model.n_actions)
    v_exact = policy_values(model, policy, signal)
    return ValueTable(v=v_exact, signal_kind="shaped", gamma_used=gamma), policy


# ---------------------------------------------------------------------------
# Exact-dual training
# ---------------------------------------------------------------------------


def _read_lambdas(states: Sequence[ControllerState]) -> np.ndarray:
    return np.array([s.lam for s in states], dtype=float)


def exact_dual_run(
    task,
    controller_config: ControllerConfig,
    epochs: int,
    tol: float = DEFAULT_VI_TOL,
    config: Optional[TrainConfig] = None,
) -> RunRecord:
    """Alternate exact inner maximization with one controller step per epoch.

    The inner problem is solved to convergence every epoch, so the fast
    timescale is exactly converged and the only dynamics left are the
    multiplier's. All quantities are exact discounted objectives.
    """
    model, task_name = _resolve_task(task)
    if config is None:
        config = TrainConfig(
            task=task_name, controller=controller_config, mode="exact_dual", epochs=epochs,
            constraint_signal="discounted",
        )
    controllers = [make_controller(controller_config) for _ in range(model.n_constraints)]
    metrics: list[EpochMetrics] = []
    t0 = time.perf_counter()
    v_warm: Optional[np.ndarray] = None
    for k in range(epochs):
        lam_vec = _read_lambdas(controllers)
        vt, policy = value_iteration(model, shaped_signal(model, lam_vec), tol, v0=v_warm)
        v_warm = vt.v
        j_r = float(model.initial_dist @ policy_values(model, policy, model.reward))
        j_c = np.array(
            [float(model.initial_dist @ evaluate(model, policy, cost(i)).v) for i in range(model.n_constraints)]
        )
        xi = j_c - model.cost_limits
        controllers = [
            controller_step(cs, PenaltyObservation(float(j_c[i]), float(model.cost_limits[i]), k))
            for i, cs in enumerate(controllers)
        ]
        metrics.append(
            EpochMetrics(
                epoch=k,
                steps=0,
                return_mean=j_r,
                cost_mean=float(j_c[0]),
                lam=float(lam_vec[0]),
                xi=float(xi[0]),
                kl=0.0,
                inner_iters_used=1,
            )
        )
    return RunRecord(
        config=config, metrics=tuple(metrics), wall_time=time.perf_counter() - t0
    )


# ---------------------------------------------------------------------------
# Sampled mode: GAE and the clipped surrogate
# ---------------------------------------------------------------------------


def gae_advantages(
    batch: TrajectoryBatch,
    values: ValueTable,
    gamma: float,
    lam: float,
    signal="reward",
) -> np.ndarray:
    """Generalized advantage estimates per step, shape (n_episodes, T).

    Episodes are horizon truncations of a continuing process, so the final
    step always bootstraps from the value table at its successor state.
    """
    if signal == "reward":
        x = batch.rewards
    else:
        _, i = signal
        x = batch.costs[:, :, i]
    v = values.v
    deltas = x + gamma * v[batch.next_states] - v[batch.states]
    adv = np.empty_like(deltas)
    acc = np.zeros(deltas.shape[0])
    for t in range(deltas.shape[1] - 1, -1, -1):
        acc = deltas[:, t] + gamma * lam * acc
        adv[:, t] = acc
    return adv


def penalized_advantage(
    adv_r: np.ndarray, adv_costs: Sequence[np.ndarray], lam_vec: Sequence[float]
) -> np.ndarray:
    """Multiplier-weighted advantage (A_r - sum_i lam_i A_ci) / (1 + sum_i lam_i).

    The 1/(1+lam) normalization bounds the update scale as the multiplier
    grows; at lam = 0 this is exactly the reward advantage.
    """
    lam = np.asarray(lam_vec, dtype=float)
    out = np.asarray(adv_r, dtype=float).copy()
    for lam_i, adv_c in zip(lam, adv_costs):
        out -= lam_i * np.asarray(adv_c)
    return out / (1.0 + lam.sum())


def clipped_surrogate(
    logits: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    old_logp: np.ndarray,
    clip_ratio: float,
    entropy_coef: float = 0.0,
) -> float:
    """Mean clipped-surrogate objective (to be ascended) at `logits`."""
    row = logits[states]
    logp = row[np.arange(len(states)), actions] - _logsumexp_rows(row)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    obj = np.minimum(ratio * advantages, clipped * advantages).mean()
    if entropy_coef != 0.0:
        probs = softmax_rows(row)
        entropy = -(probs * np.log(probs)).sum(axis=1)
        obj += entropy_coef * entropy.mean()
    return float(obj)


def clipped_surrogate_grad(
    logits: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    old_logp: np.ndarray,
    clip_ratio: float,
    entropy_coef: float = 0.0,
) -> np.ndarray:
    """Analytic gradient of `clipped_surrogate` with respect to all logits."""
    n = len(states)
    row = logits[states]
    probs = softmax_rows(row)
    logp = row[np.arange(n), actions] - _logsumexp_rows(row)
    ratio = np.exp(logp - old_logp)
    # Samples pushed outside the clip window on their adverse side carry no
    # gradient; at the window boundary the unclipped branch is active.
    active = ~(
        ((advantages >= 0) & (ratio > 1.0 + clip_ratio))
        | ((advantages < 0) & (ratio < 1.0 - clip_ratio))
    )
    weight = np.where(active, advantages * ratio, 0.0) / n
    per_sample = -weight[:, None] * probs
    per_sample[np.arange(n), actions] += weight
    if entropy_coef != 0.0:
        logrow = np.log(probs)
        h = -(probs * logrow).sum(axis=1)
        per_sample += (entropy_coef / n) * (-probs * (logrow + h[:, None]))
    grad = np.zeros_like(logits)
    np.add.at(grad, states, per_sample)
    return grad


def _logsumexp_rows(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=1)
    return m + np.log(np.exp(rows - m[:, None]).sum(axis=1))


def _mean_kl(old_logits, new_logits, unique_states, weights) -> float:
    """Batch-weighted exact KL(pi_old || pi_new) over the visited states.

    Probabilities are floored so a fully saturated update yields a huge but
    finite KL; the early-stop guard must keep working in that regime.
    """
    p_old = softmax_rows(old_logits[unique_states])
    p_new = softmax_rows(new_logits[unique_states])
    log_ratio = np.log(np.clip(p_old, 1e-300, None)) - np.log(np.clip(p_new, 1e-300, None))
    kl_per_state = (p_old * log_ratio).sum(axis=1)
    return float(kl_per_state @ weights)


def _batch_estimates(batch: TrajectoryBatch, constraint_signal: str):
    if constraint_signal == "discounted":
        return float(batch.disc_returns.mean()), batch.disc_costs.mean(axis=0)
    return float(batch.undisc_returns.mean()), batch.undisc_costs.mean(axis=0)


def ppo_lag_epoch(
    model: CmdpModel,
    policy: PolicyTable,
    controller_states: Sequence[ControllerState],
    config: TrainConfig,
    seed: int,
    epoch_index: int = 0,
) -> tuple[PolicyTable, list[ControllerState], EpochMetrics]:
    """One sampled epoch: rollout, controller step, clipped-surrogate ascent.

    The policy update uses the multipliers read before the controller step,
    the penalized advantage (A_r - sum_i lam_i A_ci) / (1 + sum_i lam_i),
    and stops early once the exact batch KL exceeds target_kl (rolling back
    the offending minibatch if it overshoots 1.5x target_kl).
    """
    if config.mode != "sampled":
        raise ValueError("ppo_lag_epoch requires config.mode == 'sampled'")
    ss = np.random.SeedSequence((seed, epoch_index))
    sample_seed, shuffle_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    n_episodes = max(1, config.steps_per_epoch // model.horizon)
    batch = sample_trajectories(model, policy, n_episodes, sample_seed)

    return_mean, cost_means = _batch_estimates(batch, config.constraint_signal)
    lam_vec = _read_lambdas(controller_states)
    xi = cost_means - model.cost_limits
    new_controllers = [
        controller_step(
            cs, PenaltyObservation(float(cost_means[i]), float(model.cost_limits[i]), epoch_index)
        )
        for i, cs in enumerate(controller_states)
    ]

    v_r = evaluate(model, policy, "reward")
    adv_r = gae_advantages(batch, v_r, config.gamma_r, config.gae_lambda, "reward")
    adv_costs = [
        gae_advantages(
            batch, evaluate(model, policy, cost(i)), config.gamma_c, config.gae_lambda, cost(i)
        )
        for i in range(model.n_constraints)
    ]
    adv = penalized_advantage(adv_r, adv_costs, lam_vec)

    states = batch.states.ravel()
    actions = batch.actions.ravel()
    advantages = adv.ravel()
    old_logits = policy.logits
    row = old_logits[states]
    old_logp = row[np.arange(len(states)), actions] - _logsumexp_rows(row)

    unique_states, counts = np.unique(states, return_counts=True)
    kl_weights = counts / counts.sum()

    rng = np.random.default_rng(shuffle_seed)
    logits = old_logits.copy()
    n = len(states)
    kl = 0.0
    iters_used = 0
    stop = False
    for _ in range(config.inner_iters):
        iters_used += 1
        order = rng.permutation(n)
        pass_start = logits.copy()
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            before = logits[unique_states].copy()
            grad = clipped_surrogate_grad(
                logits,
                states[idx],
                actions[idx],
                advantages[idx],
                old_logp[idx],
                config.clip_ratio,
                config.entropy_coef,
            )
            logits += config.learning_rate * grad
            kl = _mean_kl(old_logits, logits, unique_states, kl_weights)
            if kl > config.target_kl:
                if kl > 1.5 * config.target_kl:
                    logits[unique_states] = before
                    kl = _mean_kl(old_logits, logits, unique_states, kl_weights)
                stop = True
                break
        if stop:
            break
        if np.max(np.abs(logits - pass_start)) < 1e-7:
            break  # surrogate has plateaued; further passes are no-ops

    if not np.all(np.isfinite(logits)):
        raise DivergenceError(f"non-finite logits at epoch {epoch_index}")

    metrics = EpochMetrics(
        epoch=epoch_index,
        steps=batch.n_steps,
        return_mean=return_mean,
        cost_mean=float(cost_means[0]),
        lam=float(lam_vec[0]),
        xi=float(xi[0]),
        kl=kl,
        inner_iters_used=iters_used,
    )
    return PolicyTable(logits), new_controllers, metrics


def sampled_run(task, config: TrainConfig) -> RunRecord:
    """Repeated ppo_lag_epoch under `config`; deterministic in config.seed."""
    model, _ = _resolve_task(task)
    policy = uniform_policy(model.n_states, model.n_actions)
    controllers = [make_controller(config.controller) for _ in range(model.n_constraints)]
    metrics: list[EpochMetrics] = []
    diverged = False
    t0 = time.perf_counter()
    steps_total = 0
    for k in range(config.epochs):
        try:
            policy, controllers, em = ppo_lag_epoch(
                model, policy, controllers, config, config.seed, k
            )
        except DivergenceError:
            diverged = True
            break
        steps_total += em.steps
        metrics.append(replace(em, steps=steps_total))
    return RunRecord(
        config=config,
        metrics=tuple(metrics),
        wall_time=time.perf_counter() - t0,
        diverged=diverged,
    )


def train(config: TrainConfig) -> RunRecord:
    """Top-level entry point dispatching on config.mode."""
    if config.mode == "exact_dual":
        return exact_dual_run(
            config.task, config.controller, config.epochs, config=config
        )
    return sampled_run(config.task, config)


def _resolve_task(task) -> tuple[CmdpModel, str]:
    """Accept a task name, TaskSpec, or bare CmdpModel."""
    if isinstance(task, CmdpModel):
        return task, "custom"
    if isinstance(task, str):
        from .tasks import task_by_name

        spec = task_by_name(task)
        return spec.model, spec.name
    return task.model, task.name
