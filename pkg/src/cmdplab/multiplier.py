"""Lagrange multiplier update strategies: fixed, gradient ascent, PID.

Each controller is a pure state machine: `step(state, obs) -> state`. The
trainer reads `state.lam` *before* stepping the controller for the same
epoch (slow-timescale convention), so the multiplier used for a policy
update is always the one produced by the previous epoch's observation.

Gradient ascent:   lam' = (lam + eta * xi)_+
PID control:       lam' = clamp(kp * p + ki * I' + kd * deriv, 0, cap)
                   with I' = (I + xi)_+ and deriv the clamped increase of
                   the (EMA-smoothed) cost estimate over `d_delay` epochs.

The proportional input and the cost estimate feeding the derivative are
EMA-smoothed with `ema_alpha` (pass-through when ema_alpha = 0). The cap
`penalty_max` applies whenever it is configured (not None); the stock PID
configuration caps at 100 while the stock GA configuration leaves the cap
unset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

CONTROLLER_KINDS = ("fixed", "ga", "pid")

_CONFIG_KEYS = (
    "kind",
    "fixed_lambda",
    "eta",
    "kp",
    "ki",
    "kd",
    "d_delay",
    "ema_alpha",
    "penalty_max",
    "lambda_init",
)


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "ga"
    fixed_lambda: float = 0.0
    eta: float = 0.035
    kp: float = 1e-4
    ki: float = 1e-4
    kd: float = 0.0
    d_delay: int = 10
    ema_alpha: float = 0.95
    penalty_max: Optional[float] = None
    lambda_init: float = 0.001

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"controller kind must be one of {CONTROLLER_KINDS}, got {self.kind!r}")
        if min(self.eta, self.kp, self.ki, self.kd, self.lambda_init) < 0:
            raise ValueError("gains, eta and lambda_init must be non-negative")
        if not 0.0 <= self.ema_alpha < 1.0:
            raise ValueError("ema_alpha must lie in [0, 1)")
        if self.d_delay < 1:
            raise ValueError("d_delay must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _CONFIG_KEYS}

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        unknown = set(data) - set(_CONFIG_KEYS)
        if unknown:
            raise KeyError(f"unknown controller config keys: {sorted(unknown)}")
        return cls(**data)


def fixed_config(lam: float) -> ControllerConfig:
    return ControllerConfig(kind="fixed", fixed_lambda=lam)


def ga_config(eta: float = 0.035, lambda_init: float = 0.001) -> ControllerConfig:
    return ControllerConfig(kind="ga", eta=eta, lambda_init=lambda_init)


def pid_config(
    kp: float = 1e-4,
    ki: float = 1e-4,
    kd: float = 0.0,
    d_delay: int = 10,
    ema_alpha: float = 0.95,
    penalty_max: Optional[float] = 100.0,
    lambda_init: float = 0.001,
) -> ControllerConfig:
    return ControllerConfig(
        kind="pid",
        kp=kp,
        ki=ki,
        kd=kd,
        d_delay=d_delay,
        ema_alpha=ema_alpha,
        penalty_max=penalty_max,
        lambda_init=lambda_init,
    )


@dataclass(frozen=True)
class PenaltyObservation:
    """One epoch's cost estimate against its limit (single constraint)."""

    cost_estimate: float
    cost_limit: float
    epoch_index: int = 0


@dataclass(frozen=True)
class ControllerState:
    config: ControllerConfig
    lam: float
    integral: float = 0.0
    p_ema: float = 0.0
    cost_ema: float = 0.0
    delayed_costs: tuple[float, ...] = ()


def make_controller(config: ControllerConfig) -> ControllerState:
    lam = config.fixed_lambda if config.kind == "fixed" else config.lambda_init
    return ControllerState(config=config, lam=lam)


def penalty_loss(obs: PenaltyObservation) -> float:
    """Constraint residual xi = J^C - d."""
    return obs.cost_estimate - obs.cost_limit


def _capped(lam: float, penalty_max: Optional[float]) -> float:
    if penalty_max is not None:
        lam = min(lam, penalty_max)
    return lam


def fixed_step(state: ControllerState, obs: PenaltyObservation) -> ControllerState:
    if state.config.kind != "fixed":
        raise ValueError("fixed_step requires a fixed-kind controller")
    return state


def ga_step(state: ControllerState, obs: PenaltyObservation) -> ControllerState:
    if state.config.kind != "ga":
        raise ValueError("ga_step requires a ga-kind controller")
    xi = penalty_loss(obs)
    lam = max(0.0, state.lam + state.config.eta * xi)
    return replace(state, lam=_capped(lam, state.config.penalty_max))


def pid_step(state: ControllerState, obs: PenaltyObservation) -> ControllerState:
    if state.config.kind != "pid":
        raise ValueError("pid_step requires a pid-kind controller")
    cfg = state.config
    xi = penalty_loss(obs)
    alpha = cfg.ema_alpha
    p_ema = alpha * state.p_ema + (1.0 - alpha) * xi
    cost_ema = alpha * state.cost_ema + (1.0 - alpha) * obs.cost_estimate
    # Buffer holds the smoothed estimates for epochs k-d_delay .. k; the
    # derivative is defined once it is full, i.e. after d_delay epochs.
    buffer = (state.delayed_costs + (cost_ema,))[-(cfg.d_delay + 1):]
    integral = max(0.0, state.integral + xi)
    if len(buffer) == cfg.d_delay + 1:
        derivative = max(0.0, cost_ema - buffer[0])
    else:
        derivative = 0.0
    lam = max(0.0, cfg.kp * p_ema + cfg.ki * integral + cfg.kd * derivative)
    return replace(
        state,
        lam=_capped(lam, cfg.penalty_max),
        integral=integral,
        p_ema=p_ema,
        cost_ema=cost_ema,
        delayed_costs=buffer,
    )


_STEPPERS = {"fixed": fixed_step, "ga": ga_step, "pid": pid_step}


def step(state: ControllerState, obs: PenaltyObservation) -> ControllerState:
    """Dispatch to the stepper matching the controller kind."""
    return _STEPPERS[state.config.kind](state, obs)
