"""cmdplab: a tabular constrained-MDP laboratory for Lagrangian safe RL.

Exact linear-programming oracles, three Lagrange-multiplier strategies
(fixed, gradient ascent, PID control), two-timescale dual-descent trainers,
and an experiment harness for multiplier profiles, cost-limit sweeps and
stability studies.
"""

__version__ = "0.1.0"

from .cmdp import (
    CmdpModel,
    OccupancyMeasure,
    PolicyTable,
    TrajectoryBatch,
    ValueTable,
    cost,
    evaluate,
    objective,
    occupancy_from_policy,
    policy_from_occupancy,
    sample_trajectories,
    uniform_policy,
    validate_model,
)
from .multiplier import (
    ControllerConfig,
    ControllerState,
    PenaltyObservation,
    fixed_config,
    fixed_step,
    ga_config,
    ga_step,
    make_controller,
    penalty_loss,
    pid_config,
    pid_step,
)
from .harness import (
    LambdaProfile,
    StabilityReport,
    best_return_under_constraint,
    find_lambda_star,
    run_cost_limit_sweep,
    run_lambda_profile,
    run_stability_compare,
    smooth,
    tail_average,
    violation_rate_after_first_satisfaction,
)
from .oracle import (
    InfeasibleModelError,
    OracleSolution,
    brute_force,
    dual_function,
    lambda_star_bisection,
    lambda_star_with_interval,
    solve_lp,
)
from .records import load_train_config, save_run_record
from .tasks import (
    TaskSpec,
    make_chain_speed,
    make_grid_hazard,
    make_grid_two_goal,
    make_random_cmdp,
    model_from_json,
    model_to_json,
    registry,
    task_by_name,
)
from .trainer import (
    DivergenceError,
    EpochMetrics,
    RunRecord,
    TrainConfig,
    exact_dual_run,
    gae_advantages,
    ppo_lag_epoch,
    shaped_signal,
    train,
    value_iteration,
)
