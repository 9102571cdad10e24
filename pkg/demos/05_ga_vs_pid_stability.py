"""
GA versus PID multiplier stability.

PI control (K_P = K_I = 1e-4, K_D = 0) produces far steadier multiplier
trajectories than gradient ascent, but steadiness is not the same thing as
fewer violations: the integral gain is so small that the multiplier can
take most of training to reach its working range, mirroring the mixed
results the two update rules show in practice.
"""
from cmdplab import ga_config, pid_config
from cmdplab.harness import run_stability_compare
from cmdplab.trainer import TrainConfig

base = TrainConfig(mode="sampled", steps_per_epoch=3000, inner_iters=10,
                   batch_size=512, learning_rate=0.3, constraint_signal="discounted")

for task in ("chain-speed", "grid-hazard-small"):
    report = run_stability_compare(
        task, ga_config(), pid_config(), seeds=[0, 1, 2], epochs=400,
        train_config=base, workers=2,
    )
    print(f"\n{task} (limit {report.cost_limit:.3f})")
    print(f"{'method':>6} {'best return':>12} {'violations':>11} {'lambda std':>11}")
    for m in (report.ga, report.pid):
        best = "--" if m.best_return is None else f"{m.best_return:.3f}"
        rate = "--" if m.violation_rate is None else f"{100 * m.violation_rate:.1f}%"
        print(f"{m.method:>6} {best:>12} {rate:>11} {m.lambda_std:11.4f}")
    if report.pid.violation_rate is None:
        print("  (PID never reached the cost limit here; its tiny integral gain "
              "is still ramping)")
