"""Train a small 10 Hz blind policy and evaluate it.

    python3 demos/03_train_and_evaluate.py [iterations] [output_dir]

Around 300 iterations (several minutes on one core) give a walking policy;
a handful is enough to see the pipeline run end to end.
"""

import sys

from lfmc.evaluation import eval_env_config, gait_sequence, run_rollouts, tracking_ratio
from lfmc.ppo import TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 20
out_dir = sys.argv[2] if len(sys.argv) > 2 else "runs/demo-train"

cfg = TrainConfig(frequency=10, batch_size=4800, iterations=iterations, init_log_std=-1.0, checkpoint_interval=0)
print(f"gamma {cfg.gamma:.6f}, {cfg.n_env} environments, {cfg.steps_per_iteration} steps each per iteration")


def log(row):
    if row["iteration"] % 10 == 0 or row["iteration"] == iterations - 1:
        print(f"iter {row['iteration']:4d}  mean return {row['mean_return']:8.3f}  "
              f"failure rate {row['failure_rate']:.2f}")


result = train(cfg, out_dir=out_dir, log=log)
print("checkpoint:", result.checkpoint)

env = eval_env_config(cfg.env_config(), duration=10.0)
batch = run_rollouts(result.policy, env, 20, seed=0, duration=10.0)
print(f"success rate {batch.success_rate:.2f}, tracking {tracking_ratio(batch).mean():.3f} of the ceiling")

gait = gait_sequence(result.policy, eval_env_config(cfg.env_config(), duration=5.0), 5.0, command=0.5)
print(f"gait at 0.5 m/s: stance {gait.mean_stance} s, swing {gait.mean_swing} s")
