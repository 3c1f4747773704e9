"""Compare trained policies across control frequencies.

    python3 demos/04_compare_frequencies.py artifacts/acceptance/f010 artifacts/acceptance/f100 ...

Each directory must hold a ``policy_final.txt`` trained at the frequency in
its name (``f<Hz>``).  Prints success rate, latency limit and mean stance / swing
durations for each.
"""

import re
import sys
from pathlib import Path

from lfmc.evaluation import eval_env_config, gait_sequence, latency_limit, run_rollouts
from lfmc.policy import load_policy
from lfmc.ppo import TrainConfig

print("f_t [Hz]   SR     latency [ms]   stance [s]   swing [s]")
for d in map(Path, sys.argv[1:]):
    f = float(re.search(r"f0*(\d+)", d.name).group(1))
    cfg = TrainConfig(frequency=f)
    env = eval_env_config(cfg.env_config(), duration=10.0)
    pol = load_policy(str(d / "policy_final.txt"), nominal=cfg.env.model.nominal_joints)
    sr = run_rollouts(pol, env, 20, seed=0, duration=10.0).success_rate
    lat = latency_limit(pol, env, n_rollouts=20)
    gait = gait_sequence(pol, eval_env_config(cfg.env_config(), duration=5.0), 5.0, command=0.5, n_rollouts=4)
    print(f"{f:>8g}   {sr:.2f}   {lat.limit_ms:>12g}   {gait.mean_stance_duration:>10.3f}   "
          f"{gait.mean_swing.mean():>9.3f}")
