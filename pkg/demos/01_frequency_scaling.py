"""How the discount factor and the number of environments follow the control frequency.

Fixing the discount half-life in seconds (3 s) keeps the effective horizon
constant across frequencies; fixing the batch size in control steps keeps
the amount of experience per update constant.
"""

from lfmc.ppo import discount_for, half_life_steps, n_envs_for

print("f_t [Hz]   gamma       half-life [steps]   n_env (b_s = 48000, N = 1 s)")
for f in (5, 8, 10, 25, 50, 100, 200):
    g = discount_for(f, 3.0)
    print(f"{f:>7}   {g:.8f}   {half_life_steps(g):>17.1f}   {n_envs_for(48000, f, 1):>6}")

# a step-based discount of 0.98 means a different horizon at every frequency
print(f"\ngamma = 0.98 halves after {half_life_steps(0.98):.1f} control steps")
