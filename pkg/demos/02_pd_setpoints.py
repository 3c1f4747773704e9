"""PD joints tracking a sinusoid whose setpoint is updated at 5 Hz or 200 Hz.

At 5 Hz every gain has time to settle before the next setpoint arrives, so
the joints reach almost the same state whatever kp is; at 200 Hz the gain
shapes the whole trajectory.
"""

from lfmc.evaluation import pd_toy_study

res = pd_toy_study(kp_list=(50.0, 65.0, 80.0, 95.0), kd=2.0, update_frequencies=(5.0, 200.0))
for f in res.frequencies:
    print(f"{f:>5g} Hz updates: spread across gains {res.spread[f]:.5f} rad "
          f"({100 * res.spread[f] / res.amplitude:.2f} % of the amplitude)")

t, setpoint, q = res.traces[5.0]
print("\n t [s]  setpoint  " + "  ".join(f"kp={k:g}" for k in res.kp_list))
for i in range(0, len(t), 80):
    print(f"{t[i]:5.2f}  {setpoint[i]:8.4f}  " + "  ".join(f"{x:7.4f}" for x in q[i]))
