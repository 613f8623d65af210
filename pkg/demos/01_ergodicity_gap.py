"""Why the expected value misleads in a multiplicative game.

A gamble that halves or doubles wealth with equal odds has a positive
expected factor (1.25) but zero typical growth.  Simulate many paths and
compare the two averages, then print the decision thresholds that follow.
"""

import math

from ergodic_rl import (
    ToyConfig,
    ergodicity_diagnostic,
    indifference_expected_toy,
    indifference_time_toy,
    random_source,
)

toy = ToyConfig(p=0.5)
d = ergodicity_diagnostic(toy, T=1000, n=1000, rng=random_source(0))

print("risky gamble: x0.5 or x2.0 with equal odds")
print(f"time-average growth per round     {d.time_avg_growth:+.4f}  (closed form {d.time_avg_theory:+.4f})")
print(f"ensemble-average growth per round {d.ensemble_avg_growth:+.4f}  (closed form {math.log(1.25):+.4f})")
print(f"sample mean of W_T over the paths {d.naive_ensemble_growth:+.4f}  (a few lucky paths dominate)")

print()
print("switch to the safe x1.2 action once the worst-case probability exceeds")
print(f"  p_E = {indifference_expected_toy(toy.r1, toy.r2, toy.r_safe):.4f}  if you maximise the expected factor")
print(f"  p_T = {indifference_time_toy(toy.r1, toy.r2, toy.r_safe):.4f}  if you maximise growth along your own path")
