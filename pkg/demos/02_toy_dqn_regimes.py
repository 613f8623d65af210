"""Deep Q-learning agents on the toy model, one round versus many.

Trains a small population for each repetition count M across the p grid and
fits a sigmoid to P(safe).  With M = 1 the switch point sits near p_E; the
compounded episodes move it down.  Takes a few minutes on one core.
"""

from dataclasses import replace

from ergodic_rl import extract_indifference, run_toy_sweep
from ergodic_rl.config import profile_config
from ergodic_rl.theory import indifference_expected_toy, indifference_time_toy

cfg = profile_config("toy_dqn", "desk").sweep
cfg = replace(cfg, n_agents=4)
toy = cfg.toy
p_e = indifference_expected_toy(toy.r1, toy.r2, toy.r_safe)
p_t = indifference_time_toy(toy.r1, toy.r2, toy.r_safe)

result = run_toy_sweep(cfg)
ind = extract_indifference(result, p_e, p_t)

print(f"p_E = {p_e:.3f}   p_T = {p_t:.3f}")
for M in cfg.m_values:
    curve = result.aggregates[M]["mean"]
    print(f"M={M:<3d} p0 = {ind.p0(M):.3f}   P(safe) on grid: " + " ".join(f"{v:.1f}" for v in curve))
