"""Actor-critic agents choosing an investment fraction.

The bet pays x3 or x0.2 on the stake.  Expected-value reasoning says go
all-in once p > 2/7; the Kelly fraction grows gradually with p.  Each agent
trains at one fixed p and we compare the learned median fraction with both.
"""

from dataclasses import replace

from ergodic_rl import compute_mse_report, run_portfolio_sweep
from ergodic_rl.config import profile_config
from ergodic_rl.experiments import portfolio_theory_curves

cfg = profile_config("portfolio_ac", "desk").sweep
cfg = replace(cfg, m_values=(1,), n_agents=4, episodes=5000)
result = run_portfolio_sweep(cfg)
ev, kelly = portfolio_theory_curves(cfg.portfolio, result.p_grid)
mse = compute_mse_report(result, ev, kelly)

print("    p   learned  expected-value  Kelly")
med = result.aggregates[1]["median"]
for p, f, e, k in zip(result.p_grid, med, ev.values, kelly.values):
    print(f"{p:5.2f}   {f:6.3f}   {e:6.0f}          {k:6.3f}")
print(f"MSE vs expected value {mse.mse_ev[1]:.4f}, vs Kelly {mse.mse_kelly[1]:.4f}")
