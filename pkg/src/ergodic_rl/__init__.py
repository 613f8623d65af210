"""Deep reinforcement learning in multiplicative, non-ergodic environments.

Two decision problems compound wealth multiplicatively: a safe-versus-risky
toy gamble learned with deep Q-learning, and a continuous portfolio fraction
learned with an actor-critic.  Repeating the decision ``M`` times per episode
exposes the learner to path dependence; the sweeps in
:mod:`ergodic_rl.experiments` measure how the learned policy moves between
the expected-value optimum and the time-average (Kelly) optimum.
"""

from .environments import (
    DomainError,
    PortfolioConfig,
    RewardMode,
    ToyAction,
    ToyConfig,
    ergodicity_diagnostic,
    random_source,
    run_portfolio_episode,
    run_toy_episode,
)
from .experiments import (
    ExperimentKind,
    SweepConfig,
    SweepResult,
    compute_mse_report,
    derive_seed,
    extract_indifference,
    run_full_policy_experiment,
    run_portfolio_sweep,
    run_toy_sweep,
)
from .theory import (
    PolicyCurve,
    PolicyKind,
    SigmoidParams,
    TheoreticalPolicy,
    ev_threshold_portfolio,
    indifference_expected_toy,
    indifference_time_toy,
    kelly_fraction,
    kelly_objective,
    policy_mse,
    sigmoid_fit,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ExperimentKind",
    "PolicyCurve",
    "PolicyKind",
    "PortfolioConfig",
    "RewardMode",
    "SigmoidParams",
    "SweepConfig",
    "SweepResult",
    "TheoreticalPolicy",
    "ToyAction",
    "ToyConfig",
    "compute_mse_report",
    "derive_seed",
    "ergodicity_diagnostic",
    "ev_threshold_portfolio",
    "extract_indifference",
    "indifference_expected_toy",
    "indifference_time_toy",
    "kelly_fraction",
    "kelly_objective",
    "policy_mse",
    "random_source",
    "run_full_policy_experiment",
    "run_portfolio_episode",
    "run_portfolio_sweep",
    "run_toy_episode",
    "run_toy_sweep",
    "sigmoid_fit",
]
