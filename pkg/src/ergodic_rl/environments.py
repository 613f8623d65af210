"""Multiplicative wealth environments.

Two games share the same compounding mechanic ``W' = R * W``:

* the toy model, where each round the agent picks a deterministic safe factor
  or a binary risky factor (``r1`` with probability ``p``, else ``r2``);
* portfolio assignment, where a fraction ``f`` of wealth is exposed to a binary
  bet (``r_win`` with probability ``p``, else ``r_loss``) and the rest is held.

All randomness is drawn from an explicit :class:`numpy.random.Generator`
backed by the counter-based Philox bit generator; see :func:`random_source`.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

RandomSource = np.random.Generator


class DomainError(ValueError):
    pass


def random_source(seed: int) -> RandomSource:
    """Philox-4x64 generator keyed on a 64-bit seed; never touches OS entropy."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


class ToyAction(enum.IntEnum):
    SAFE = 0
    RISKY = 1


class RewardMode(str, enum.Enum):
    INCREMENT = "increment"  # W' - W
    FACTOR = "factor"  # R


@dataclass(frozen=True)
class ToyConfig:
    r1: float = 0.5
    r2: float = 2.0
    r_safe: float = 1.2
    p: float = 0.5
    M: int = 1
    initial_wealth: float = 1.0
    reward_mode: RewardMode = RewardMode.INCREMENT

    def __post_init__(self):
        if not 0 < self.r1 < 1 < self.r2:
            raise DomainError(f"need 0 < r1 < 1 < r2, got r1={self.r1}, r2={self.r2}")
        if self.r_safe <= 0:
            raise DomainError(f"r_safe must be positive, got {self.r_safe}")
        if not 0 <= self.p <= 1:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        if int(self.M) != self.M or self.M < 1:
            raise DomainError(f"M must be a positive integer, got {self.M}")
        if self.initial_wealth <= 0:
            raise DomainError(f"initial_wealth must be positive, got {self.initial_wealth}")
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))


@dataclass(frozen=True)
class PortfolioConfig:
    r_win: float = 3.0
    r_loss: float = 0.2
    p: float = 0.5
    M: int = 1
    initial_wealth: float = 10.0

    # the uninvested leg is held at factor 1
    r_safe = 1.0

    def __post_init__(self):
        if not 0 < self.r_loss < 1 < self.r_win:
            raise DomainError(
                f"need 0 < r_loss < 1 < r_win, got r_loss={self.r_loss}, r_win={self.r_win}"
            )
        if not 0 <= self.p <= 1:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        if int(self.M) != self.M or self.M < 1:
            raise DomainError(f"M must be a positive integer, got {self.M}")
        if self.initial_wealth <= 0:
            raise DomainError(f"initial_wealth must be positive, got {self.initial_wealth}")


@dataclass(frozen=True)
class Transition:
    state_wealth: float
    action: ToyAction
    reward: float
    next_wealth: float


@dataclass
class EpisodeTrace:
    transitions: list[Transition] = field(default_factory=list)

    @property
    def final_wealth(self) -> float:
        return self.transitions[-1].next_wealth

    def __len__(self):
        return len(self.transitions)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "wealth", "action", "reward", "next_wealth"])
        for i, t in enumerate(self.transitions):
            writer.writerow(
                [i, f"{t.state_wealth:.12g}", t.action.name.lower(), f"{t.reward:.12g}", f"{t.next_wealth:.12g}"]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def toy_reward(config: ToyConfig, wealth, next_wealth):
    if config.reward_mode is RewardMode.INCREMENT:
        return next_wealth - wealth
    return next_wealth / wealth


def toy_factor(config: ToyConfig, action: ToyAction, u: float) -> float:
    """Outcome factor for ``action`` given a uniform draw ``u``; worst case iff ``u < p``."""
    if action == ToyAction.SAFE:
        return config.r_safe
    return config.r1 if u < config.p else config.r2


def toy_step(config: ToyConfig, wealth: float, action: ToyAction, rng: RandomSource):
    """Advance one round; returns ``(reward, next_wealth)``.

    A uniform is consumed for every call, safe or risky, so the random stream
    position never depends on the chosen action.
    """
    if not wealth > 0:
        raise DomainError(f"wealth must be positive, got {wealth}")
    u = rng.random()
    next_wealth = toy_factor(config, ToyAction(action), u) * wealth
    return toy_reward(config, wealth, next_wealth), next_wealth


def run_toy_episode(config: ToyConfig, policy, rng: RandomSource) -> EpisodeTrace:
    """Play ``config.M`` rounds; ``policy(wealth) -> ToyAction``."""
    trace = EpisodeTrace()
    wealth = config.initial_wealth
    for _ in range(config.M):
        action = ToyAction(policy(wealth))
        reward, nxt = toy_step(config, wealth, action, rng)
        trace.transitions.append(Transition(wealth, action, reward, nxt))
        wealth = nxt
    return trace


def portfolio_factor(config: PortfolioConfig, f, won):
    return (1.0 - f) + f * np.where(won, config.r_win, config.r_loss)


def portfolio_step(config: PortfolioConfig, wealth: float, f: float, rng: RandomSource) -> float:
    if not wealth > 0:
        raise DomainError(f"wealth must be positive, got {wealth}")
    if not 0 <= f <= 1:
        raise DomainError(f"fraction must lie in [0, 1], got {f}")
    won = rng.random() < config.p
    return float(wealth * portfolio_factor(config, f, won))


def run_portfolio_episode(config: PortfolioConfig, f: float, rng: RandomSource):
    """Hold fraction ``f`` for ``M`` rounds; returns ``(final_wealth, W_M - W_0)``."""
    wealth = config.initial_wealth
    for _ in range(config.M):
        wealth = portfolio_step(config, wealth, f, rng)
    return wealth, wealth - config.initial_wealth


@dataclass(frozen=True)
class ErgodicityDiagnostic:
    time_avg_growth: float
    ensemble_avg_growth: float
    time_avg_se: float
    ensemble_avg_se: float
    naive_ensemble_growth: float
    time_avg_theory: float
    ensemble_avg_theory: float


def ergodicity_diagnostic(config: ToyConfig, T: int, n: int, rng: RandomSource) -> ErgodicityDiagnostic:
    """Time-average versus ensemble-average growth of the always-risky process.

    ``time_avg_growth`` averages ``ln(W_T / W_0) / T`` over ``n`` trajectories.
    ``ensemble_avg_growth`` is ``ln <W_T / W_0> / T`` with the expectation
    factorised over independent rounds, i.e. the mean over ``t`` of the log of
    the cross-sectional mean factor at round ``t``.  The unfactorised sample
    mean of ``W_T`` is returned as ``naive_ensemble_growth``; for ``T`` large
    relative to ``ln n`` it is dominated by the luckiest trajectory and
    collapses towards the time average.
    """
    if T < 1 or n < 1:
        raise DomainError("T and n must be >= 1")
    worst = rng.random((n, T)) < config.p
    factors = np.where(worst, config.r1, config.r2)
    logs = np.log(factors)
    per_path = logs.sum(axis=1) / T
    time_avg = float(per_path.mean())
    time_se = float(per_path.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")

    step_growth = np.log(factors.mean(axis=0))
    ensemble = float(step_growth.mean())
    ensemble_se = float(step_growth.std(ddof=1) / np.sqrt(T)) if T > 1 else float("inf")

    naive = float((logsumexp(logs.sum(axis=1)) - np.log(n)) / T)

    p, r1, r2 = config.p, config.r1, config.r2
    return ErgodicityDiagnostic(
        time_avg,
        ensemble,
        time_se,
        ensemble_se,
        naive,
        p * np.log(r1) + (1 - p) * np.log(r2),
        float(np.log(p * r1 + (1 - p) * r2)),
    )
