"""Sweeps over ``(p, M)``: train populations, aggregate, fit, compare to theory.

A sweep trains ``n_agents`` independent agents for every ``(p, M)`` cell.
Each agent's seed comes from :func:`derive_seed`, so results depend only on
the :class:`SweepConfig` and never on scheduling: cells sharing an ``M`` are
trained as one lockstep population and populations are merged by ``M``
index, whatever order the worker pool finishes them in.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import actor_critic as ac
from . import dqn
from .environments import PortfolioConfig, ToyConfig
from .nn import InvalidConfigurationError
from .theory import (
    POLICY_CURVE_COLUMNS,
    FitDegenerateError,
    PolicyCurve,
    PolicyKind,
    SigmoidParams,
    TheoreticalPolicy,
    default_grid,
    fmt,
    policy_mse,
    sigmoid_fit,
    theoretical_curve,
)

log = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
DIVERGENCE_LIMIT = 0.2


class ExperimentKind(str, enum.Enum):
    TOY_DQN = "toy_dqn"
    PORTFOLIO_AC = "portfolio_ac"
    PORTFOLIO_FULL_POLICY = "portfolio_full_policy"


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, p_index: int, m_index: int, agent_index: int) -> int:
    """64-bit agent seed: ``splitmix64(splitmix64(base) ^ pack(p, m, agent))``.

    The indices are packed into disjoint bit fields (20 bits for p, 12 for M,
    32 for the agent) and the finaliser is a bijection, so seeds within one
    sweep can never collide.  The base is hashed first; XOR-ing a raw base
    would merely permute agents between neighbouring base seeds.
    """
    if not (0 <= p_index < 1 << 20 and 0 <= m_index < 1 << 12 and 0 <= agent_index < 1 << 32):
        raise ValueError("sweep index out of range for seed packing")
    packed = (p_index << 44) | (m_index << 32) | agent_index
    return _splitmix64(_splitmix64(int(base_seed) & MASK64) ^ packed)


@dataclass(frozen=True)
class SweepConfig:
    kind: ExperimentKind
    p_grid: tuple = tuple(default_grid())
    m_values: tuple = (1, 2, 5, 10, 20)
    n_agents: int = 10
    episodes: int = 2000
    toy: ToyConfig = ToyConfig()
    portfolio: PortfolioConfig = PortfolioConfig()
    dqn_hp: dqn.DqnHyperparams = dqn.DqnHyperparams()
    ac_hp: ac.AcHyperparams = ac.AcHyperparams()
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        grid = np.asarray(self.p_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise InvalidConfigurationError("p_grid must be a non-empty list")
        if np.any(grid < 0) or np.any(grid > 1) or np.any(np.diff(grid) <= 0):
            raise InvalidConfigurationError("p_grid must be strictly increasing within [0, 1]")
        if len(self.m_values) == 0 or any(int(m) != m or m < 1 for m in self.m_values):
            raise InvalidConfigurationError("m_values must be a non-empty list of positive integers")
        if self.n_agents < 1 or self.episodes < 1:
            raise InvalidConfigurationError("n_agents and episodes must be >= 1")
        object.__setattr__(self, "p_grid", tuple(float(p) for p in grid))
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))

    def dqn_hyperparams(self, M: int) -> dqn.DqnHyperparams:
        return replace(self.dqn_hp, episodes=self.episodes, feature=self.dqn_hp.feature_for(M))

    def ac_hyperparams(self) -> ac.AcHyperparams:
        return replace(self.ac_hp, episodes=self.episodes)


@dataclass
class SweepResult:
    """Per-agent policy outputs, ``values[M]`` of shape ``(len(p_grid), n_agents)``.

    Diverged agents are stored as NaN and left out of every aggregate.
    """

    kind: ExperimentKind
    p_grid: np.ndarray
    m_values: tuple
    values: dict
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p_grid = np.asarray(self.p_grid, dtype=float)
        if not self.aggregates:
            self.aggregates = {M: aggregate(self.values[M]) for M in self.m_values}

    def complete(self, M: int) -> np.ndarray:
        """Cells where no more than 20% of agents diverged."""
        n = self.values[M].shape[1]
        return self.aggregates[M]["n_converged"] >= (1 - DIVERGENCE_LIMIT) * n

    def curve(self, M: int, stat: str = "mean") -> PolicyCurve:
        agg = self.aggregates[M]
        ok = agg["n_converged"] > 0
        if not ok.all():
            raise ValueError(f"M={M}: {int((~ok).sum())} cells have no converged agents")
        return PolicyCurve(
            self.p_grid,
            np.clip(agg[stat], 0.0, 1.0),
            label=f"{self.kind.value}:M={M}:{stat}",
            mean=agg["mean"],
            median=agg["median"],
            q25=agg["q25"],
            q75=agg["q75"],
            n=agg["n_converged"],
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(POLICY_CURVE_COLUMNS)
        for M in self.m_values:
            agg = self.aggregates[M]
            for i, p in enumerate(self.p_grid):
                w.writerow(
                    [self.kind.value, M, fmt(p)]
                    + [fmt(agg[k][i]) for k in ("mean", "median", "q25", "q75")]
                    + [int(agg["n_converged"][i])]
                )
        return _emit(buf, path)


def _emit(buf: io.StringIO, path) -> str:
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def aggregate(values: np.ndarray) -> dict:
    """Mean, median and quartiles over agents (axis 1), ignoring NaN."""
    values = np.asarray(values, dtype=float)
    n = np.isfinite(values).sum(axis=1)
    out = {"n_converged": n}
    with warnings.catch_warnings():
        # all-NaN rows (every agent diverged) legitimately aggregate to NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        out["mean"] = np.nanmean(values, axis=1)
        out["median"] = np.nanmedian(values, axis=1)
        out["q25"] = np.nanpercentile(values, 25, axis=1)
        out["q75"] = np.nanpercentile(values, 75, axis=1)
    return out


def _seeds(config: SweepConfig, m_index: int) -> list:
    return [
        derive_seed(config.base_seed, pi, m_index, a)
        for pi in range(len(config.p_grid))
        for a in range(config.n_agents)
    ]


def _toy_task(config: SweepConfig, m_index: int) -> np.ndarray:
    M = config.m_values[m_index]
    p = np.repeat(config.p_grid, config.n_agents)
    res = dqn.train_population(replace(config.toy, M=M), p, _seeds(config, m_index), config.dqn_hyperparams(M))
    out = res.pi_safe.copy()
    out[res.diverged_at >= 0] = np.nan
    return out.reshape(len(config.p_grid), config.n_agents)


def _portfolio_task(config: SweepConfig, m_index: int) -> np.ndarray:
    M = config.m_values[m_index]
    p = np.repeat(config.p_grid, config.n_agents)
    res = ac.train_population(replace(config.portfolio, M=M), p, _seeds(config, m_index), config.ac_hyperparams())
    out = res.fraction.copy()
    out[res.diverged_at >= 0] = np.nan
    return out.reshape(len(config.p_grid), config.n_agents)


def _full_policy_task(config: SweepConfig, m_index: int) -> np.ndarray:
    M = config.m_values[m_index]
    # one agent per index; p is resampled each episode so the p index is unused
    seeds = [derive_seed(config.base_seed, 0, m_index, a) for a in range(config.n_agents)]
    agent = ac.train_full_policy_population(replace(config.portfolio, M=M), seeds, config.ac_hyperparams())
    curves = ac.evaluate_full_policy(agent, np.asarray(config.p_grid))  # (N, P)
    curves[agent.diverged_at >= 0] = np.nan
    return curves.T.copy()


_TASKS = {
    ExperimentKind.TOY_DQN: _toy_task,
    ExperimentKind.PORTFOLIO_AC: _portfolio_task,
    ExperimentKind.PORTFOLIO_FULL_POLICY: _full_policy_task,
}


def run_sweep(config: SweepConfig) -> SweepResult:
    task = _TASKS[config.kind]
    idx = range(len(config.m_values))
    if config.workers > 1 and len(config.m_values) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(task, config, i) for i in idx]
            blocks = [f.result() for f in futures]  # index order, not completion order
    else:
        blocks = []
        for i in idx:
            log.info("%s: training M=%d", config.kind.value, config.m_values[i])
            blocks.append(task(config, i))
    values = dict(zip(config.m_values, blocks))
    result = SweepResult(config.kind, np.asarray(config.p_grid), config.m_values, values)
    for M in config.m_values:
        bad = ~result.complete(M)
        if bad.any():
            log.warning("M=%d: %d cells exceed the divergence limit", M, int(bad.sum()))
    return result


def run_toy_sweep(config: SweepConfig) -> SweepResult:
    if config.kind is not ExperimentKind.TOY_DQN:
        raise InvalidConfigurationError(f"expected kind toy_dqn, got {config.kind.value}")
    return run_sweep(config)


def run_portfolio_sweep(config: SweepConfig) -> SweepResult:
    if config.kind is not ExperimentKind.PORTFOLIO_AC:
        raise InvalidConfigurationError(f"expected kind portfolio_ac, got {config.kind.value}")
    return run_sweep(config)


@dataclass
class IndifferenceRow:
    M: int
    params: Optional[SigmoidParams]
    residual: float
    p_E: float
    p_T: float
    error: Optional[str] = None

    @property
    def dist_expected(self) -> float:
        return abs(self.params.p0 - self.p_E) if self.params else float("nan")

    @property
    def dist_time(self) -> float:
        return abs(self.params.p0 - self.p_T) if self.params else float("nan")


@dataclass
class IndifferenceResult:
    rows: dict

    def p0(self, M: int) -> float:
        row = self.rows[M]
        if row.params is None:
            raise FitDegenerateError(f"M={M}: {row.error}")
        return row.params.p0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(INDIFFERENCE_COLUMNS)
        for M, r in self.rows.items():
            if r.params is None:
                w.writerow([M, "nan", "nan", "nan", fmt(r.p_E), fmt(r.p_T)])
            else:
                w.writerow([M, fmt(r.params.k), fmt(r.params.p0), fmt(r.residual), fmt(r.p_E), fmt(r.p_T)])
        return _emit(buf, path)


INDIFFERENCE_COLUMNS = ["M", "k", "p0", "residual", "p_E", "p_T"]
MSE_COLUMNS = ["M", "mse_ev", "mse_kelly"]


def extract_indifference(result: SweepResult, p_E: float, p_T: float, stat: str = "mean") -> IndifferenceResult:
    """Sigmoid fit of the aggregated P(safe) curve for every ``M``."""
    if len(result.p_grid) < 4:
        raise FitDegenerateError("need at least 4 grid points")
    rows = {}
    for M in result.m_values:
        try:
            fit = sigmoid_fit(result.curve(M, stat))
            rows[M] = IndifferenceRow(M, SigmoidParams(float(fit.params.k), float(fit.params.p0)), float(fit.residual), p_E, p_T)
        except (FitDegenerateError, ValueError) as exc:
            rows[M] = IndifferenceRow(M, None, float("nan"), p_E, p_T, str(exc))
    return IndifferenceResult(rows)


@dataclass
class MseReport:
    mse_ev: dict
    mse_kelly: dict

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MSE_COLUMNS)
        for M in self.mse_ev:
            w.writerow([M, fmt(self.mse_ev[M]), fmt(self.mse_kelly[M])])
        return _emit(buf, path)


def portfolio_theory_curves(config: PortfolioConfig, grid):
    ev = theoretical_curve(TheoreticalPolicy(PolicyKind.EXPECTED_VALUE_PORTFOLIO, config), grid)
    kelly = theoretical_curve(TheoreticalPolicy(PolicyKind.KELLY_PORTFOLIO, config), grid)
    return ev, kelly


def compute_mse_report(result: SweepResult, ev_curve: PolicyCurve, kelly_curve: PolicyCurve, stat: str = "median") -> MseReport:
    mse_ev, mse_kelly = {}, {}
    for M in result.m_values:
        learned = result.curve(M, stat)
        mse_ev[M] = policy_mse(learned, ev_curve)
        mse_kelly[M] = policy_mse(learned, kelly_curve)
    return MseReport(mse_ev, mse_kelly)


@dataclass
class FullPolicyResult:
    sweep: SweepResult
    mse: MseReport

    def curve(self, M: int) -> PolicyCurve:
        return self.sweep.curve(M, "median")


def run_full_policy_experiment(config: SweepConfig) -> FullPolicyResult:
    if config.kind is not ExperimentKind.PORTFOLIO_FULL_POLICY:
        raise InvalidConfigurationError(f"expected kind portfolio_full_policy, got {config.kind.value}")
    sweep = run_sweep(config)
    ev, kelly = portfolio_theory_curves(config.portfolio, sweep.p_grid)
    return FullPolicyResult(sweep, compute_mse_report(sweep, ev, kelly))
