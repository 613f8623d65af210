"""Actor-critic for portfolio assignment with a continuous fraction ``f``.

Per episode the actor proposes one fraction from a Beta distribution whose
concentrations are ``softplus(net(s)) + 1``; the fraction is held for all
``M`` rounds, the return is ``G = W_M - W_0`` and both networks take one Adam
step (REINFORCE with the critic as baseline).

Like :mod:`ergodic_rl.dqn`, everything is vectorised over a leading
population axis.  Per episode an agent consumes ``M + 1`` uniforms laid out
as ``[action sample | env rounds]``; a round is a win iff its uniform is
below ``p``, exactly as in :func:`~ergodic_rl.environments.portfolio_step`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import betainc, betaincinv, betaln, digamma, expit

from .environments import PortfolioConfig, RandomSource, random_source
from .nn import AdamState, InvalidConfigurationError, Mlp, NumericError, adam_step, mlp_backward, mlp_forward, mlp_init, stack_mlps


class TrainingDivergedError(ArithmeticError):
    def __init__(self, episode: int, message: str = "non-finite update"):
        super().__init__(f"{message} at episode {episode}")
        self.episode = episode


@dataclass(frozen=True)
class AcHyperparams:
    episodes: int = 100_000
    hidden_actor: int = 32
    hidden_critic: int = 32
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    normalize_returns: bool = False
    critic_loss: str = "squared"  # or "smooth_l1"

    def __post_init__(self):
        if self.critic_loss not in ("squared", "smooth_l1"):
            raise InvalidConfigurationError(f"unknown critic_loss {self.critic_loss!r}")
        if min(self.episodes, self.hidden_actor, self.hidden_critic) < 1:
            raise InvalidConfigurationError("episodes and hidden sizes must be >= 1")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise InvalidConfigurationError("learning rates must be positive")


def softplus(z):
    return np.logaddexp(0.0, z)


class BetaParams(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray


def beta_log_density(f, alpha, beta):
    return (alpha - 1) * np.log(f) + (beta - 1) * np.log1p(-f) - betaln(alpha, beta)


@dataclass
class Actor:
    network: Mlp

    def params(self, state) -> tuple[BetaParams, object]:
        z, cache = mlp_forward(self.network, state)
        bp = BetaParams(softplus(z[..., 0]) + 1.0, softplus(z[..., 1]) + 1.0)
        return bp, (z, cache)


@dataclass
class Critic:
    network: Mlp

    def value(self, state):
        v, cache = mlp_forward(self.network, state)
        return v[..., 0], cache


class AcUpdate(NamedTuple):
    episode_return: np.ndarray
    advantage: np.ndarray
    policy_loss: np.ndarray
    value_loss: np.ndarray
    fraction: np.ndarray


@dataclass
class AcAgent:
    """A population of actor/critic pairs plus their optimiser states."""

    actor: Actor
    critic: Critic
    actor_adam: AdamState
    critic_adam: AdamState
    hp: AcHyperparams
    episode: int = 0
    return_stats: np.ndarray = field(default=None)  # per agent: count, mean, M2
    diverged_at: np.ndarray = field(default=None)

    @property
    def n_agents(self) -> int:
        return self.actor.network.population_shape[0]


def make_agent(hp: AcHyperparams, seeds: Sequence[int], state_dim: int = 1) -> AcAgent:
    actor = stack_mlps([mlp_init((state_dim, hp.hidden_actor, 2), s) for s in seeds])
    critic = stack_mlps([mlp_init((state_dim, hp.hidden_critic, 1), s ^ 0x5EED) for s in seeds])
    n = len(seeds)
    return AcAgent(
        Actor(actor),
        Critic(critic),
        AdamState.zeros_like(actor, hp.lr_actor),
        AdamState.zeros_like(critic, hp.lr_critic),
        hp,
        return_stats=np.zeros((n, 3)),
        diverged_at=np.full(n, -1),
    )


def state_features(p, n_agents: int, full_policy: bool) -> np.ndarray:
    """``(A, 1)`` constant feature, or ``(A, 2)`` = ``(1, p)`` in full-policy mode."""
    ones = np.ones(n_agents)
    if full_policy:
        return np.column_stack([ones, np.broadcast_to(np.asarray(p, dtype=float), (n_agents,))])
    return ones[:, None]


def sample_fraction(params: BetaParams, u) -> np.ndarray:
    """Inverse-CDF draw so one uniform maps to one fraction."""
    u = np.clip(u, 2.0**-53, 1 - 2.0**-53)
    return betaincinv(params.alpha, params.beta, u)


def propose_fraction(actor: Actor, state, rng: RandomSource):
    """Sample ``f`` for every agent in the population; returns ``(f, log_density)``."""
    bp, _ = actor.params(state)
    if not (np.all(np.isfinite(bp.alpha)) and np.all(np.isfinite(bp.beta))):
        raise NumericError("actor produced non-finite distribution parameters")
    f = sample_fraction(bp, rng.random(bp.alpha.shape))
    return f, beta_log_density(f, bp.alpha, bp.beta)


def deterministic_fraction(actor: Actor, state) -> np.ndarray:
    bp, _ = actor.params(state)
    return bp.alpha / (bp.alpha + bp.beta)


def beta_cdf(f, params: BetaParams):
    return betainc(params.alpha, params.beta, f)


def episode_wealth(config: PortfolioConfig, f, u_env, p) -> np.ndarray:
    """Final wealth after holding ``f`` for ``M`` rounds; ``u_env`` is ``(A, M)``."""
    wins = (u_env < np.asarray(p)[:, None]).sum(axis=1)
    up = 1.0 + f * (config.r_win - 1.0)
    down = 1.0 + f * (config.r_loss - 1.0)
    return config.initial_wealth * up**wins * down ** (config.M - wins)


def _update_return_stats(stats, g):
    n, mean, m2 = stats[:, 0] + 1, stats[:, 1], stats[:, 2]
    delta = g - mean
    mean = mean + delta / n
    m2 = m2 + delta * (g - mean)
    stats[:, 0], stats[:, 1], stats[:, 2] = n, mean, m2
    # undefined spread before two samples; fall back to unit scale
    return np.where(n >= 2, np.sqrt(m2 / np.maximum(n - 1, 1)), 1.0)


def _episode(
    agent: AcAgent,
    config: PortfolioConfig,
    p: np.ndarray,
    u: np.ndarray,
    full_policy: bool = False,
    forced_fraction: Optional[float] = None,
) -> AcUpdate:
    A = agent.n_agents
    s = state_features(p, A, full_policy)
    bp, (z, a_cache) = agent.actor.params(s)
    if forced_fraction is None:
        f = sample_fraction(bp, u[:, 0])
    else:
        f = np.full(A, float(forced_fraction))
    w_final = episode_wealth(config, f, u[:, 1:], p)
    g = w_final - config.initial_wealth

    v, c_cache = agent.critic.value(s)
    adv = g - v
    scaled = adv
    if agent.hp.normalize_returns:
        scaled = adv / np.maximum(_update_return_stats(agent.return_stats, g), 1e-8)

    with np.errstate(divide="ignore", invalid="ignore"):
        logp = beta_log_density(f, bp.alpha, bp.beta)
    policy_loss = -logp * scaled
    if agent.hp.critic_loss == "smooth_l1":
        d = v - g
        value_loss = np.where(np.abs(d) < 1, 0.5 * d * d, np.abs(d) - 0.5)
        dv = np.where(np.abs(d) < 1, d, np.sign(d))
    else:
        value_loss = adv * adv
        dv = -2.0 * adv

    # d(-logp * A)/d(alpha, beta), advantage held constant
    psi_ab = digamma(bp.alpha + bp.beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        dlogp_da = np.log(f) - digamma(bp.alpha) + psi_ab
        dlogp_db = np.log1p(-f) - digamma(bp.beta) + psi_ab
    dz = np.stack([-scaled * dlogp_da * expit(z[..., 0]), -scaled * dlogp_db * expit(z[..., 1])], axis=-1)

    if forced_fraction is None:
        ok = np.isfinite(dz).all(axis=-1) & np.isfinite(dv) & np.isfinite(policy_loss)
    else:
        # the actor is not trained, and a pinned f on the boundary has no density
        policy_loss = np.full(A, np.nan)
        ok = np.isfinite(dv)
    bad = ~ok
    if bad.any():
        newly = bad & (agent.diverged_at < 0)
        agent.diverged_at[newly] = agent.episode
        dz[bad] = 0.0
        dv = np.where(bad, 0.0, dv)
    if forced_fraction is None:
        agent.actor.network, agent.actor_adam = adam_step(
            agent.actor.network, mlp_backward(agent.actor.network, a_cache, dz), agent.actor_adam
        )
    agent.critic.network, agent.critic_adam = adam_step(
        agent.critic.network, mlp_backward(agent.critic.network, c_cache, dv[..., None]), agent.critic_adam
    )
    agent.episode += 1
    return AcUpdate(g, adv, policy_loss, value_loss, f)


def episode_update(
    agent: AcAgent, env: PortfolioConfig, rng: RandomSource, forced_fraction: Optional[float] = None
) -> AcUpdate:
    """One episode for a single-agent population at ``env.p``.

    ``forced_fraction`` pins ``f`` (diagnostic mode): the actor is left
    untouched and only the critic learns.
    """
    u = rng.random((1, env.M + 1))
    upd = _episode(agent, env, np.array([env.p]), u, forced_fraction=forced_fraction)
    if agent.diverged_at[0] >= 0:
        raise TrainingDivergedError(int(agent.diverged_at[0]))
    return AcUpdate(*(float(x[0]) for x in upd))


@dataclass
class AcPopulationResult:
    agent: AcAgent
    fraction: np.ndarray
    diverged_at: np.ndarray
    log: Optional[str] = None


def _csv_log(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "agent", "f_sampled", "G", "A", "policy_loss", "value_loss"])
    for row in rows:
        w.writerow([row[0], row[1], *(f"{x:.12g}" for x in row[2:])])
    return buf.getvalue()


def _train(
    env: PortfolioConfig,
    seeds: Sequence[int],
    hp: AcHyperparams,
    p_for_episode: Callable[[list, int, np.ndarray], np.ndarray],
    full_policy: bool,
    log_every: int,
    chunk: int,
):
    rngs = [random_source(s) for s in seeds]
    init_seeds = [int(r.integers(0, 2**63)) for r in rngs]
    agent = make_agent(hp, init_seeds, state_dim=2 if full_policy else 1)
    k = env.M + 1 + (1 if full_policy else 0)
    rows = []
    done = 0
    while done < hp.episodes:
        n = min(chunk, hp.episodes - done)
        block = np.stack([r.random((n, k)) for r in rngs], axis=1)  # (n, A, k)
        for e in range(n):
            u = block[e]
            p = p_for_episode(u)
            upd = _episode(agent, env, p, u[:, -(env.M + 1):] if full_policy else u, full_policy)
            if log_every and (agent.episode - 1) % log_every == 0:
                for i in range(agent.n_agents):
                    rows.append((agent.episode - 1, i, upd.fraction[i], upd.episode_return[i],
                                 upd.advantage[i], upd.policy_loss[i], upd.value_loss[i]))
        done += n
    return agent, (_csv_log(rows) if log_every else None)


def train_population(
    env: PortfolioConfig,
    p_values: Sequence[float],
    seeds: Sequence[int],
    hp: AcHyperparams,
    log_every: int = 0,
    chunk: int = 1000,
) -> AcPopulationResult:
    """Train one fixed-``p`` agent per ``(p, seed)`` pair and read off ``alpha / (alpha + beta)``."""
    p = np.asarray(p_values, dtype=float)
    if len(p) != len(seeds):
        raise ValueError("need one seed per agent")
    agent, log = _train(env, seeds, hp, lambda u: p, False, log_every, chunk)
    f_hat = deterministic_fraction(agent.actor, state_features(p, len(p), False))
    return AcPopulationResult(agent, f_hat, agent.diverged_at.copy(), log)


def train_agent(env: PortfolioConfig, hp: AcHyperparams, seed: int):
    """Single fixed-``p`` agent; returns ``(agent, f_hat)``."""
    res = train_population(env, [env.p], [seed], hp)
    if res.diverged_at[0] >= 0:
        raise TrainingDivergedError(int(res.diverged_at[0]))
    return res.agent, float(res.fraction[0])


def uniform_p_sampler(low: float = 0.0, high: float = 1.0):
    """Per-episode ``p ~ U(low, high)`` driven by the first uniform of the episode block."""
    def sample(u):
        return low + (high - low) * u[:, 0]
    return sample


def train_full_policy_population(
    env: PortfolioConfig,
    seeds: Sequence[int],
    hp: AcHyperparams,
    p_sampler=None,
    log_every: int = 0,
    chunk: int = 1000,
) -> AcAgent:
    """Agents whose state is ``(1, p)`` with ``p`` redrawn every episode."""
    p_sampler = p_sampler or uniform_p_sampler()
    agent, _ = _train(env, seeds, hp, p_sampler, True, log_every, chunk)
    return agent


def train_full_policy(env: PortfolioConfig, p_sampler, hp: AcHyperparams, seed: int) -> AcAgent:
    return train_full_policy_population(env, [seed], hp, p_sampler)


def evaluate_full_policy(agent: AcAgent, grid) -> np.ndarray:
    """Deterministic fraction of every agent at every grid point, shape ``(A, len(grid))``."""
    grid = np.asarray(grid, dtype=float)
    A = agent.n_agents
    state = np.stack([np.ones((A, grid.size)), np.broadcast_to(grid, (A, grid.size))], axis=-1)
    return deterministic_fraction(agent.actor, state)
