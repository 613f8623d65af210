"""Deep Q-learning on the toy model.

The agent follows the classic loop: epsilon-greedy play for ``M`` rounds from
``W = W0``, every transition appended to a FIFO buffer, then one Smooth-L1 /
Adam step on a uniformly drawn mini-batch once the buffer holds ``B``
transitions.  Bootstrapped targets use the online network itself; there is
no target network.

A :class:`DqnAgent` holds a *population* of independent agents (leading axis
``A`` on every array) so that a whole sweep row can be trained in lockstep.
Each agent owns its random stream; per episode it consumes exactly
``3 * M + B`` uniforms laid out as ``[explore | random action | env | batch]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .environments import RandomSource, RewardMode, ToyAction, ToyConfig, Transition, random_source
from .nn import InvalidConfigurationError, AdamState, Mlp, adam_step, mlp_backward, mlp_forward, mlp_init, stack_mlps

N_ACTIONS = 2


class TrainingDivergedError(ArithmeticError):
    def __init__(self, episode: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at episode {episode}")
        self.episode = episode


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 1.0
    decay_rate: float = 0.995
    floor: float = 0.05

    def __call__(self, episode: int) -> float:
        return max(self.floor, self.initial * self.decay_rate**episode)


@dataclass(frozen=True)
class DqnHyperparams:
    episodes: int = 10_000
    hidden: int = 16
    gamma: float = 0.9
    learning_rate: float = 0.8
    batch_size: int = 2
    epsilon: EpsilonSchedule = EpsilonSchedule()
    buffer_capacity: Optional[int] = None  # default 10 * M * B
    feature: str = "wealth"  # or "log_wealth"
    n_eval: int = 20
    log_wealth_from_M: Optional[int] = None  # switch to log-wealth once M reaches this

    def __post_init__(self):
        if self.feature not in ("wealth", "log_wealth"):
            raise InvalidConfigurationError(f"unknown feature {self.feature!r}")
        if not 0 <= self.gamma <= 1:
            raise InvalidConfigurationError("gamma must lie in [0, 1]")
        if self.episodes < 1 or self.hidden < 1 or self.batch_size < 1 or self.n_eval < 1:
            raise InvalidConfigurationError("episodes, hidden, batch_size and n_eval must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfigurationError("learning_rate must be positive")

    def feature_for(self, M: int) -> str:
        if self.log_wealth_from_M is not None and M >= self.log_wealth_from_M:
            return "log_wealth"
        return self.feature

    def capacity(self, M: int) -> int:
        return self.buffer_capacity or 10 * M * self.batch_size


@dataclass
class ReplayBuffer:
    """Per-agent ring buffers of transitions, all filled in lockstep."""

    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    size: int = 0
    head: int = 0

    @classmethod
    def empty(cls, n_agents: int, capacity: int) -> "ReplayBuffer":
        z = np.zeros((n_agents, capacity))
        return cls(z.copy(), np.zeros((n_agents, capacity), dtype=np.int64), z.copy(), z.copy())

    @property
    def capacity(self) -> int:
        return self.state.shape[1]

    def append(self, state, action, reward, next_state):
        i = self.head
        self.state[:, i] = state
        self.action[:, i] = action
        self.reward[:, i] = reward
        self.next_state[:, i] = next_state
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def transitions(self, agent: int = 0) -> list[Transition]:
        """Stored transitions of one agent, oldest first (wealth feature as stored)."""
        start = self.head if self.size == self.capacity else 0
        idx = [(start + j) % self.capacity for j in range(self.size)]
        return [
            Transition(
                float(self.state[agent, j]),
                ToyAction(int(self.action[agent, j])),
                float(self.reward[agent, j]),
                float(self.next_state[agent, j]),
            )
            for j in idx
        ]


@dataclass
class DqnAgent:
    q_network: Mlp
    adam: AdamState
    hp: DqnHyperparams
    buffer: ReplayBuffer
    episode: int = 0
    diverged_at: np.ndarray = field(default=None)

    @property
    def n_agents(self) -> int:
        return self.q_network.population_shape[0]

    @property
    def gamma(self) -> float:
        return self.hp.gamma


def make_agent(hp: DqnHyperparams, M: int, seeds: Sequence[int]) -> DqnAgent:
    """Population of freshly initialised agents, one per seed."""
    q = stack_mlps([mlp_init((1, hp.hidden, N_ACTIONS), s) for s in seeds])
    return DqnAgent(
        q,
        AdamState.zeros_like(q, hp.learning_rate),
        hp,
        ReplayBuffer.empty(len(seeds), hp.capacity(M)),
        diverged_at=np.full(len(seeds), -1),
    )


def state_feature(hp: DqnHyperparams, wealth):
    wealth = np.asarray(wealth, dtype=float)
    return np.log(wealth) if hp.feature == "log_wealth" else wealth


def q_values(agent: DqnAgent, wealth) -> np.ndarray:
    """Q(s, .) for wealth of shape ``(A, *samples)``; returns ``(A, *samples, 2)``."""
    s = state_feature(agent.hp, wealth)
    return mlp_forward(agent.q_network, s[..., None])[0]


def greedy_actions(q: np.ndarray) -> np.ndarray:
    # argmax keeps the first maximum, so ties resolve to SAFE (index 0)
    return np.argmax(q, axis=-1)


def select_action(agent: DqnAgent, wealth: float, epsilon: float, rng: RandomSource) -> ToyAction:
    """Epsilon-greedy choice for a single-agent population."""
    u_explore, u_action = rng.random(2)
    return ToyAction(int(_epsilon_greedy(agent, np.array([wealth]), epsilon, np.array([u_explore]), np.array([u_action]))[0]))


def _epsilon_greedy(agent, wealth, epsilon, u_explore, u_action):
    greedy = greedy_actions(q_values(agent, wealth))
    random_action = (u_action >= 0.5).astype(np.int64)
    return np.where(u_explore < epsilon, random_action, greedy)


def bellman_targets(agent: DqnAgent, reward, next_wealth) -> np.ndarray:
    """``r + gamma * max_a' Q(s', a')`` with the current network, shape ``(A, B)``."""
    q_next = q_values(agent, next_wealth)
    return np.asarray(reward) + agent.gamma * q_next.max(axis=-1)


def _sample_without_replacement(u: np.ndarray, n: int) -> np.ndarray:
    """Map uniforms of shape ``(A, B)`` to distinct indices in ``range(n)`` per row."""
    A, B = u.shape
    picks = np.zeros((A, B), dtype=np.int64)
    for t in range(B):
        j = np.minimum((u[:, t] * (n - t)).astype(np.int64), n - t - 1)
        prev = np.sort(picks[:, :t], axis=1)
        for c in range(t):
            j = j + (j >= prev[:, c])
        picks[:, t] = j
    return picks


def _update(agent: DqnAgent, u_batch: np.ndarray) -> np.ndarray:
    """One mini-batch Smooth-L1 / Adam step for every agent; returns per-agent loss."""
    buf = agent.buffer
    B = agent.hp.batch_size
    idx = _sample_without_replacement(u_batch, buf.size)
    # ring-buffer slot of the idx-th oldest transition
    start = buf.head if buf.size == buf.capacity else 0
    slot = (start + idx) % buf.capacity
    take = lambda arr: np.take_along_axis(arr, slot, axis=1)
    s, a, r, s2 = take(buf.state), take(buf.action), take(buf.reward), take(buf.next_state)

    y = r + agent.gamma * mlp_forward(agent.q_network, s2[..., None])[0].max(axis=-1)
    q, cache = mlp_forward(agent.q_network, s[..., None])
    y_hat = np.take_along_axis(q, a[..., None], axis=-1)[..., 0]
    d = y_hat - y
    small = np.abs(d) < 1.0
    loss = np.where(small, 0.5 * d * d, np.abs(d) - 0.5).mean(axis=1)
    dpred = np.where(small, d, np.sign(d)) / B
    dout = np.zeros_like(q)
    np.put_along_axis(dout, a[..., None], dpred[..., None], axis=-1)

    bad = ~np.isfinite(loss)
    if bad.any():
        dout[bad] = 0.0
    grads = mlp_backward(agent.q_network, cache, dout)
    for g in grads.params():
        g[~np.isfinite(g)] = 0.0
    agent.q_network, agent.adam = adam_step(agent.q_network, grads, agent.adam)
    return loss


def _episode(agent: DqnAgent, cfg: ToyConfig, p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Play one episode for every agent and apply the update; returns per-agent loss (nan if none)."""
    M = cfg.M
    A = agent.n_agents
    eps = agent.hp.epsilon(agent.episode)
    u_explore, u_action, u_env, u_batch = u[:, :M], u[:, M : 2 * M], u[:, 2 * M : 3 * M], u[:, 3 * M :]
    wealth = np.full(A, cfg.initial_wealth)
    for t in range(M):
        action = _epsilon_greedy(agent, wealth, eps, u_explore[:, t], u_action[:, t])
        worst = u_env[:, t] < p
        factor = np.where(action == ToyAction.SAFE, cfg.r_safe, np.where(worst, cfg.r1, cfg.r2))
        nxt = factor * wealth
        reward = nxt - wealth if cfg.reward_mode is RewardMode.INCREMENT else factor
        agent.buffer.append(state_feature(agent.hp, wealth), action, reward, state_feature(agent.hp, nxt))
        wealth = nxt
    loss = np.full(A, np.nan)
    if agent.buffer.size >= agent.hp.batch_size:
        loss = _update(agent, u_batch)
        newly = ~np.isfinite(loss) & (agent.diverged_at < 0)
        agent.diverged_at[newly] = agent.episode
    agent.episode += 1
    return loss


def uniforms_per_episode(hp: DqnHyperparams, M: int) -> int:
    return 3 * M + hp.batch_size


def train_episode(agent: DqnAgent, env: ToyConfig, rng: RandomSource) -> dict:
    """One episode for a single-agent population; returns ``{'epsilon', 'loss', 'updated'}``."""
    eps = agent.hp.epsilon(agent.episode)
    u = rng.random((1, uniforms_per_episode(agent.hp, env.M)))
    loss = _episode(agent, env, np.array([env.p]), u)
    if agent.diverged_at[0] >= 0:
        raise TrainingDivergedError(int(agent.diverged_at[0]))
    return {"epsilon": eps, "loss": float(loss[0]), "updated": bool(np.isfinite(loss[0]))}


def _greedy_rollout_safe_fraction(agent: DqnAgent, cfg: ToyConfig, p: np.ndarray, u_env: np.ndarray) -> np.ndarray:
    """Fraction of SAFE choices along greedy rollouts; ``u_env`` has shape ``(A, n_eval, M)``."""
    A, n_eval, M = u_env.shape
    wealth = np.full((A, n_eval), cfg.initial_wealth)
    safe = np.zeros((A, n_eval))
    for t in range(M):
        action = greedy_actions(q_values(agent, wealth))
        safe += action == ToyAction.SAFE
        worst = u_env[:, :, t] < p[:, None]
        wealth = wealth * np.where(action == ToyAction.SAFE, cfg.r_safe, np.where(worst, cfg.r1, cfg.r2))
    return safe.mean(axis=1) / M


def evaluate_policy(agent: DqnAgent, env: ToyConfig, n_eval: int, rng: RandomSource) -> float:
    """Greedy (epsilon = 0) probability of SAFE for a single-agent population."""
    u = rng.random((1, n_eval, env.M))
    return float(_greedy_rollout_safe_fraction(agent, env, np.array([env.p]), u)[0])


@dataclass
class PopulationResult:
    agent: DqnAgent
    pi_safe: np.ndarray
    diverged_at: np.ndarray
    log: Optional[str] = None


def train_population(
    env: ToyConfig,
    p_values: Sequence[float],
    seeds: Sequence[int],
    hp: DqnHyperparams,
    log_every: int = 0,
    chunk: int = 500,
) -> PopulationResult:
    """Train one agent per ``(p, seed)`` pair in lockstep and evaluate each greedily.

    Agent ``i`` sees ``replace(env, p=p_values[i])`` and draws from
    ``random_source(seeds[i])``: network init first, then episode uniforms,
    then evaluation uniforms.  Its result does not depend on the other
    members of the population.
    """
    p = np.asarray(p_values, dtype=float)
    if len(p) != len(seeds):
        raise ValueError("need one seed per agent")
    rngs = [random_source(s) for s in seeds]
    init_seeds = [int(r.integers(0, 2**63)) for r in rngs]
    agent = make_agent(hp, env.M, init_seeds)
    k = uniforms_per_episode(hp, env.M)
    rows = []
    done = 0
    while done < hp.episodes:
        n = min(chunk, hp.episodes - done)
        block = np.stack([r.random((n, k)) for r in rngs], axis=1)  # (n, A, k)
        for e in range(n):
            eps = hp.epsilon(agent.episode)
            loss = _episode(agent, env, p, block[e])
            if log_every and (agent.episode - 1) % log_every == 0:
                snap = greedy_actions(q_values(agent, np.full((len(p), 1), env.initial_wealth)))[:, 0]
                for i in range(len(p)):
                    rows.append((agent.episode - 1, i, eps, loss[i], float(snap[i] == ToyAction.SAFE)))
        done += n
    u_eval = np.stack([r.random((hp.n_eval, env.M)) for r in rngs])
    pi_safe = _greedy_rollout_safe_fraction(agent, env, p, u_eval)
    log = None
    if log_every:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "agent", "epsilon", "loss", "pi_safe"])
        for ep, i, eps, lo, ps in rows:
            w.writerow([ep, i, f"{eps:.12g}", f"{lo:.12g}", f"{ps:.12g}"])
        log = buf.getvalue()
    return PopulationResult(agent, pi_safe, agent.diverged_at.copy(), log)


def train_agent(env: ToyConfig, hp: DqnHyperparams, seed: int):
    """Train a single agent at ``env.p``; returns ``(agent, pi_safe)``.

    Raises :class:`TrainingDivergedError` if the loss ever becomes non-finite.
    """
    res = train_population(env, [env.p], [seed], hp)
    if res.diverged_at[0] >= 0:
        raise TrainingDivergedError(int(res.diverged_at[0]))
    return res.agent, float(res.pi_safe[0])
