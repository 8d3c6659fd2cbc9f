"""Deep deterministic policy gradient agent with replay and soft target updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import RewardSpec
from .neural import CHECKPOINT_VERSION, Adam, Mlp, TrainingError


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    observation_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.obs_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.obs[i] = t.observation
        self.act[i] = t.action
        self.rew[i] = t.reward
        self.obs_next[i] = t.observation_next
        self.done[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.indices(batch_size, rng)
        return self.obs[idx], self.act[idx], self.rew[idx], self.obs_next[idx], self.done[idx]

    def ordered(self) -> list[int]:
        """Slot indices from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        return [(start + k) % self.capacity for k in range(self.size)]


def soft_update(online: Mlp, target: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if online.layer_sizes != target.layer_sizes:
        raise ValueError("online and target networks differ in shape")
    for p, q in zip(online.params, target.params):
        if tau == 1.0:
            q[...] = p
        else:
            q *= 1.0 - tau
            q += tau * p


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    tau: float = 0.005
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    buffer_size: int = 100_000
    batch_size: int = 64
    warmup_steps: int = 1000
    noise_start: float = 0.1
    noise_end: float = 0.02
    noise_anneal_episodes: int = 40
    reward_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")

    def noise_sigma(self, episode: int) -> float:
        """Linearly annealed exploration scale, as a fraction of the action half-range."""
        if self.noise_anneal_episodes <= 0:
            return self.noise_end
        frac = min(episode / self.noise_anneal_episodes, 1.0)
        return self.noise_start + frac * (self.noise_end - self.noise_start)


class Agent:
    def __init__(self, obs_dim: int, action_low, action_high, config: AgentConfig | None = None, seed: int = 0):
        self.config = config or AgentConfig()
        c = self.config
        self.obs_dim = obs_dim
        self.action_low = np.atleast_1d(np.asarray(action_low, dtype=float))
        self.action_high = np.atleast_1d(np.asarray(action_high, dtype=float))
        self.act_dim = len(self.action_low)
        ss = np.random.SeedSequence(seed)
        actor_seed, critic_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        self.actor = Mlp.init((obs_dim, *c.hidden, self.act_dim), "relu", "tanh", actor_seed)
        self.critic = Mlp.init((obs_dim + self.act_dim, *c.hidden, 1), "relu", "identity", critic_seed)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(lr=c.lr_actor)
        self.critic_opt = Adam(lr=c.lr_critic)
        self.buffer = ReplayBuffer(c.buffer_size, obs_dim, self.act_dim)
        self.noise_sigma = c.noise_start

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)

    def _scale(self, y):
        return self.action_low + (y + 1.0) * self.half_range

    def act(self, observation, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        y, _ = self.actor.forward(observation)
        a = self._scale(y)
        if explore and self.noise_sigma > 0:
            a = a + rng.normal(0.0, self.noise_sigma, size=a.shape) * self.half_range
        return np.clip(a, self.action_low, self.action_high)

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.action_low, self.action_high)

    def remember(self, transition: Transition) -> None:
        self.buffer.push(transition)

    def q_value(self, obs, action) -> np.ndarray:
        q, _ = self.critic.forward(np.concatenate([np.atleast_2d(obs), np.atleast_2d(action)], axis=1))
        return q[:, 0]

    def learn_step(self, batch_size: int, rng: np.random.Generator):
        """One critic and one actor update from a replay minibatch.

        Returns (critic_loss, mean Q under the current policy), or None when the
        buffer holds fewer than ``batch_size`` transitions.
        """
        if len(self.buffer) < batch_size:
            return None
        c = self.config
        s, a, r, s2, d = self.buffer.sample(batch_size, rng)
        r = r * c.reward_scale

        a2 = self._scale(self.actor_target.forward(s2)[0])
        q2 = self.critic_target.forward(np.concatenate([s2, a2], axis=1))[0][:, 0]
        y = r + c.gamma * (1.0 - d) * q2

        q, cache = self.critic.forward(np.concatenate([s, a], axis=1))
        err = q[:, 0] - y
        critic_loss = float(np.mean(err * err))
        grads, _ = self.critic.backward(cache, (2.0 / batch_size) * err[:, None])
        self.critic_opt.step(self.critic, grads)

        y_pi, actor_cache = self.actor.forward(s)
        q_pi, q_cache = self.critic.forward(np.concatenate([s, self._scale(y_pi)], axis=1))
        _, dx = self.critic.backward(q_cache, np.full((batch_size, 1), -1.0 / batch_size))
        actor_grads, _ = self.actor.backward(actor_cache, dx[:, self.obs_dim:] * self.half_range)
        self.actor_opt.step(self.actor, actor_grads)

        soft_update(self.critic, self.critic_target, c.tau)
        soft_update(self.actor, self.actor_target, c.tau)
        if not math.isfinite(critic_loss):
            raise TrainingError("critic loss became non-finite")
        return critic_loss, float(np.mean(q_pi))

    # checkpoint (replay buffer is not saved) -------------------------------

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {
            f"{prefix}bounds": np.stack([self.action_low, self.action_high]),
            f"{prefix}obs_dim": np.int64(self.obs_dim),
            f"{prefix}noise_sigma": np.float64(self.noise_sigma),
        }
        for name in ("actor", "critic", "actor_target", "critic_target"):
            out.update(getattr(self, name).to_arrays(f"{prefix}{name}."))
        out.update(self.actor_opt.to_arrays(f"{prefix}actor_opt."))
        out.update(self.critic_opt.to_arrays(f"{prefix}critic_opt."))
        return out

    def save(self, path) -> None:
        np.savez(path, version=np.int64(CHECKPOINT_VERSION), **self.state_arrays())

    @classmethod
    def from_arrays(cls, data, config: AgentConfig | None = None, prefix: str = "") -> "Agent":
        low, high = np.array(data[f"{prefix}bounds"])
        agent = cls(int(data[f"{prefix}obs_dim"]), low, high, config)
        for name in ("actor", "critic", "actor_target", "critic_target"):
            setattr(agent, name, Mlp.from_arrays(data, f"{prefix}{name}."))
        agent.actor_opt = Adam.from_arrays(data, f"{prefix}actor_opt.")
        agent.critic_opt = Adam.from_arrays(data, f"{prefix}critic_opt.")
        agent.noise_sigma = float(data[f"{prefix}noise_sigma"])
        return agent

    @classmethod
    def load(cls, path, config: AgentConfig | None = None) -> "Agent":
        with np.load(path) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
            return cls.from_arrays(data, config)


@dataclass
class MultiAgentSystem:
    """Two decentralised agents acting on one shared observation."""

    agent1: Agent
    agent2: Agent
    reward_spec: RewardSpec | None = None

    def act(self, observation, explore=False, rng=None) -> np.ndarray:
        return np.concatenate([self.agent1.act(observation, explore, rng), self.agent2.act(observation, explore, rng)])
