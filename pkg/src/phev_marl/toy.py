"""1-D integrator task used to check the learner before running the vehicle."""

from __future__ import annotations

import numpy as np

from .ddpg import Agent, AgentConfig, Transition

RANGE = 2.0  # positions live in [-1, 1]


class IntegratorTask:
    """Move a point to a target: x <- clip(x + gain * a); reward -|x - target|."""

    def __init__(self, horizon: int = 40, gain: float = 0.1):
        self.horizon = horizon
        self.gain = gain

    def reset(self, rng: np.random.Generator, x=None, target=None) -> np.ndarray:
        self.x = rng.uniform(-1.0, 1.0) if x is None else x
        self.target = rng.uniform(-0.8, 0.8) if target is None else target
        self.t = 0
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.array([self.x, self.target])

    def step(self, action):
        self.x = float(np.clip(self.x + self.gain * float(action[0]), -1.0, 1.0))
        self.t += 1
        return self.obs(), -abs(self.x - self.target), self.t >= self.horizon


def final_errors(agent: Agent, task: IntegratorTask, starts) -> list[float]:
    errs = []
    for x0, target in starts:
        obs = task.reset(None, x0, target)
        done = False
        while not done:
            obs, _, done = task.step(agent.act(obs))
        errs.append(abs(task.x - task.target))
    return errs


def solve_integrator(seed: int, max_episodes: int = 200, eval_every: int = 5, tolerance: float = 0.05):
    """Train until every evaluation start ends within ``tolerance`` of the range.

    Returns (solved, episodes used, worst final error at the last evaluation).
    """
    rng = np.random.default_rng(seed)
    cfg = AgentConfig(hidden=(32, 32), gamma=0.95, tau=0.01, lr_actor=1e-3, lr_critic=1e-3,
                      buffer_size=20_000, batch_size=32, warmup_steps=200,
                      noise_start=0.3, noise_end=0.05, noise_anneal_episodes=50)
    agent = Agent(2, [-1.0], [1.0], cfg, seed=seed)
    task = IntegratorTask()
    starts = [(-0.9, 0.6), (0.9, -0.6), (0.0, 0.5), (-0.2, -0.7), (0.7, 0.1)]
    steps = 0
    worst = float("inf")
    for episode in range(1, max_episodes + 1):
        agent.noise_sigma = cfg.noise_sigma(episode - 1)
        obs = task.reset(rng)
        done = False
        while not done:
            a = agent.random_action(rng) if steps < cfg.warmup_steps else agent.act(obs, True, rng)
            obs2, r, done = task.step(a)
            agent.remember(Transition(obs, a, r, obs2, done))
            steps += 1
            if steps >= cfg.warmup_steps:
                agent.learn_step(cfg.batch_size, rng)
            obs = obs2
        if episode % eval_every == 0:
            worst = max(final_errors(agent, task, starts))
            if worst < tolerance * RANGE:
                return True, episode, worst
    return False, max_episodes, worst
