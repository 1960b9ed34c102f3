"""Minimal 1-DoF tracking environment for trainer sanity checks.

A velocity-controlled point tracks a sinusoidal reference; the reward is
exp(-4 (q - target)^2) per step. The environment mirrors the gait
environment's interface (StepResult with a RewardBreakdown, done reasons,
action bounds), so the PPO and DDPG trainers run against it unchanged.
"""

from __future__ import annotations

import numpy as np

from .env import RewardBreakdown, StepResult
from .model import SimState

TOY_DT = 0.05
TOY_HORIZON = 200
TOY_SPEED = 2.0          # units/s at full action
TOY_AMPLITUDE = 0.8
TOY_OMEGA = 0.7          # rad/s of the reference sinusoid
TOY_BOUND = 2.0          # position clamp


class ToyTrackingEnv:
    """1-DoF reference-tracking task with the gait environment's interface."""

    observation_size = 4
    action_size = 1
    control_dt = TOY_DT

    def __init__(self, seed: int = 0, horizon: int = TOY_HORIZON):
        self.rng = np.random.default_rng(seed)
        self.horizon = horizon
        self.state: SimState | None = None
        self.done = True
        self.done_reason = "none"
        self.step_index = 0

    def action_bounds(self):
        return np.array([-1.0]), np.array([1.0])

    def _target(self, t: float) -> float:
        return TOY_AMPLITUDE * np.sin(TOY_OMEGA * t)

    def observation(self) -> np.ndarray:
        t = self.state.time
        q = self.state.q[0]
        return np.array([np.sin(TOY_OMEGA * t), np.cos(TOY_OMEGA * t),
                         q, self._target(t) - q])

    def reset(self, start_phase: float | None = None) -> np.ndarray:
        q0 = float(self.rng.uniform(-1.0, 1.0))
        self.state = SimState(q=np.array([q0]), qdot=np.zeros(1),
                              qddot=np.zeros(1), activations=np.zeros(0),
                              time=0.0)
        self.done = False
        self.done_reason = "none"
        self.step_index = 0
        return self.observation()

    def step(self, action: np.ndarray) -> StepResult:
        if self.state is None or self.done:
            raise RuntimeError("step() on a finished or unreset episode")
        u = float(np.clip(np.asarray(action, dtype=float).ravel()[0], -1.0, 1.0))
        q = self.state.q[0] + TOY_SPEED * u * TOY_DT
        q = float(np.clip(q, -TOY_BOUND, TOY_BOUND))
        self.state.q[0] = q
        self.state.qdot[0] = TOY_SPEED * u
        self.state.time += TOY_DT
        self.step_index += 1
        err = q - self._target(self.state.time)
        r = float(np.exp(-4.0 * err * err))
        reward = RewardBreakdown(r_q=r, r_e=1.0, r_c=1.0, r_effort=1.0,
                                 total=r, dev_q=err * err, dev_e=0.0,
                                 dev_c=0.0, dev_effort=0.0)
        reason = "horizon" if self.step_index >= self.horizon else "none"
        self.done = reason != "none"
        self.done_reason = reason
        return StepResult(self.observation(), reward, self.done, reason,
                          {"target": self._target(self.state.time)})


def random_baseline(seed: int = 0, episodes: int = 20) -> float:
    """Mean episode reward of uniform random actions (comparison baseline)."""
    env = ToyTrackingEnv(seed)
    rng = np.random.default_rng(seed + 1)
    low, high = env.action_bounds()
    totals = []
    for _ in range(episodes):
        env.reset()
        total = 0.0
        done = False
        while not done:
            result = env.step(rng.uniform(low, high))
            total += result.reward.total
            done = result.done
        totals.append(total)
    return float(np.mean(totals))
