"""Deep Deterministic Policy Gradient: replay buffer, OU exploration noise,
and Polyak-averaged target networks.

Single interaction thread; after a uniform-action warmup the trainer performs
one critic/actor update per environment step:

    y = r + gamma (1 - d) Q_targ(s', mu_targ(s'))
    critic:  minimize mean (Q(s, a) - y)^2
    actor:   maximize mean Q(s, mu(s))
    targets: phi_targ <- rho phi_targ + (1 - rho) phi,  rho = 1 - tau_soft.
"""

from __future__ import annotations

import copy
import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import nn
from .ppo import LOG_COLUMNS, RunningStat, _pack_env_state, _unpack_env_state


@dataclass
class DdpgConfig:
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 3e-3
    batch: int = 128
    tau_soft: float = 0.001
    warmup: int = 1000
    buffer_capacity: int = 50000
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    hidden: list[int] = field(default_factory=lambda: [512, 512])
    checkpoint_every: int = 10000  # environment steps between checkpoints
    log_every: int = 1000          # environment steps per CSV row

    @classmethod
    def from_dict(cls, cfg: dict, mode: str = "torque") -> "DdpgConfig":
        d = dict(cfg.get("ddpg", {}))
        if "warmup_steps" in d:
            d["warmup"] = d.pop("warmup_steps")
        if mode == "mtu":
            # muscle-driven runs use the slower-discount hyperparameter column
            for key in ("gamma", "lr_actor", "lr_critic"):
                if f"{key}_mtu" in d:
                    d[key] = d[f"{key}_mtu"]
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @property
    def polyak(self) -> float:
        return 1.0 - self.tau_soft


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (s, a, r, s', d) transitions."""

    def __init__(self, capacity: int, obs_size: int, act_size: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.act = np.zeros((capacity, act_size))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_size))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, d):
        i = self.cursor
        self.obs[i] = s
        self.act[i] = a
        self.rew[i] = r
        self.next_obs[i] = s2
        self.done[i] = d
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self.size < batch:
            raise ValueError(f"replay has {self.size} items, need {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return (self.obs[idx], self.act[idx], self.rew[idx],
                self.next_obs[idx], self.done[idx])


class OuNoise:
    """Ornstein-Uhlenbeck process x += theta (mu - x) dt + sigma sqrt(dt) z."""

    def __init__(self, size: int, theta: float = 0.15, sigma: float = 0.2,
                 mu: float = 0.0, dt: float = 0.01):
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.dt = dt
        self.x = np.full(size, mu, dtype=float)

    def reset(self):
        self.x[:] = self.mu

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(len(self.x))
        self.x += (self.theta * (self.mu - self.x) * self.dt
                   + self.sigma * np.sqrt(self.dt) * z)
        return self.x.copy()


def ou_sample(noise: OuNoise, rng: np.random.Generator) -> np.ndarray:
    return noise.sample(rng)


def _squash(raw: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    center = 0.5 * (low + high)
    half = 0.5 * (high - low)
    return center + half * np.tanh(raw)


def select_action(actor: nn.MlpParams, obs: np.ndarray,
                  noise: OuNoise | None, bounds, rng=None) -> np.ndarray:
    """Tanh-squashed deterministic action, plus OU noise when exploring."""
    low, high = bounds
    a = _squash(nn.forward(actor, obs), low, high)
    if noise is not None:
        a = a + noise.sample(rng)
    return np.clip(a, low, high)


@dataclass
class DdpgStats:
    critic_loss: float
    actor_q: float


def polyak_update(target_params: list, online_params: list, rho: float):
    for t, p in zip(target_params, online_params):
        t *= rho
        t += (1.0 - rho) * p


def ddpg_update(actor: nn.MlpParams, critic: nn.MlpParams,
                actor_target: nn.MlpParams, critic_target: nn.MlpParams,
                buffer: ReplayBuffer, cfg: DdpgConfig, bounds,
                actor_adam: nn.AdamState, critic_adam: nn.AdamState,
                rng: np.random.Generator) -> DdpgStats:
    """One minibatch of critic regression + actor ascent + target blending."""
    s, a, r, s2, d = buffer.sample(cfg.batch, rng)
    low, high = bounds
    half = 0.5 * (high - low)
    B = cfg.batch

    a2 = _squash(nn.forward(actor_target, s2), low, high)
    q2 = nn.forward(critic_target, np.hstack([s2, a2]))[:, 0]
    y = r + cfg.gamma * (1.0 - d) * q2

    q, qcache = nn.forward(critic, np.hstack([s, a]), return_cache=True)
    err = q[:, 0] - y
    cgrads, _ = nn.backward(critic, qcache, (2.0 * err / B)[:, None])
    nn.adam_update(critic.flat_params(), cgrads, critic_adam, cfg.lr_critic)

    raw, acache = nn.forward(actor, s, return_cache=True)
    mu = _squash(raw, low, high)
    qa, qacache = nn.forward(critic, np.hstack([s, mu]), return_cache=True)
    # ascend Q: descent direction is -dQ/da through the tanh squash
    _, grad_in = nn.backward(critic, qacache, np.full((B, 1), 1.0 / B))
    dq_da = grad_in[:, s.shape[1]:]
    grad_raw = -dq_da * half * (1.0 - np.tanh(raw) ** 2)
    agrads, _ = nn.backward(actor, acache, grad_raw)
    nn.adam_update(actor.flat_params(), agrads, actor_adam, cfg.lr_actor)

    rho = cfg.polyak
    polyak_update(actor_target.flat_params(), actor.flat_params(), rho)
    polyak_update(critic_target.flat_params(), critic.flat_params(), rho)
    return DdpgStats(float(np.mean(err**2)), float(np.mean(qa)))


class DdpgTrainer:
    """Single-environment DDPG interaction and update loop."""

    def __init__(self, env_factory, cfg: DdpgConfig, seed: int,
                 config_digest: str = ""):
        self.cfg = cfg
        self.seed = seed
        self.digest = config_digest
        self.env = env_factory(seed)
        obs_size = self.env.observation_size
        act_size = self.env.action_size
        self.bounds = self.env.action_bounds()
        rng = np.random.default_rng(seed)
        self.actor = nn.MlpParams.create(
            [obs_size] + list(cfg.hidden) + [act_size], rng, final_scale=0.01)
        self.critic = nn.MlpParams.create(
            [obs_size + act_size] + list(cfg.hidden) + [1], rng)
        self.actor_target = copy.deepcopy(self.actor)
        self.critic_target = copy.deepcopy(self.critic)
        self.actor_adam = nn.AdamState.for_params(self.actor.flat_params())
        self.critic_adam = nn.AdamState.for_params(self.critic.flat_params())
        self.buffer = ReplayBuffer(cfg.buffer_capacity, obs_size, act_size)
        self.noise = OuNoise(act_size, cfg.ou_theta, cfg.ou_sigma,
                             dt=getattr(self.env, "control_dt", 0.01))
        self.obs_stat = RunningStat(obs_size)
        self.train_rng = np.random.default_rng((seed << 8) | 0xD9)
        self.total_steps = 0
        self._ep_return = 0.0
        self._ep_len = 0

    # -- checkpointing -------------------------------------------------
    def save(self, path: str):
        arrays: dict = {}
        meta: dict = {
            "algo": "ddpg",
            "total_steps": self.total_steps,
            "seed": self.seed,
            "train_rng": ckpt.rng_state_to_meta(self.train_rng),
            "buffer_cursor": self.buffer.cursor,
            "buffer_size": self.buffer.size,
            "ep_return": self._ep_return,
            "ep_len": self._ep_len,
            "obs_stat_count": self.obs_stat.count,
        }
        for name, net in (("actor", self.actor), ("critic", self.critic),
                          ("actor_target", self.actor_target),
                          ("critic_target", self.critic_target)):
            ckpt.pack_mlp(name, net, arrays)
        ckpt.pack_adam("actor_adam", self.actor_adam, arrays, meta)
        ckpt.pack_adam("critic_adam", self.critic_adam, arrays, meta)
        arrays["obs_stat/mean"] = self.obs_stat.mean
        arrays["obs_stat/m2"] = self.obs_stat.m2
        n = self.buffer.size
        arrays["buffer/obs"] = self.buffer.obs[:n]
        arrays["buffer/act"] = self.buffer.act[:n]
        arrays["buffer/rew"] = self.buffer.rew[:n]
        arrays["buffer/next_obs"] = self.buffer.next_obs[:n]
        arrays["buffer/done"] = self.buffer.done[:n]
        arrays["noise/x"] = self.noise.x
        _pack_env_state("env0", self.env, arrays, meta)
        if getattr(self, "_last_obs", None) is not None:
            arrays["env0/last_obs"] = self._last_obs
        ckpt.save_checkpoint(path, arrays, meta, self.digest)

    def load(self, path: str):
        arrays, meta, _ = ckpt.load_checkpoint(path, expected_digest=self.digest or None)
        if meta.get("algo") != "ddpg":
            raise ckpt.CheckpointError(f"{path}: not a DDPG checkpoint")
        self.actor = ckpt.unpack_mlp("actor", arrays)
        self.critic = ckpt.unpack_mlp("critic", arrays)
        self.actor_target = ckpt.unpack_mlp("actor_target", arrays)
        self.critic_target = ckpt.unpack_mlp("critic_target", arrays)
        self.actor_adam = ckpt.unpack_adam("actor_adam", self.actor.flat_params(),
                                           arrays, meta)
        self.critic_adam = ckpt.unpack_adam("critic_adam", self.critic.flat_params(),
                                            arrays, meta)
        self.obs_stat.mean = arrays["obs_stat/mean"].copy()
        self.obs_stat.m2 = arrays["obs_stat/m2"].copy()
        self.obs_stat.count = int(meta["obs_stat_count"])
        n = int(meta["buffer_size"])
        self.buffer.obs[:n] = arrays["buffer/obs"]
        self.buffer.act[:n] = arrays["buffer/act"]
        self.buffer.rew[:n] = arrays["buffer/rew"]
        self.buffer.next_obs[:n] = arrays["buffer/next_obs"]
        self.buffer.done[:n] = arrays["buffer/done"]
        self.buffer.size = n
        self.buffer.cursor = int(meta["buffer_cursor"])
        self.noise.x[:] = arrays["noise/x"]
        self.train_rng = ckpt.rng_from_meta(meta["train_rng"])
        self.total_steps = int(meta["total_steps"])
        self._ep_return = float(meta["ep_return"])
        self._ep_len = int(meta["ep_len"])
        _unpack_env_state("env0", self.env, arrays, meta)
        self._last_obs = (arrays["env0/last_obs"].copy()
                          if "env0/last_obs" in arrays else None)

    # -- training ------------------------------------------------------
    def train(self, total_timesteps: int, log_path: str | None = None,
              checkpoint_dir: str | None = None, quiet: bool = False):
        cfg = self.cfg
        low, high = self.bounds
        rows = []
        log_file = writer = None
        if log_path:
            exists = os.path.exists(log_path) and self.total_steps > 0
            log_file = open(log_path, "a" if exists else "w", newline="")
            writer = csv.writer(log_file)
            if not exists:
                writer.writerow(LOG_COLUMNS)
        if checkpoint_dir and self.total_steps == 0:
            os.makedirs(checkpoint_dir, exist_ok=True)
            self.save(os.path.join(checkpoint_dir, "ckpt_init.bin"))
        if getattr(self, "_last_obs", None) is None:
            self._last_obs = self.env.reset()
            self.noise.reset()
            self._ep_return = 0.0
            self._ep_len = 0
        finished_returns: list[float] = []
        finished_lengths: list[int] = []
        term_sums = np.zeros(4)
        term_count = 0
        last_stats = DdpgStats(float("nan"), float("nan"))
        start_steps = self.total_steps
        iteration = self.total_steps // max(cfg.log_every, 1)
        try:
            while self.total_steps - start_steps < total_timesteps:
                obs = self._last_obs
                nobs = self.obs_stat.normalize(obs)
                if self.total_steps < cfg.warmup:
                    action = self.train_rng.uniform(low, high)
                else:
                    action = select_action(self.actor, nobs, self.noise,
                                           self.bounds, self.train_rng)
                result = self.env.step(action)
                reward = result.reward.total
                term_sums += (result.reward.r_q, result.reward.r_e,
                              result.reward.r_c, result.reward.r_effort)
                term_count += 1
                # horizon truncations keep the bootstrap (treated as not done)
                store_done = float(result.done and result.done_reason != "horizon")
                self.obs_stat.update(obs)
                next_nobs = self.obs_stat.normalize(result.observation)
                self.buffer.add(nobs, action, reward, next_nobs, store_done)
                self._ep_return += reward
                self._ep_len += 1
                self.total_steps += 1
                self._last_obs = result.observation
                if result.done:
                    finished_returns.append(self._ep_return)
                    finished_lengths.append(self._ep_len)
                    self._last_obs = self.env.reset()
                    self.noise.reset()
                    self._ep_return = 0.0
                    self._ep_len = 0
                if (self.total_steps >= cfg.warmup
                        and self.buffer.size >= cfg.batch):
                    last_stats = ddpg_update(
                        self.actor, self.critic, self.actor_target,
                        self.critic_target, self.buffer, cfg, self.bounds,
                        self.actor_adam, self.critic_adam, self.train_rng)
                if self.total_steps % cfg.log_every == 0:
                    iteration += 1
                    terms = term_sums / max(term_count, 1)
                    mean_ret = (float(np.mean(finished_returns))
                                if finished_returns else self._ep_return)
                    max_ret = (float(np.max(finished_returns))
                               if finished_returns else mean_ret)
                    mean_len = (float(np.mean(finished_lengths))
                                if finished_lengths else float(self._ep_len))
                    row = (iteration, self.total_steps,
                           f"{mean_ret:.6f}", f"{max_ret:.6f}", f"{mean_len:.2f}",
                           f"{terms[0]:.6f}", f"{terms[1]:.6f}",
                           f"{terms[2]:.6f}", f"{terms[3]:.6f}",
                           f"{last_stats.actor_q:.6f}",
                           f"{last_stats.critic_loss:.6f}",
                           "0.000000", "0.000000")
                    rows.append(row)
                    if writer:
                        writer.writerow(row)
                        log_file.flush()
                    if not quiet:
                        print(f"steps {self.total_steps} "
                              f"mean_ep_reward {mean_ret:.4f} "
                              f"mean_ep_len {mean_len:.1f}")
                    finished_returns.clear()
                    finished_lengths.clear()
                    term_sums[:] = 0.0
                    term_count = 0
                if (checkpoint_dir
                        and self.total_steps % cfg.checkpoint_every == 0):
                    self.save(os.path.join(
                        checkpoint_dir, f"ckpt_{self.total_steps:08d}.bin"))
            if checkpoint_dir:
                os.makedirs(checkpoint_dir, exist_ok=True)
                self.save(os.path.join(checkpoint_dir, "ckpt_final.bin"))
        finally:
            if log_file:
                log_file.close()
        return rows


def train_ddpg(env_factory, cfg: DdpgConfig, total_timesteps: int, seed: int,
               out_dir: str | None = None, config_digest: str = "",
               resume: str | None = None, quiet: bool = False) -> DdpgTrainer:
    trainer = DdpgTrainer(env_factory, cfg, seed, config_digest)
    if resume:
        trainer.load(resume)
    log_path = os.path.join(out_dir, "log.csv") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    trainer.train(total_timesteps, log_path=log_path, checkpoint_dir=out_dir,
                  quiet=quiet)
    return trainer
