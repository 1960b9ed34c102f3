"""Proximal Policy Optimization: clipped surrogate, GAE, value regression.

The trainer alternates rollout collection over a fixed set of environment
workers (stepped serially for determinism, seeded as seed XOR worker index)
with epochs of minibatch Adam updates on the clipped objective

    maximize  min(r * A, clip(r, 1-eps, 1+eps) * A) - c1 (V - R)^2 + c2 S.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import nn
from .model import NQ


@dataclass
class PpoConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    epochs: int = 10
    minibatch: int = 128
    rollout_length: int = 4096
    workers: int = 4
    hidden: list[int] = field(default_factory=lambda: [512, 512])
    checkpoint_every: int = 10

    @classmethod
    def from_dict(cls, cfg: dict) -> "PpoConfig":
        d = cfg.get("ppo", {})
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


class RolloutBuffer:
    """Per-step storage for one iteration; advantages exist after finalize."""

    def __init__(self):
        self.observations = []
        self.actions = []
        self.log_probs = []
        self.rewards = []
        self.values = []
        self.dones = []
        self.done_reasons = []
        self.advantages = None
        self.returns = None
        self._segments = []  # (start, stop, bootstrap_value) per worker segment

    def __len__(self):
        return len(self.rewards)

    def add(self, obs, action, log_prob, reward, value, done, done_reason):
        self.observations.append(obs)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)
        self.done_reasons.append(done_reason)

    def end_segment(self, start: int, bootstrap_value: float):
        self._segments.append((start, len(self.rewards), bootstrap_value))

    def finalize(self, gamma: float, lam: float):
        T = len(self.rewards)
        self.advantages = np.zeros(T)
        self.returns = np.zeros(T)
        for start, stop, bootstrap in self._segments:
            adv, ret = compute_gae(
                np.asarray(self.rewards[start:stop]),
                np.asarray(self.values[start:stop]),
                np.asarray(self.dones[start:stop], dtype=float),
                bootstrap, gamma, lam)
            self.advantages[start:stop] = adv
            self.returns[start:stop] = ret

    def arrays(self):
        return (np.asarray(self.observations), np.asarray(self.actions),
                np.asarray(self.log_probs), self.advantages, self.returns)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap_value: float, gamma: float, lam: float):
    """Generalized advantage estimation, truncated at episode ends.

    delta_t = r_t + gamma (1 - d_t) V_{t+1} - V_t, with V_T the bootstrap;
    advantages are the (gamma lam)-discounted sums of deltas, and
    returns = advantages + values.
    """
    T = len(rewards)
    if not (len(values) == len(dones) == T):
        raise ValueError("rewards/values/dones must have equal length")
    adv = np.zeros(T)
    gae = 0.0
    next_value = bootstrap_value
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nonterminal * next_value - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


class RunningStat:
    """Running mean/std of observations (frozen per collection iteration)."""

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, batch: np.ndarray):
        for x in np.atleast_2d(batch):
            self.count += 1
            delta = x - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (x - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / (self.count - 1), 1e-8))

    def normalize(self, obs: np.ndarray, mean=None, std=None) -> np.ndarray:
        mean = self.mean if mean is None else mean
        std = self.std() if std is None else std
        return (obs - mean) / std


def ppo_update(policy: nn.GaussianPolicy, value_net: nn.MlpParams,
               buffer: RolloutBuffer, cfg: PpoConfig,
               policy_adam: nn.AdamState, value_adam: nn.AdamState,
               rng: np.random.Generator) -> UpdateStats:
    """Epochs of minibatch Adam on the clipped surrogate + value regression."""
    obs, actions, logp_old, adv, ret = buffer.arrays()
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(obs)
    stats = []
    policy_params = policy.mean_net.flat_params() + [policy.log_std]
    value_params = value_net.flat_params()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = order[start:start + cfg.minibatch]
            o, a = obs[mb], actions[mb]
            A = adv[mb]
            lp_old = logp_old[mb]
            R = ret[mb]
            B = len(mb)

            means, cache = nn.forward(policy.mean_net, o, return_cache=True)
            lp_new = policy.log_prob_batch(means, a)
            ratio = np.exp(lp_new - lp_old)
            clipped_out = np.where(A >= 0, ratio > 1.0 + cfg.clip_eps,
                                   ratio < 1.0 - cfg.clip_eps)
            # gradient of the surrogate w.r.t. log pi_new (maximize)
            g_lp = np.where(clipped_out, 0.0, ratio * A) / B
            std = np.exp(policy.log_std)
            z = (a - means) / std
            # d logp / d mean = z / std; descent direction = -gradient of objective
            grad_means = -(g_lp[:, None] * z / std)
            grads, _ = nn.backward(policy.mean_net, cache, grad_means)
            g_logstd = -np.sum(g_lp[:, None] * (z**2 - 1.0), axis=0)
            g_logstd -= cfg.entropy_coef  # dS/dlogstd = 1 per dim
            grads.append(g_logstd)
            if all(np.all(np.isfinite(g)) for g in grads):
                nn.adam_update(policy_params, grads, policy_adam, cfg.lr_policy)
                policy.clamp_log_std()
            else:
                raise FloatingPointError("non-finite policy gradient; update aborted")

            values, vcache = nn.forward(value_net, o, return_cache=True)
            v = values[:, 0]
            verr = v - R
            vgrads, _ = nn.backward(value_net, vcache,
                                    (cfg.value_coef * 2.0 * verr / B)[:, None])
            if all(np.all(np.isfinite(g)) for g in vgrads):
                nn.adam_update(value_params, vgrads, value_adam, cfg.lr_value)
            else:
                raise FloatingPointError("non-finite value gradient; update aborted")

            surrogate = np.mean(np.minimum(
                ratio * A, np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * A))
            stats.append((
                -surrogate,
                float(np.mean(verr**2)),
                policy.entropy(),
                float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
                float(np.mean(lp_old - lp_new)),
            ))
    arr = np.asarray(stats)
    return UpdateStats(*[float(x) for x in arr.mean(axis=0)])


LOG_COLUMNS = ("iteration", "steps", "mean_episode_reward", "max_episode_reward",
               "mean_episode_length", "r_q", "r_e", "r_c", "r_effort",
               "policy_loss", "value_loss", "clip_fraction", "approx_kl")


def _pack_env_state(prefix, env, arrays, meta):
    st = env.state
    if st is None:
        meta[f"{prefix}/live"] = False
        return
    meta[f"{prefix}/live"] = True
    arrays[f"{prefix}/q"] = st.q
    arrays[f"{prefix}/qdot"] = st.qdot
    arrays[f"{prefix}/qddot"] = st.qddot
    arrays[f"{prefix}/activations"] = st.activations
    meta[f"{prefix}/time"] = st.time
    meta[f"{prefix}/step_index"] = env.step_index
    meta[f"{prefix}/done"] = env.done
    meta[f"{prefix}/rng"] = ckpt.rng_state_to_meta(env.rng)


def _unpack_env_state(prefix, env, arrays, meta):
    env.rng = ckpt.rng_from_meta(meta[f"{prefix}/rng"])
    if not meta[f"{prefix}/live"]:
        env.state = None
        env.done = True
        return
    from .model import SimState
    env.state = SimState(
        q=arrays[f"{prefix}/q"].copy(),
        qdot=arrays[f"{prefix}/qdot"].copy(),
        qddot=arrays[f"{prefix}/qddot"].copy(),
        activations=arrays[f"{prefix}/activations"].copy(),
        time=float(meta[f"{prefix}/time"]),
    )
    env.step_index = int(meta[f"{prefix}/step_index"])
    env.done = bool(meta[f"{prefix}/done"])


class PpoTrainer:
    """Owns the networks, optimizer state, workers, and the training loop."""

    def __init__(self, env_factory, cfg: PpoConfig, seed: int,
                 config_digest: str = "", out_dir: str | None = None):
        self.cfg = cfg
        self.seed = seed
        self.digest = config_digest
        self.out_dir = out_dir
        self.envs = [env_factory(seed ^ i) for i in range(cfg.workers)]
        obs_size = self.envs[0].observation_size
        act_size = self.envs[0].action_size
        rng = np.random.default_rng(seed)
        self.policy = nn.GaussianPolicy.create(
            [obs_size] + list(cfg.hidden) + [act_size], rng)
        self.value_net = nn.MlpParams.create(
            [obs_size] + list(cfg.hidden) + [1], rng)
        self.policy_adam = nn.AdamState.for_params(
            self.policy.mean_net.flat_params() + [self.policy.log_std])
        self.value_adam = nn.AdamState.for_params(self.value_net.flat_params())
        self.obs_stat = RunningStat(obs_size)
        self.action_rngs = [np.random.default_rng(((seed ^ i) << 8) | 0xA5)
                            for i in range(cfg.workers)]
        self.update_rng = np.random.default_rng(seed + 10_007)
        self.iteration = 0
        self.total_steps = 0
        self._pending_reset = [True] * cfg.workers
        self._ep_return = [0.0] * cfg.workers
        self._ep_len = [0] * cfg.workers
        self._last_obs = [None] * cfg.workers

    # -- checkpointing -------------------------------------------------
    def save(self, path: str):
        arrays: dict = {}
        meta: dict = {
            "algo": "ppo",
            "iteration": self.iteration,
            "total_steps": self.total_steps,
            "seed": self.seed,
            "update_rng": ckpt.rng_state_to_meta(self.update_rng),
            "action_rngs": [ckpt.rng_state_to_meta(r) for r in self.action_rngs],
            "pending_reset": self._pending_reset,
            "ep_return": self._ep_return,
            "ep_len": self._ep_len,
            "obs_stat_count": self.obs_stat.count,
        }
        ckpt.pack_mlp("policy", self.policy.mean_net, arrays)
        arrays["policy/log_std"] = self.policy.log_std
        ckpt.pack_mlp("value", self.value_net, arrays)
        ckpt.pack_adam("policy_adam", self.policy_adam, arrays, meta)
        ckpt.pack_adam("value_adam", self.value_adam, arrays, meta)
        arrays["obs_stat/mean"] = self.obs_stat.mean
        arrays["obs_stat/m2"] = self.obs_stat.m2
        for i, env in enumerate(self.envs):
            _pack_env_state(f"env{i}", env, arrays, meta)
            if self._last_obs[i] is not None:
                arrays[f"env{i}/last_obs"] = self._last_obs[i]
        ckpt.save_checkpoint(path, arrays, meta, self.digest)

    def load(self, path: str):
        arrays, meta, _ = ckpt.load_checkpoint(path, expected_digest=self.digest or None)
        if meta.get("algo") != "ppo":
            raise ckpt.CheckpointError(f"{path}: not a PPO checkpoint")
        self.policy.mean_net = ckpt.unpack_mlp("policy", arrays)
        self.policy.log_std = arrays["policy/log_std"].copy()
        self.value_net = ckpt.unpack_mlp("value", arrays)
        self.policy_adam = ckpt.unpack_adam(
            "policy_adam", self.policy.mean_net.flat_params() + [self.policy.log_std],
            arrays, meta)
        self.value_adam = ckpt.unpack_adam(
            "value_adam", self.value_net.flat_params(), arrays, meta)
        self.obs_stat.mean = arrays["obs_stat/mean"].copy()
        self.obs_stat.m2 = arrays["obs_stat/m2"].copy()
        self.obs_stat.count = int(meta["obs_stat_count"])
        self.update_rng = ckpt.rng_from_meta(meta["update_rng"])
        self.action_rngs = [ckpt.rng_from_meta(m) for m in meta["action_rngs"]]
        self._pending_reset = list(meta["pending_reset"])
        self._ep_return = list(meta["ep_return"])
        self._ep_len = list(meta["ep_len"])
        self.iteration = int(meta["iteration"])
        self.total_steps = int(meta["total_steps"])
        for i, env in enumerate(self.envs):
            _unpack_env_state(f"env{i}", env, arrays, meta)
            key = f"env{i}/last_obs"
            self._last_obs[i] = arrays[key].copy() if key in arrays else None

    # -- training ------------------------------------------------------
    def collect(self, buffer: RolloutBuffer, norm_mean, norm_std):
        """One iteration of rollouts; returns per-term reward means and
        episode summaries."""
        cfg = self.cfg
        per_worker = max(1, cfg.rollout_length // cfg.workers)
        term_sums = np.zeros(4)
        term_count = 0
        finished_returns = []
        finished_lengths = []
        raw_obs_seen = []
        for wi, env in enumerate(self.envs):
            start = len(buffer)
            if self._pending_reset[wi] or env.state is None or env.done:
                self._last_obs[wi] = env.reset()
                self._pending_reset[wi] = False
                self._ep_return[wi] = 0.0
                self._ep_len[wi] = 0
            obs = self._last_obs[wi]
            bootstrap = 0.0
            for _ in range(per_worker):
                raw_obs_seen.append(obs)
                nobs = self.obs_stat.normalize(obs, norm_mean, norm_std)
                action, logp = self.policy.sample(nobs, self.action_rngs[wi])
                value = float(nn.forward(self.value_net, nobs)[0])
                result = env.step(action)
                reward = result.reward.total
                term_sums += (result.reward.r_q, result.reward.r_e,
                              result.reward.r_c, result.reward.r_effort)
                term_count += 1
                self._ep_return[wi] += reward
                self._ep_len[wi] += 1
                self.total_steps += 1
                done = result.done
                if done and result.done_reason == "horizon":
                    # time-limit truncation: bootstrap through the terminal obs
                    nxt = self.obs_stat.normalize(result.observation,
                                                  norm_mean, norm_std)
                    reward += cfg.gamma * float(nn.forward(self.value_net, nxt)[0])
                buffer.add(obs, action, logp, reward, value, float(done),
                           result.done_reason)
                obs = result.observation
                if done:
                    finished_returns.append(self._ep_return[wi])
                    finished_lengths.append(self._ep_len[wi])
                    obs = env.reset()
                    self._ep_return[wi] = 0.0
                    self._ep_len[wi] = 0
            if not buffer.dones or buffer.dones[-1] == 0.0:
                nobs = self.obs_stat.normalize(obs, norm_mean, norm_std)
                bootstrap = float(nn.forward(self.value_net, nobs)[0])
            buffer.end_segment(start, bootstrap)
            self._last_obs[wi] = obs
        self.obs_stat.update(np.asarray(raw_obs_seen))
        terms = term_sums / max(term_count, 1)
        return terms, finished_returns, finished_lengths

    def train(self, total_timesteps: int, log_path: str | None = None,
              checkpoint_dir: str | None = None, quiet: bool = False):
        cfg = self.cfg
        rows = []
        log_file = writer = None
        if log_path:
            exists = os.path.exists(log_path) and self.iteration > 0
            log_file = open(log_path, "a" if exists else "w", newline="")
            writer = csv.writer(log_file)
            if not exists:
                writer.writerow(LOG_COLUMNS)
        if checkpoint_dir and self.iteration == 0:
            os.makedirs(checkpoint_dir, exist_ok=True)
            self.save(os.path.join(checkpoint_dir, "ckpt_init.bin"))
        try:
            start_steps = self.total_steps
            while self.total_steps - start_steps < total_timesteps:
                norm_mean = self.obs_stat.mean.copy()
                norm_std = self.obs_stat.std().copy()
                buffer = RolloutBuffer()
                terms, ep_rets, ep_lens = self.collect(buffer, norm_mean, norm_std)
                buffer.finalize(cfg.gamma, cfg.gae_lambda)
                buffer.observations = [
                    self.obs_stat.normalize(o, norm_mean, norm_std)
                    for o in buffer.observations]
                stats = ppo_update(self.policy, self.value_net, buffer, cfg,
                                   self.policy_adam, self.value_adam,
                                   self.update_rng)
                self.iteration += 1
                mean_ret = float(np.mean(ep_rets)) if ep_rets else \
                    float(np.mean(self._ep_return))
                max_ret = float(np.max(ep_rets)) if ep_rets else mean_ret
                mean_len = float(np.mean(ep_lens)) if ep_lens else \
                    float(np.mean(self._ep_len))
                row = (self.iteration, self.total_steps,
                       f"{mean_ret:.6f}", f"{max_ret:.6f}", f"{mean_len:.2f}",
                       f"{terms[0]:.6f}", f"{terms[1]:.6f}",
                       f"{terms[2]:.6f}", f"{terms[3]:.6f}",
                       f"{stats.policy_loss:.6f}", f"{stats.value_loss:.6f}",
                       f"{stats.clip_fraction:.6f}", f"{stats.approx_kl:.6f}")
                rows.append(row)
                if writer:
                    writer.writerow(row)
                    log_file.flush()
                if not quiet:
                    print(f"iter {self.iteration} steps {self.total_steps} "
                          f"mean_ep_reward {mean_ret:.4f} mean_ep_len {mean_len:.1f}")
                if checkpoint_dir and self.iteration % cfg.checkpoint_every == 0:
                    self.save(os.path.join(checkpoint_dir,
                                           f"ckpt_{self.iteration:06d}.bin"))
            if checkpoint_dir:
                os.makedirs(checkpoint_dir, exist_ok=True)
                self.save(os.path.join(checkpoint_dir, "ckpt_final.bin"))
        finally:
            if log_file:
                log_file.close()
        return rows


def train_ppo(env_factory, cfg: PpoConfig, total_timesteps: int, seed: int,
              out_dir: str | None = None, config_digest: str = "",
              resume: str | None = None, quiet: bool = False) -> PpoTrainer:
    trainer = PpoTrainer(env_factory, cfg, seed, config_digest, out_dir)
    if resume:
        trainer.load(resume)
    log_path = os.path.join(out_dir, "log.csv") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    trainer.train(total_timesteps, log_path=log_path, checkpoint_dir=out_dir,
                  quiet=quiet)
    return trainer


def export_policy_checkpoint(trainer: PpoTrainer, path: str):
    """Evaluation-only checkpoint (networks + normalization, no env state)."""
    arrays: dict = {}
    meta = {"algo": "ppo", "eval_only": True,
            "obs_stat_count": trainer.obs_stat.count}
    ckpt.pack_mlp("policy", trainer.policy.mean_net, arrays)
    arrays["policy/log_std"] = trainer.policy.log_std
    ckpt.pack_mlp("value", trainer.value_net, arrays)
    arrays["obs_stat/mean"] = trainer.obs_stat.mean
    arrays["obs_stat/m2"] = trainer.obs_stat.m2
    ckpt.save_checkpoint(path, arrays, meta, trainer.digest)
