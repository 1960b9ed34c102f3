"""Command-line entry point: train, eval, plot-data export, clip utilities.

Exit codes: 0 success, 1 runtime fault, 2 usage/config error. All emitted
CSVs use repr() floats so they round-trip losslessly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import kinematics, mtu, nn, refdata
from .ddpg import DdpgConfig, _squash, train_ddpg
from .env import EnvConfig, GaitEnv
from .model import (JOINT_COORD, JOINT_NAMES, MUSCLE_NAMES, ConfigError,
                    load_config, model_from_config, validate)
from .ppo import PpoConfig, RunningStat, train_ppo
from .refdata import CSV_COLUMNS, ClipLoadError, load_clip, make_synthetic_clip, write_clip_csv

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = RUNTIME_ERROR):
        super().__init__(message)
        self.code = code


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_config(args) -> dict:
    try:
        cfg = load_config(getattr(args, "config", None))
    except ConfigError as e:
        raise CliError(str(e), USAGE_ERROR) from e
    mode = getattr(args, "mode", None)
    if mode:
        cfg["env"]["mode"] = mode
        cfg["model"]["actuation_mode"] = mode
    return cfg


def _build_model(cfg: dict):
    try:
        spec = model_from_config(cfg, mode=cfg["env"]["mode"])
    except ConfigError as e:
        raise CliError(str(e), USAGE_ERROR) from e
    problems = validate(spec)
    if problems:
        raise CliError("invalid model: " + "; ".join(problems), USAGE_ERROR)
    return spec


def _load_ref(path: str, spec):
    try:
        return load_clip(path, spec)
    except ClipLoadError as e:
        raise CliError(str(e), USAGE_ERROR) from e


def _worker_cap(default: int) -> int:
    cap = os.environ.get("GAITFORGE_THREADS")
    if cap:
        try:
            return max(1, min(default, int(cap)))
        except ValueError:
            raise CliError(f"GAITFORGE_THREADS={cap!r} is not an integer",
                           USAGE_ERROR)
    return default


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    spec = _build_model(cfg)
    clip = _load_ref(args.ref, spec)
    digest = ckpt.config_digest(cfg)
    env_cfg = EnvConfig.from_dict(cfg)

    def factory(seed: int) -> GaitEnv:
        return GaitEnv(spec, clip, env_cfg, seed=seed)

    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "command": "train",
        "algo": args.algo,
        "mode": cfg["env"]["mode"],
        "steps": args.steps,
        "seed": args.seed,
        "ref": os.path.abspath(args.ref),
        "ref_sha256": _file_sha256(args.ref),
        "config_digest": digest,
        "resolved_config": cfg,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    if args.algo == "ppo":
        pcfg = PpoConfig.from_dict(cfg)
        pcfg.workers = _worker_cap(pcfg.workers)
        train_ppo(factory, pcfg, args.steps, args.seed, out_dir=args.out,
                  config_digest=digest, resume=args.resume, quiet=args.quiet)
    else:
        dcfg = DdpgConfig.from_dict(cfg, mode=cfg["env"]["mode"])
        train_ddpg(factory, dcfg, args.steps, args.seed, out_dir=args.out,
                   config_digest=digest, resume=args.resume, quiet=args.quiet)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

class _CheckpointPolicy:
    """Deterministic action selection from a saved PPO or DDPG checkpoint."""

    def __init__(self, path: str, expected_digest: str, bounds):
        try:
            arrays, meta, _ = ckpt.load_checkpoint(path, expected_digest)
        except ckpt.CheckpointError as e:
            raise CliError(str(e), USAGE_ERROR) from e
        self.algo = meta.get("algo")
        if self.algo == "ppo":
            self.net = ckpt.unpack_mlp("policy", arrays)
        elif self.algo == "ddpg":
            self.net = ckpt.unpack_mlp("actor", arrays)
        else:
            raise CliError(f"{path}: unknown checkpoint algo {self.algo!r}",
                           USAGE_ERROR)
        self.bounds = bounds
        self.stat = RunningStat(self.net.sizes[0])
        if "obs_stat/mean" in arrays:
            self.stat.mean = arrays["obs_stat/mean"]
            self.stat.m2 = arrays["obs_stat/m2"]
            self.stat.count = int(meta.get("obs_stat_count", 0))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        x = self.stat.normalize(obs)
        out = nn.forward(self.net, x)
        if self.algo == "ddpg":
            return _squash(out, *self.bounds)
        return np.clip(out, *self.bounds)


def _eval_columns(mode: str, n_spheres: int) -> list[str]:
    cols = ["episode", "step", "time", "phase"]
    cols += [f"q_{c}" for c in CSV_COLUMNS[1:]]
    cols += [f"qd_{c}" for c in CSV_COLUMNS[1:]]
    if mode == "torque":
        cols += [f"tau_{j}" for j in JOINT_NAMES]
    else:
        cols += [f"act_{m}" for m in MUSCLE_NAMES]
        cols += [f"exc_{m}" for m in MUSCLE_NAMES]
    for i in range(n_spheres):
        cols += [f"grf_normal_{i}", f"grf_friction_{i}"]
    cols += ["r_q", "r_e", "r_c", "r_effort", "reward", "energy_rate",
             "cot_step"]
    return cols


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    spec = _build_model(cfg)
    clip = _load_ref(args.ref, spec)
    digest = ckpt.config_digest(cfg)
    env_cfg = EnvConfig.from_dict(cfg)
    env = GaitEnv(spec, clip, env_cfg, seed=args.seed)
    mode = cfg["env"]["mode"]

    if args.action_source == "policy":
        if not args.ckpt:
            raise CliError("--ckpt is required with --action-source policy",
                           USAGE_ERROR)
        policy = _CheckpointPolicy(args.ckpt, digest, env.action_bounds())
    else:
        if mode != "torque":
            raise CliError("reference replay requires torque mode", USAGE_ERROR)
        joint_cols = np.array([JOINT_COORD[n] for n in JOINT_NAMES])

        def policy(obs, _env=env, _cols=joint_cols):
            targets = _env.clip.sample(_env.phase, _env.wraps)
            return targets.q[_cols]

    os.makedirs(args.out, exist_ok=True)
    n_spheres = len(spec.contact_spheres)
    steps_path = os.path.join(args.out, "eval_steps.csv")
    ep_rewards, ep_lengths = [], []
    total_work = 0.0
    total_energy = 0.0
    total_distance = 0.0
    total_time = 0.0
    with open(steps_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_eval_columns(mode, n_spheres))
        for ep in range(args.episodes):
            obs = env.reset(start_phase=ep / max(args.episodes, 1))
            start_tx = env.state.q[0]
            ep_reward = 0.0
            step = 0
            done = False
            while not done:
                result = env.step(policy(obs))
                rb = result.reward
                st = env.state
                info = result.info
                grf = info.get("grf", [])
                row = [ep, step, repr(st.time), repr(env.phase)]
                row += [repr(float(x)) for x in st.q]
                row += [repr(float(x)) for x in st.qdot]
                if mode == "torque":
                    row += [repr(float(x)) for x in info["torques"]]
                else:
                    row += [repr(float(x)) for x in info["activations"]]
                    row += [repr(float(x)) for x in info["excitations"]]
                for i in range(n_spheres):
                    if i < len(grf):
                        row += [repr(float(grf[i][0])), repr(float(grf[i][1]))]
                    else:
                        row += ["0.0", "0.0"]
                energy_rate = rb.energy.total if rb.energy else 0.0
                cot_step = (rb.energy.cost_of_transport_step
                            if rb.energy and hasattr(rb.energy, "cost_of_transport_step")
                            else 0.0)
                row += [repr(rb.r_q), repr(rb.r_e), repr(rb.r_c),
                        repr(rb.r_effort), repr(rb.total),
                        repr(float(energy_rate)), repr(float(cot_step))]
                writer.writerow(row)
                ep_reward += rb.total
                total_work += cot_step
                total_energy += energy_rate * env_cfg.control_dt
                total_time += env_cfg.control_dt
                step += 1
                obs = result.observation
                done = result.done
            ep_rewards.append(ep_reward)
            ep_lengths.append(step)
            total_distance += abs(env.state.q[0] - start_tx)
    summary = {
        "episodes": args.episodes,
        "mean_reward": float(np.mean(ep_rewards)),
        "mean_episode_length": float(np.mean(ep_lengths)),
        "total_distance_m": total_distance,
        "cost_of_transport_per_m": (
            (total_work if mode == "torque" else total_energy)
            / total_distance if total_distance > 0 else float("nan")),
        "mean_metabolic_rate_w": (total_energy / total_time
                                  if total_time > 0 else 0.0),
        "config_digest": digest,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    if not args.quiet:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# export-plots
# ---------------------------------------------------------------------------

def _read_eval_csv(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise CliError(f"cannot read {path}: {e}", USAGE_ERROR) from e
    if len(rows) < 2:
        raise CliError(f"{path}: no data rows", USAGE_ERROR)
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


def _reconstruct_mtu_torques(spec, cols: dict) -> dict[str, np.ndarray]:
    """Per-joint torques implied by recorded muscle states (sign convention:
    hip = +GLU +HAM -ILI, knee = +VAS -HAM -GAS, ankle = +GAS +SOL -TIA)."""
    n = len(cols["time"])
    out = {j: np.zeros(n) for j in JOINT_NAMES}
    q = np.zeros(9)
    qd = np.zeros(9)
    for i in range(n):
        for k, c in enumerate(CSV_COLUMNS[1:]):
            q[k if c in ("pelvis_tx", "pelvis_ty") else JOINT_COORD[c]] = \
                cols[f"q_{c}"][i]
            qd[k if c in ("pelvis_tx", "pelvis_ty") else JOINT_COORD[c]] = \
                cols[f"qd_{c}"][i]
        for m in spec.muscles:
            a = cols[f"act_{m.name}"][i]
            st = mtu.muscle_state(m, q, qd, a)
            f_total, _, _ = mtu.muscle_force(m, st)
            _, arms = mtu.mtu_kinematics(m, q)
            for joint, rho in arms:
                out[joint][i] += rho * f_total
    return out


def cmd_export_plots(args) -> int:
    cfg = _resolve_config(args)
    spec = _build_model(cfg)
    clip = _load_ref(args.ref, spec)
    cols = _read_eval_csv(args.eval)
    os.makedirs(args.out, exist_ok=True)
    phase = cols["phase"]

    # joint-angle tracking vs the reference clip
    with open(os.path.join(args.out, "tracking.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time", "phase"]
                   + [f"q_{j}" for j in JOINT_NAMES]
                   + [f"ref_{j}" for j in JOINT_NAMES]
                   + [f"err_{j}" for j in JOINT_NAMES])
        for i in range(len(phase)):
            targets = clip.sample(float(phase[i]))
            row = [repr(float(cols["time"][i])), repr(float(phase[i]))]
            qs = [cols[f"q_{j}"][i] for j in JOINT_NAMES]
            refs = [targets.q[JOINT_COORD[j]] for j in JOINT_NAMES]
            row += [repr(float(x)) for x in qs]
            row += [repr(float(x)) for x in refs]
            row += [repr(float(a - b)) for a, b in zip(qs, refs)]
            w.writerow(row)

    # (q, qdot) limit cycles, one file per joint
    for j in JOINT_NAMES:
        path = os.path.join(args.out, f"limit_cycle_{j}.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase", "q", "qdot"])
            for i in range(len(phase)):
                w.writerow([repr(float(phase[i])),
                            repr(float(cols[f"q_{j}"][i])),
                            repr(float(cols[f"qd_{j}"][i]))])

    # muscle activations vs phase (only present in mtu-mode evals)
    act_cols = [m for m in MUSCLE_NAMES if f"act_{m}" in cols]
    if act_cols:
        with open(os.path.join(args.out, "activations.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase"] + [f"act_{m}" for m in act_cols])
            for i in range(len(phase)):
                w.writerow([repr(float(phase[i]))]
                           + [repr(float(cols[f"act_{m}"][i])) for m in act_cols])

    # torque comparison between a torque-mode and an mtu-mode run
    if args.compare:
        cols2 = _read_eval_csv(args.compare)
        runs = {}
        for name, c in (("a", cols), ("b", cols2)):
            if all(f"tau_{j}" in c for j in JOINT_NAMES):
                runs[name] = {j: c[f"tau_{j}"] for j in JOINT_NAMES}, c["phase"]
            elif all(f"act_{m}" in c for m in MUSCLE_NAMES):
                mtu_spec = _build_model({**cfg, "env": {**cfg["env"], "mode": "mtu"},
                                         "model": {**cfg["model"],
                                                   "actuation_mode": "mtu"}})
                runs[name] = _reconstruct_mtu_torques(mtu_spec, c), c["phase"]
            else:
                raise CliError(
                    f"eval CSV {name!r} has neither torque nor full muscle columns",
                    USAGE_ERROR)
        grid = np.linspace(0.0, 1.0, 101)
        with open(os.path.join(args.out, "torque_comparison.csv"), "w",
                  newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase", "joint", "torque_a", "torque_b"])
            for j in JOINT_NAMES:
                for g in grid:
                    vals = []
                    for name in ("a", "b"):
                        torques, ph = runs[name]
                        order = np.argsort(ph)
                        vals.append(np.interp(g, ph[order], torques[j][order]))
                    w.writerow([repr(float(g)), j,
                                repr(float(vals[0])), repr(float(vals[1]))])
    return 0


# ---------------------------------------------------------------------------
# reference-clip utilities
# ---------------------------------------------------------------------------

def cmd_inspect_ref(args) -> int:
    cfg = _resolve_config(args)
    spec = _build_model(cfg)
    clip = _load_ref(args.ref, spec)
    print(json.dumps(clip.summary(), indent=2, sort_keys=True))
    return 0


def cmd_make_synthetic_ref(args) -> int:
    cfg = _resolve_config(args)
    spec = _build_model(cfg)
    clip = make_synthetic_clip(spec, n_frames=args.frames, dt=args.dt,
                               seed=args.seed, speed=args.speed)
    write_clip_csv(args.out, clip.frames, clip.dt)
    if not args.quiet:
        print(f"wrote {args.out}: {len(clip)} frames, "
              f"duration {clip.duration:.3f} s")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitforge",
        description="Train and analyze gait-imitation control policies "
                    "on a planar biped.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config merged over the defaults")
        p.add_argument("--mode", choices=["torque", "mtu"],
                       help="actuation mode override")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train", help="train a policy against a reference clip")
    common(p)
    p.add_argument("--algo", choices=["ppo", "ddpg"], required=True)
    p.add_argument("--ref", required=True, help="reference gait clip CSV")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll out a checkpoint deterministically")
    common(p)
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--ref", required=True)
    p.add_argument("--episodes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--action-source", choices=["policy", "reference"],
                   default="policy",
                   help="'reference' replays the clip through the PD law")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-plots", help="emit tidy plot-data CSVs")
    common(p)
    p.add_argument("--eval", required=True, help="eval_steps.csv from `eval`")
    p.add_argument("--compare", help="second eval CSV for torque comparison")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_plots)

    p = sub.add_parser("inspect-ref", help="print reference clip statistics")
    common(p)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_inspect_ref)

    p = sub.add_parser("make-synthetic-ref",
                       help="write the bundled synthetic gait clip")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=130)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speed", type=float, default=1.0)
    p.set_defaults(func=cmd_make_synthetic_ref)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, ClipLoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as e:  # runtime fault
        print(f"fault: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
