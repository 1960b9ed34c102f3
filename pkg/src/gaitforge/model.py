"""Planar biped model description and runtime simulation state.

The default model is a 7-joint sagittal-plane biped (lumped pelvis+torso,
femur/tibia/foot per leg) with an optional set of 14 Hill-type muscles.
Generalized coordinates are ordered

    q = [pelvis_tx, pelvis_ty, pelvis_tilt,
         hip_r, knee_r, ankle_r, hip_l, knee_l, ankle_l]

so the floating base contributes two translations on top of the 7 rotational
joints. All angles are radians, lengths meters, masses kilograms.
"""

from __future__ import annotations

import copy
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.80665

JOINT_NAMES = ("pelvis_tilt", "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l")
# index of each joint's coordinate in the 9-vector q
JOINT_COORD = {name: i + 2 for i, name in enumerate(JOINT_NAMES)}
NQ = 9
NUM_JOINTS = 7

MUSCLE_BASE_NAMES = ("HAM", "GLU", "ILI", "VAS", "GAS", "SOL", "TIA")
MUSCLE_NAMES = tuple(f"{m}_{s}" for s in ("r", "l") for m in MUSCLE_BASE_NAMES)
NUM_MUSCLES = 14

TOTAL_MASS = 75.164
TOTAL_HEIGHT = 1.80


class ConfigError(ValueError):
    """Invalid model or run configuration."""


@dataclass
class SegmentSpec:
    name: str
    mass: float
    com_offset: tuple[float, float]   # in segment frame, from proximal joint
    inertia_zz: float                 # about COM, out-of-plane axis
    length: float
    landmarks: list[tuple[str, tuple[float, float]]] = field(default_factory=list)


@dataclass
class JointSpec:
    name: str
    parent: str
    child: str
    parent_offset: tuple[float, float]  # joint location in parent frame
    range: tuple[float, float]
    kp: float
    kd: float
    max_torque: float
    locked: bool = False
    lock_angle: float = 0.0


@dataclass
class MuscleAttachment:
    joint: str
    r: float            # maximum (or constant) moment arm
    phi: float          # joint angle of maximum moment arm; unused if constant
    sign: int           # +1/-1 per the joint-torque summation convention
    constant_arm: bool  # hip muscles use a constant arm


@dataclass
class MuscleSpec:
    name: str
    f_max: float
    l_opt: float
    v_max: float          # in l_opt per second
    t_act: float
    t_deact: float
    type1_fraction: float
    muscle_mass: float
    tendon_slack: float
    attachments: list[MuscleAttachment]

    @property
    def l_ref(self) -> float:
        # MTU length at the all-zero reference pose (rigid tendon)
        return self.l_opt + self.tendon_slack


@dataclass
class ContactParams:
    k: float = 2.5e6          # N/m^n
    n: float = 1.5
    lambda_damp: float = 1e6  # N*s/m^(n+1)
    mu_static: float = 0.9
    mu_dynamic: float = 0.8
    v_transition: float = 0.1


@dataclass
class ContactSphere:
    foot: str                 # foot segment name
    local: tuple[float, float]
    radius: float


@dataclass
class ModelSpec:
    segments: list[SegmentSpec]
    joints: list[JointSpec]
    muscles: list[MuscleSpec]
    actuation_mode: str       # "torque" | "mtu"
    contact_spheres: list[ContactSphere]
    contact_params: ContactParams
    total_mass: float
    total_height: float

    def segment(self, name: str) -> SegmentSpec:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def joint(self, name: str) -> JointSpec:
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(name)

    def muscle(self, name: str) -> MuscleSpec:
        for m in self.muscles:
            if m.name == name:
                return m
        raise KeyError(name)

    @property
    def num_muscles(self) -> int:
        return len(self.muscles)

    def free_coords(self) -> list[int]:
        """Coordinate indices that participate in the dynamics (locked joints removed)."""
        locked = {JOINT_COORD[j.name] for j in self.joints if j.locked}
        return [i for i in range(NQ) if i not in locked]

    def to_dict(self) -> dict:
        return {
            "actuation_mode": self.actuation_mode,
            "total_mass": self.total_mass,
            "total_height": self.total_height,
            "segments": [
                {
                    "name": s.name,
                    "mass": s.mass,
                    "com_offset": list(s.com_offset),
                    "inertia_zz": s.inertia_zz,
                    "length": s.length,
                    "landmarks": [[n, list(p)] for n, p in s.landmarks],
                }
                for s in self.segments
            ],
            "joints": [
                {
                    "name": j.name,
                    "parent": j.parent,
                    "child": j.child,
                    "parent_offset": list(j.parent_offset),
                    "range": list(j.range),
                    "kp": j.kp,
                    "kd": j.kd,
                    "max_torque": j.max_torque,
                    "locked": j.locked,
                    "lock_angle": j.lock_angle,
                }
                for j in self.joints
            ],
            "muscles": [
                {
                    "name": m.name,
                    "f_max": m.f_max,
                    "l_opt": m.l_opt,
                    "v_max": m.v_max,
                    "t_act": m.t_act,
                    "t_deact": m.t_deact,
                    "type1_fraction": m.type1_fraction,
                    "muscle_mass": m.muscle_mass,
                    "tendon_slack": m.tendon_slack,
                    "attachments": [
                        {
                            "joint": a.joint,
                            "r": a.r,
                            "phi": a.phi,
                            "sign": a.sign,
                            "constant_arm": a.constant_arm,
                        }
                        for a in m.attachments
                    ],
                }
                for m in self.muscles
            ],
            "contact_spheres": [
                {"foot": c.foot, "local": list(c.local), "radius": c.radius}
                for c in self.contact_spheres
            ],
            "contact_params": {
                "k": self.contact_params.k,
                "n": self.contact_params.n,
                "lambda_damp": self.contact_params.lambda_damp,
                "mu_static": self.contact_params.mu_static,
                "mu_dynamic": self.contact_params.mu_dynamic,
                "v_transition": self.contact_params.v_transition,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            segments=[
                SegmentSpec(
                    name=s["name"],
                    mass=s["mass"],
                    com_offset=tuple(s["com_offset"]),
                    inertia_zz=s["inertia_zz"],
                    length=s["length"],
                    landmarks=[(n, tuple(p)) for n, p in s["landmarks"]],
                )
                for s in d["segments"]
            ],
            joints=[
                JointSpec(
                    name=j["name"],
                    parent=j["parent"],
                    child=j["child"],
                    parent_offset=tuple(j["parent_offset"]),
                    range=tuple(j["range"]),
                    kp=j["kp"],
                    kd=j["kd"],
                    max_torque=j["max_torque"],
                    locked=j["locked"],
                    lock_angle=j["lock_angle"],
                )
                for j in d["joints"]
            ],
            muscles=[
                MuscleSpec(
                    name=m["name"],
                    f_max=m["f_max"],
                    l_opt=m["l_opt"],
                    v_max=m["v_max"],
                    t_act=m["t_act"],
                    t_deact=m["t_deact"],
                    type1_fraction=m["type1_fraction"],
                    muscle_mass=m["muscle_mass"],
                    tendon_slack=m["tendon_slack"],
                    attachments=[
                        MuscleAttachment(
                            joint=a["joint"],
                            r=a["r"],
                            phi=a["phi"],
                            sign=a["sign"],
                            constant_arm=a["constant_arm"],
                        )
                        for a in m["attachments"]
                    ],
                )
                for m in d["muscles"]
            ],
            actuation_mode=d["actuation_mode"],
            contact_spheres=[
                ContactSphere(foot=c["foot"], local=tuple(c["local"]), radius=c["radius"])
                for c in d["contact_spheres"]
            ],
            contact_params=ContactParams(**d["contact_params"]),
            total_mass=d["total_mass"],
            total_height=d["total_height"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    activations: np.ndarray
    time: float = 0.0
    limit_force_max_abs: float = 0.0
    grf_per_sphere: list = field(default_factory=list)

    @classmethod
    def zeros(cls, num_muscles: int = 0) -> "SimState":
        return cls(
            q=np.zeros(NQ),
            qdot=np.zeros(NQ),
            qddot=np.zeros(NQ),
            activations=np.zeros(num_muscles),
        )

    def copy(self) -> "SimState":
        return SimState(
            q=self.q.copy(),
            qdot=self.qdot.copy(),
            qddot=self.qddot.copy(),
            activations=self.activations.copy(),
            time=self.time,
            limit_force_max_abs=self.limit_force_max_abs,
            grf_per_sphere=list(self.grf_per_sphere),
        )


# ---------------------------------------------------------------------------
# Default model configuration
# ---------------------------------------------------------------------------

# Joint ranges (rad). Values follow the action-space table of the default
# model, including the narrower left-ankle range.
JOINT_RANGES = {
    "pelvis_tilt": (-1.57079633, 1.57079633),
    "hip_r": (-2.0943951, 2.0943951),
    "knee_r": (-2.0943951, 0.17453293),
    "ankle_r": (-1.57079633, 1.57079633),
    "hip_l": (-2.0943951, 2.0943951),
    "knee_l": (-2.0943951, 0.17453293),
    "ankle_l": (-1.04719755, 1.04719755),
}

# Specific-tension based muscle mass estimate: F_max * l_opt * density / sigma
MUSCLE_DENSITY = 1059.7      # kg/m^3
SPECIFIC_TENSION = 0.25e6    # N/m^2


def estimate_muscle_mass(f_max: float, l_opt: float) -> float:
    return f_max * l_opt * MUSCLE_DENSITY / SPECIFIC_TENSION


def default_config() -> dict:
    """Full default configuration as a nested dict (mirrors data/default_config.toml)."""
    h = TOTAL_HEIGHT
    # Anthropometric lengths scaled to stature; limb masses use the standard
    # 10/6/2 percent fractions with the lumped pelvis+torso absorbing the rest
    # so segment masses sum exactly to the total.
    femur_len = 0.245 * h
    tibia_len = 0.246 * h
    foot_drop = 0.07          # ankle height above sphere bottom when standing
    m_femur = 0.10 * TOTAL_MASS
    m_tibia = 0.06 * TOTAL_MASS
    m_foot = 0.02 * TOTAL_MASS
    m_pelvis = TOTAL_MASS - 2.0 * (m_femur + m_tibia + m_foot)

    def leg(side: str) -> list[dict]:
        return [
            {
                "name": f"femur_{side}",
                "mass": m_femur,
                "com_offset": [0.0, -0.433 * femur_len],
                "inertia_zz": m_femur * femur_len**2 / 12.0,
                "length": femur_len,
                "landmarks": [["femur", [0.0, -0.433 * femur_len]]],
            },
            {
                "name": f"tibia_{side}",
                "mass": m_tibia,
                "com_offset": [0.0, -0.433 * tibia_len],
                "inertia_zz": m_tibia * tibia_len**2 / 12.0,
                "length": tibia_len,
                "landmarks": [["tibia", [0.0, -0.433 * tibia_len]]],
            },
            {
                "name": f"foot_{side}",
                "mass": m_foot,
                "com_offset": [0.06, -0.04],
                "inertia_zz": m_foot * 0.274**2 / 12.0,
                "length": 0.274,
                "landmarks": [
                    ["talus", [0.0, 0.0]],
                    ["calcn", [-0.07, -0.05]],
                    ["toes", [0.20, -0.05]],
                ],
            },
        ]

    segments = [
        {
            "name": "pelvis",
            "mass": m_pelvis,
            "com_offset": [0.0, 0.25],
            "inertia_zz": m_pelvis * 0.60**2 / 12.0,
            "length": 0.60,
            "landmarks": [],
        },
        *leg("r"),
        *leg("l"),
    ]

    joints = []
    for name in JOINT_NAMES:
        if name == "pelvis_tilt":
            parent, child, offset = "ground", "pelvis", [0.0, 0.0]
        elif name.startswith("hip"):
            parent, child, offset = "pelvis", f"femur_{name[-1]}", [0.0, 0.0]
        elif name.startswith("knee"):
            parent, child, offset = f"femur_{name[-1]}", f"tibia_{name[-1]}", [0.0, -femur_len]
        else:
            parent, child, offset = f"tibia_{name[-1]}", f"foot_{name[-1]}", [0.0, -tibia_len]
        ankle = name.startswith("ankle")
        joints.append(
            {
                "name": name,
                "parent": parent,
                "child": child,
                "parent_offset": offset,
                "range": list(JOINT_RANGES[name]),
                "kp": 50.0 if ankle else 100.0,
                "kd": 2.0 if ankle else 5.0,
                "max_torque": 200.0,
                "locked": False,
                "lock_angle": 0.0,
            }
        )

    # Muscle defaults: physiologically plausible magnitudes, not ground truth.
    # Attachment signs reproduce the joint-torque summation convention:
    #   hip = +GLU +HAM -ILI; knee = +VAS -HAM -GAS; ankle = +GAS +SOL -TIA.
    muscle_table = {
        "HAM": {
            "f_max": 3000.0, "l_opt": 0.10, "tendon_slack": 0.30, "type1_fraction": 0.50,
            "attachments": [
                {"joint": "hip", "r": 0.06, "phi": 0.0, "sign": 1, "constant_arm": True},
                {"joint": "knee", "r": 0.035, "phi": -0.6, "sign": -1, "constant_arm": False},
            ],
        },
        "GLU": {
            "f_max": 1500.0, "l_opt": 0.11, "tendon_slack": 0.12, "type1_fraction": 0.55,
            "attachments": [
                {"joint": "hip", "r": 0.06, "phi": 0.0, "sign": 1, "constant_arm": True},
            ],
        },
        "ILI": {
            "f_max": 1500.0, "l_opt": 0.11, "tendon_slack": 0.10, "type1_fraction": 0.50,
            "attachments": [
                {"joint": "hip", "r": 0.05, "phi": 0.0, "sign": -1, "constant_arm": True},
            ],
        },
        "VAS": {
            "f_max": 6000.0, "l_opt": 0.08, "tendon_slack": 0.20, "type1_fraction": 0.50,
            "attachments": [
                {"joint": "knee", "r": 0.04, "phi": -0.8, "sign": 1, "constant_arm": False},
            ],
        },
        "GAS": {
            "f_max": 2500.0, "l_opt": 0.05, "tendon_slack": 0.38, "type1_fraction": 0.55,
            "attachments": [
                {"joint": "knee", "r": 0.02, "phi": -0.8, "sign": -1, "constant_arm": False},
                {"joint": "ankle", "r": 0.05, "phi": -0.3, "sign": 1, "constant_arm": False},
            ],
        },
        "SOL": {
            "f_max": 4000.0, "l_opt": 0.04, "tendon_slack": 0.25, "type1_fraction": 0.80,
            "attachments": [
                {"joint": "ankle", "r": 0.05, "phi": -0.3, "sign": 1, "constant_arm": False},
            ],
        },
        "TIA": {
            "f_max": 1000.0, "l_opt": 0.06, "tendon_slack": 0.22, "type1_fraction": 0.70,
            "attachments": [
                {"joint": "ankle", "r": 0.03, "phi": 0.3, "sign": -1, "constant_arm": False},
            ],
        },
    }
    muscles = []
    for side in ("r", "l"):
        for base, mt in muscle_table.items():
            muscles.append(
                {
                    "name": f"{base}_{side}",
                    "f_max": mt["f_max"],
                    "l_opt": mt["l_opt"],
                    "v_max": 10.0,
                    "t_act": 0.01,
                    "t_deact": 0.04,
                    "type1_fraction": mt["type1_fraction"],
                    "muscle_mass": estimate_muscle_mass(mt["f_max"], mt["l_opt"]),
                    "tendon_slack": mt["tendon_slack"],
                    "attachments": [
                        {**a, "joint": f"{a['joint']}_{side}"} for a in mt["attachments"]
                    ],
                }
            )

    contact_spheres = []
    for side in ("r", "l"):
        for local in ([-0.07, -0.04], [0.20, -0.04]):
            contact_spheres.append({"foot": f"foot_{side}", "local": local, "radius": 0.03})
    # foot_drop documents the standing ankle height implied by sphere geometry
    assert abs(foot_drop - (0.04 + 0.03)) < 1e-12

    return {
        "model": {
            "actuation_mode": "torque",
            "total_mass": TOTAL_MASS,
            "total_height": TOTAL_HEIGHT,
            "segments": segments,
            "joints": joints,
            "muscles": muscles,
            "contact_spheres": contact_spheres,
            "contact_params": {
                "k": 2.5e6,
                "n": 1.5,
                "lambda_damp": 1e6,
                "mu_static": 0.9,
                "mu_dynamic": 0.8,
                "v_transition": 0.1,
            },
        },
        "dynamics": {
            "physics_dt": 0.002,
            "control_dt": 0.01,
            "gravity": GRAVITY,
            "k_lim": 500.0,
            "d_lim": 5.0,
        },
        "mtu": {
            "static_opt_exponent": 2,
            "g_maintenance": {"slope": 0.5, "low": 0.5, "high": 1.5},
        },
        "env": {
            "mode": "torque",
            "horizon": 1000,
            "sigma_q": 10.0,
            "sigma_e": 20.0,
            "sigma_c": 15.0,
            "sigma_a": 0.5,
            "sigma_tau": 0.1,
            "start_phase": "random",       # "random" | fixed float in [0,1)
            "locked_joints": [],
            "abs_work_cot": False,         # |tau*dtheta| instead of signed work
            "fall_height": 0.75,
            "limit_force_threshold": 1000.0,
            "acceleration_threshold": 10000.0,
        },
        "ppo": {
            "gamma": 0.995,
            "gae_lambda": 0.95,
            "clip_eps": 0.2,
            "lr_policy": 3e-4,
            "lr_value": 1e-3,
            "value_coef": 0.5,
            "entropy_coef": 0.0,
            "epochs": 10,
            "minibatch": 128,
            "rollout_length": 4096,
            "workers": 4,
            "hidden": [512, 512],
            "checkpoint_every": 10,
        },
        "ddpg": {
            "gamma": 0.99,
            "gamma_mtu": 0.995,
            "lr_actor": 3e-4,
            "lr_critic": 3e-3,
            "lr_actor_mtu": 4e-4,
            "lr_critic_mtu": 4e-3,
            "batch": 128,
            "tau_soft": 0.001,
            "buffer_capacity": 50000,
            "warmup_steps": 1000,
            "ou_theta": 0.15,
            "ou_sigma": 0.2,
            "hidden": [512, 512],
            "checkpoint_every": 10000,
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None = None) -> dict:
    """Default configuration, with the TOML file at `path` merged over it."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, "rb") as f:
                override = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        cfg = _deep_merge(cfg, override)
    return cfg


def model_from_config(cfg: dict, mode: str | None = None,
                      locked_joints: set[str] | None = None) -> ModelSpec:
    mc = copy.deepcopy(cfg["model"])
    if mode is not None:
        mc["actuation_mode"] = mode
    if mc["actuation_mode"] not in ("torque", "mtu"):
        raise ConfigError(f"unknown actuation mode {mc['actuation_mode']!r}")
    if mc["actuation_mode"] == "torque":
        mc["muscles"] = []
    locked = set(locked_joints or []) | set(cfg.get("env", {}).get("locked_joints", []))
    unknown = locked - set(JOINT_NAMES)
    if unknown:
        raise ConfigError(f"unknown joint name(s): {sorted(unknown)}")
    for j in mc["joints"]:
        if j["name"] in locked:
            j["locked"] = True
            j["lock_angle"] = 0.0
    return ModelSpec.from_dict(mc)


def build_default_model(mode: str = "torque",
                        locked_joints: set[str] | None = None) -> ModelSpec:
    """Build the fully populated default planar biped.

    mode "torque" gives the 7-joint skeletal model with PD-tracked motors;
    "mtu" adds the 14 Hill-type muscles. Joints named in `locked_joints` are
    frozen at angle 0 and removed from the dynamics.
    """
    return model_from_config(default_config(), mode=mode, locked_joints=locked_joints)


def validate(spec: ModelSpec) -> list[str]:
    """Report every invariant violation of a model spec (empty list = valid)."""
    v: list[str] = []
    for s in spec.segments:
        if not s.mass > 0:
            v.append(f"segment {s.name}: mass must be > 0 (got {s.mass})")
        if not s.inertia_zz > 0:
            v.append(f"segment {s.name}: inertia_zz must be > 0 (got {s.inertia_zz})")
        if not s.length > 0:
            v.append(f"segment {s.name}: length must be > 0 (got {s.length})")
    if len(spec.joints) != NUM_JOINTS:
        v.append(f"expected {NUM_JOINTS} joints, got {len(spec.joints)}")
    for j in spec.joints:
        if not j.range[0] < j.range[1]:
            v.append(f"joint {j.name}: empty range {j.range}")
        if j.kp < 0 or j.kd < 0:
            v.append(f"joint {j.name}: kp/kd must be >= 0")
        if not j.max_torque > 0:
            v.append(f"joint {j.name}: max_torque must be > 0")
    if spec.actuation_mode == "mtu" and len(spec.muscles) != NUM_MUSCLES:
        v.append(f"mtu mode requires {NUM_MUSCLES} muscles, got {len(spec.muscles)}")
    if spec.actuation_mode == "torque" and spec.muscles:
        v.append(f"torque mode requires 0 muscles, got {len(spec.muscles)}")
    for m in spec.muscles:
        if not m.f_max > 0:
            v.append(f"muscle {m.name}: f_max must be > 0")
        if not m.l_opt > 0:
            v.append(f"muscle {m.name}: l_opt must be > 0")
        if not (m.t_act > 0 and m.t_deact > 0):
            v.append(f"muscle {m.name}: activation time constants must be > 0")
        if not 0.0 <= m.type1_fraction <= 1.0:
            v.append(f"muscle {m.name}: type1_fraction must be in [0,1]")
        biarticular = m.name.split("_")[0] in ("HAM", "GAS")
        want = 2 if biarticular else 1
        if len(m.attachments) != want:
            v.append(f"muscle {m.name}: expected {want} attachment(s), got {len(m.attachments)}")
    foot_counts: dict[str, int] = {}
    for c in spec.contact_spheres:
        foot_counts[c.foot] = foot_counts.get(c.foot, 0) + 1
    for foot in ("foot_r", "foot_l"):
        if any(s.name == foot for s in spec.segments) and foot_counts.get(foot, 0) < 2:
            v.append(f"{foot}: needs at least 2 contact spheres")
    mass_sum = math.fsum(s.mass for s in spec.segments)
    if abs(mass_sum - spec.total_mass) > 1e-9:
        v.append(f"segment masses sum to {mass_sum}, expected {spec.total_mass}")
    return v
