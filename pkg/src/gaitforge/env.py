"""Gait imitation environment: observations, action routing, reward, episodes.

Observation layout (torque mode, 88 entries):
    [0]      gait phase in [0,1)
    [1..7]   joint angles (pelvis_tilt, hip_r, knee_r, ankle_r, hip_l, knee_l, ankle_l)
    [8..14]  joint velocities
    [15..21] joint accelerations (cached from the last dynamics solve)
    [22..54] 11 landmark positions relative to the pelvis, (x, y, z=0) each:
             femur/tibia/talus/calcn/toes per leg, then the whole-model COM
    [55..87] the same landmarks' velocities
MTU mode appends 14 activations, 14 normalized fiber lengths, and 14
normalized fiber velocities (130 entries total).

The reward is the product r_q * r_e * r_c * r_effort; each factor is the
exponential of a nonpositive deviation so the maximum achievable total is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics, kinematics, mtu
from .dynamics import SimulationFault
from .model import JOINT_COORD, JOINT_NAMES, NQ, ModelSpec, SimState
from .mtu import EnergyReport, ModeError
from .refdata import END_EFFECTORS, GaitClip

JOINT_COORDS = np.array([JOINT_COORD[n] for n in JOINT_NAMES])
NUM_LANDMARKS = len(kinematics.LANDMARK_ORDER) + 1  # + COM
OBS_SIZE_TORQUE = 1 + 3 * 7 + 2 * 3 * NUM_LANDMARKS
OBS_SIZE_MTU = OBS_SIZE_TORQUE + 3 * 14

INITIAL_ACTIVATION = 0.05


class EnvUsageError(RuntimeError):
    """Environment API misuse (e.g. stepping a finished episode)."""


@dataclass
class EnvConfig:
    mode: str = "torque"
    physics_dt: float = dynamics.PHYSICS_DT
    control_dt: float = dynamics.CONTROL_DT
    horizon: int = 1000
    sigma_q: float = 10.0
    sigma_e: float = 20.0
    sigma_c: float = 15.0
    sigma_a: float = 0.5
    sigma_tau: float = 0.1
    start_phase: str | float = "random"
    fall_height: float = 0.75
    limit_force_threshold: float = 1000.0
    acceleration_threshold: float = 10000.0
    k_lim: float = dynamics.K_LIM
    d_lim: float = dynamics.D_LIM
    gravity: float = 9.80665
    abs_work_cot: bool = False
    g_maintenance: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "EnvConfig":
        env = cfg.get("env", {})
        dyn = cfg.get("dynamics", {})
        mt = cfg.get("mtu", {})
        return cls(
            mode=env.get("mode", "torque"),
            physics_dt=dyn.get("physics_dt", dynamics.PHYSICS_DT),
            control_dt=dyn.get("control_dt", dynamics.CONTROL_DT),
            horizon=env.get("horizon", 1000),
            sigma_q=env.get("sigma_q", 10.0),
            sigma_e=env.get("sigma_e", 20.0),
            sigma_c=env.get("sigma_c", 15.0),
            sigma_a=env.get("sigma_a", 0.5),
            sigma_tau=env.get("sigma_tau", 0.1),
            start_phase=env.get("start_phase", "random"),
            fall_height=env.get("fall_height", 0.75),
            limit_force_threshold=env.get("limit_force_threshold", 1000.0),
            acceleration_threshold=env.get("acceleration_threshold", 10000.0),
            k_lim=dyn.get("k_lim", dynamics.K_LIM),
            d_lim=dyn.get("d_lim", dynamics.D_LIM),
            gravity=dyn.get("gravity", 9.80665),
            abs_work_cot=env.get("abs_work_cot", False),
            g_maintenance=mt.get("g_maintenance", {}),
        )


@dataclass
class RewardBreakdown:
    r_q: float
    r_e: float
    r_c: float
    r_effort: float
    total: float
    dev_q: float
    dev_e: float
    dev_c: float
    dev_effort: float
    energy: EnergyReport | None = None


@dataclass
class StepResult:
    observation: np.ndarray
    reward: RewardBreakdown
    done: bool
    done_reason: str  # fall | limit_force | acceleration | horizon | none
    info: dict


class GaitEnv:
    """One rollout worker's environment instance.

    ModelSpec and GaitClip are shared immutably; the SimState is owned here.
    """

    def __init__(self, spec: ModelSpec, clip: GaitClip, config: EnvConfig,
                 seed: int = 0):
        if config.mode != spec.actuation_mode:
            raise ModeError(
                f"config mode {config.mode!r} != model mode {spec.actuation_mode!r}")
        self.spec = spec
        self.clip = clip
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self.substeps = max(1, round(config.control_dt / config.physics_dt))
        self.state: SimState | None = None
        self.done = True
        self.done_reason = "none"
        self.step_index = 0
        self._max_torques = np.array([self.spec.joint(n).max_torque for n in JOINT_NAMES])
        self._locked = np.array([self.spec.joint(n).locked for n in JOINT_NAMES])
        self._ranges = np.array([self.spec.joint(n).range for n in JOINT_NAMES])
        self._kp = np.array([self.spec.joint(n).kp for n in JOINT_NAMES])
        self._kd = np.array([self.spec.joint(n).kd for n in JOINT_NAMES])
        self._ee_idx = [kinematics.LANDMARK_ORDER.index(n) for n in END_EFFECTORS]

    # ------------------------------------------------------------------
    @property
    def observation_size(self) -> int:
        return OBS_SIZE_MTU if self.cfg.mode == "mtu" else OBS_SIZE_TORQUE

    @property
    def action_size(self) -> int:
        return 14 if self.cfg.mode == "mtu" else 7

    def action_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.cfg.mode == "mtu":
            return np.zeros(14), np.ones(14)
        return self._ranges[:, 0].copy(), self._ranges[:, 1].copy()

    @property
    def phase(self) -> float:
        T = self.clip.duration
        return (self.state.time % T) / T

    @property
    def wraps(self) -> int:
        return int(self.state.time // self.clip.duration)

    # ------------------------------------------------------------------
    def reset(self, start_phase: float | None = None) -> np.ndarray:
        """Reference-state initialization at a fixed or clip-sampled phase."""
        if start_phase is None:
            policy = self.cfg.start_phase
            if policy == "random":
                frame = int(self.rng.integers(0, len(self.clip) - 1))
                start_phase = frame / (len(self.clip) - 1)
            else:
                start_phase = float(policy)
        start_phase = start_phase % 1.0
        targets = self.clip.sample(start_phase, 0)
        n_mus = self.spec.num_muscles
        self.state = SimState(
            q=targets.q.copy(),
            qdot=targets.qdot.copy(),
            qddot=np.zeros(NQ),
            activations=np.full(n_mus, INITIAL_ACTIVATION),
            time=start_phase * self.clip.duration,
        )
        for j in self.spec.joints:
            if j.locked:
                i = JOINT_COORD[j.name]
                self.state.q[i] = j.lock_angle
                self.state.qdot[i] = 0.0
        self.done = False
        self.done_reason = "none"
        self.step_index = 0
        return self.observation()

    # ------------------------------------------------------------------
    def apply_action_torque(self, action: np.ndarray) -> np.ndarray:
        """PD law: tau = kp*(q_pred - q) - kd*qdot, clamped to max torque."""
        if self.cfg.mode != "torque":
            raise ModeError("PD action routing requires torque mode")
        q_pred = np.clip(np.asarray(action, dtype=float),
                         self._ranges[:, 0], self._ranges[:, 1])
        q = self.state.q[JOINT_COORDS]
        qd = self.state.qdot[JOINT_COORDS]
        tau = self._kp * (q_pred - q) - self._kd * qd
        tau = np.clip(tau, -self._max_torques, self._max_torques)
        tau[self._locked] = 0.0
        return tau

    def apply_action_mtu(self, action: np.ndarray) -> np.ndarray:
        if self.cfg.mode != "mtu":
            raise ModeError("excitation routing requires mtu mode")
        return np.clip(np.asarray(action, dtype=float), 0.0, 1.0)

    # ------------------------------------------------------------------
    def step(self, action: np.ndarray) -> StepResult:
        if self.state is None or self.done:
            raise EnvUsageError("step() on a finished or unreset episode")
        cfg = self.cfg
        fault = False
        energy: EnergyReport | None = None
        applied_tau7 = np.zeros(7)
        excitations = np.zeros(self.spec.num_muscles)
        q_joints_before = self.state.q[JOINT_COORDS].copy()
        try:
            if cfg.mode == "torque":
                applied_tau7 = self.apply_action_torque(action)
                tau9 = np.zeros(NQ)
                tau9[JOINT_COORDS] = applied_tau7
                for _ in range(self.substeps):
                    self.state = dynamics.step(
                        self.spec, self.state, tau9, cfg.physics_dt,
                        gravity=cfg.gravity, k_lim=cfg.k_lim, d_lim=cfg.d_lim)
            else:
                excitations = self.apply_action_mtu(action)
                acc = [0.0, 0.0, 0.0, 0.0]  # summed heat/work rates over substeps
                for _ in range(self.substeps):
                    for mi, m in enumerate(self.spec.muscles):
                        self.state.activations[mi] = mtu.activation_step(
                            self.state.activations[mi], excitations[mi],
                            cfg.physics_dt, m.t_act, m.t_deact)
                    forces = np.zeros(self.spec.num_muscles)
                    for mi, m in enumerate(self.spec.muscles):
                        st = mtu.muscle_state(m, self.state.q, self.state.qdot,
                                              self.state.activations[mi])
                        f_total, f_active, _ = mtu.muscle_force(m, st)
                        forces[mi] = f_total
                        rep = mtu.metabolic_rate(m, st, excitations[mi],
                                                 f_active, f_total,
                                                 g_params=cfg.g_maintenance)
                        acc[0] += rep.a_dot_heat
                        acc[1] += rep.m_dot_heat
                        acc[2] += rep.s_dot_heat
                        acc[3] += rep.w_dot
                    tau9 = mtu.muscles_to_generalized_torques(
                        self.spec, self.state.q, forces)
                    tau9[0:2] = 0.0
                    for j in self.spec.joints:
                        if j.locked:
                            tau9[JOINT_COORD[j.name]] = 0.0
                    self.state = dynamics.step(
                        self.spec, self.state, tau9, cfg.physics_dt,
                        gravity=cfg.gravity, k_lim=cfg.k_lim, d_lim=cfg.d_lim)
                scale = 1.0 / self.substeps
                energy = EnergyReport(acc[0] * scale, acc[1] * scale,
                                      acc[2] * scale, acc[3] * scale,
                                      total=sum(acc) * scale)
        except SimulationFault:
            fault = True

        self.step_index += 1
        if cfg.mode == "torque" and not fault:
            dtheta = self.state.q[JOINT_COORDS] - q_joints_before
            cot = mtu.cost_of_transport_step(applied_tau7, dtheta,
                                             absolute=cfg.abs_work_cot)
            energy = EnergyReport(0.0, 0.0, 0.0, 0.0, total=0.0,
                                  cost_of_transport_step=cot)

        if fault:
            self.done = True
            self.done_reason = "acceleration"
            obs = np.zeros(self.observation_size)
            reward = RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0,
                                     np.inf, np.inf, np.inf, np.inf)
            return StepResult(obs, reward, True, "acceleration",
                              {"fault": True})

        reward = self.compute_reward(applied_tau7 if cfg.mode == "torque"
                                     else excitations, energy)
        reason = self.check_termination()
        self.done = reason != "none"
        self.done_reason = reason
        obs = self.observation()
        info = {
            "phase": self.phase,
            "wraps": self.wraps,
            "time": self.state.time,
            "torques": applied_tau7.copy(),
            "excitations": excitations.copy(),
            "activations": self.state.activations.copy(),
            "grf": [(w.normal_force, w.friction_force) for w in self.state.grf_per_sphere],
        }
        return StepResult(obs, reward, self.done, reason, info)

    # ------------------------------------------------------------------
    def compute_reward(self, effort_vector: np.ndarray,
                       energy: EnergyReport | None = None) -> RewardBreakdown:
        cfg = self.cfg
        targets = self.clip.sample(self.phase, self.wraps)
        q = self.state.q[JOINT_COORDS]
        dev_q = float(np.sum((targets.q[JOINT_COORDS] - q) ** 2))
        lms = kinematics.landmark_states(self.spec, self.state.q, self.state.qdot)
        pelvis = self.state.q[0:2]
        dev_e = 0.0
        ref_ee = targets.end_effectors_rel()
        for k, name in enumerate(END_EFFECTORS):
            pos, _ = lms[name]
            dev_e += float(np.sum((ref_ee[k] - (pos - pelvis)) ** 2))
        com, _ = kinematics.com_state(self.spec, self.state.q, self.state.qdot)
        dev_c = float(np.sum((targets.com - com) ** 2))
        if cfg.mode == "mtu":
            dev_effort = float(np.mean(np.asarray(effort_vector) ** 2))
            sigma_eff = cfg.sigma_a
        else:
            scaled = np.asarray(effort_vector) / self._max_torques
            dev_effort = float(np.mean(scaled**2))
            sigma_eff = cfg.sigma_tau
        r_q = float(np.exp(-cfg.sigma_q * dev_q))
        r_e = float(np.exp(-cfg.sigma_e * dev_e))
        r_c = float(np.exp(-cfg.sigma_c * dev_c))
        r_effort = float(np.exp(-sigma_eff * dev_effort))
        return RewardBreakdown(r_q, r_e, r_c, r_effort,
                               total=r_q * r_e * r_c * r_effort,
                               dev_q=dev_q, dev_e=dev_e, dev_c=dev_c,
                               dev_effort=dev_effort, energy=energy)

    def check_termination(self) -> str:
        """First matching rule: fall, limit_force, acceleration, horizon."""
        cfg = self.cfg
        if self.state.q[1] < cfg.fall_height:
            return "fall"
        if self.state.limit_force_max_abs > cfg.limit_force_threshold:
            return "limit_force"
        if np.max(np.abs(self.state.qddot)) > cfg.acceleration_threshold:
            return "acceleration"
        if self.step_index >= cfg.horizon:
            return "horizon"
        return "none"

    # ------------------------------------------------------------------
    def observation(self) -> np.ndarray:
        st = self.state
        obs = np.zeros(self.observation_size)
        obs[0] = self.phase
        obs[1:8] = st.q[JOINT_COORDS]
        obs[8:15] = st.qdot[JOINT_COORDS]
        obs[15:22] = st.qddot[JOINT_COORDS]
        lms = kinematics.landmark_states(self.spec, st.q, st.qdot)
        pelvis = st.q[0:2]
        pelvis_vel = st.qdot[0:2]
        pos_block = np.zeros((NUM_LANDMARKS, 3))
        vel_block = np.zeros((NUM_LANDMARKS, 3))
        for li, name in enumerate(kinematics.LANDMARK_ORDER):
            pos, vel = lms[name]
            pos_block[li, 0:2] = pos - pelvis
            vel_block[li, 0:2] = vel - pelvis_vel
        com, com_vel = kinematics.com_state(self.spec, st.q, st.qdot)
        pos_block[-1, 0:2] = com - pelvis
        vel_block[-1, 0:2] = com_vel - pelvis_vel
        obs[22:55] = pos_block.ravel()
        obs[55:88] = vel_block.ravel()
        if self.cfg.mode == "mtu":
            n = self.spec.num_muscles
            l_hat = np.zeros(n)
            v_hat = np.zeros(n)
            for mi, m in enumerate(self.spec.muscles):
                ms = mtu.muscle_state(m, st.q, st.qdot, st.activations[mi])
                l_hat[mi] = ms.fiber_length / m.l_opt
                v_hat[mi] = ms.fiber_velocity / (m.v_max * m.l_opt)
            obs[88:102] = st.activations
            obs[102:116] = l_hat
            obs[116:130] = v_hat
        return obs
