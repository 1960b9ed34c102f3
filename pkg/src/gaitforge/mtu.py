"""Hill-type muscle-tendon units.

Rigid-tendon formulation: fiber length is the MTU path length minus the
tendon slack length, fiber velocity is the path lengthening rate, pennation
is zero. Activation dynamics, the force curves, moment-arm kinematics,
static optimization over activations, and metabolic energetics live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .model import JOINT_COORD, JOINT_NAMES, NQ, ModelSpec, MuscleSpec

# Curve constants (see muscle_force): Gaussian active force-length width,
# Hill force-velocity constant and eccentric plateau, passive exponential
# shape and strain at F_max.
FL_WIDTH = 0.45
FV_HILL = 5.0
FPE_EXP = 4.0
FPE_STRAIN = 0.6

STATIC_OPT_RESIDUAL_TOL = 1e-3


class ModeError(RuntimeError):
    """Operation called for the wrong actuation mode."""


@dataclass
class MuscleState:
    activation: float
    fiber_length: float
    fiber_velocity: float  # lengthening positive
    mtu_length: float


@dataclass
class EnergyReport:
    a_dot_heat: float  # activation heat rate, W
    m_dot_heat: float  # maintenance heat rate, W
    s_dot_heat: float  # shortening heat rate, W
    w_dot: float       # mechanical work rate, W
    total: float
    cost_of_transport_step: float = 0.0


def activation_step(a: float, u: float, dt: float,
                    t_act: float, t_deact: float) -> float:
    """First-order excitation-to-activation dynamics, one midpoint (RK2) step.

    da/dt = (u - a) / b, with b = t_act*(0.5 + 1.5a) during activation and
    t_deact/(0.5 + 1.5a) during deactivation.
    """

    def rate(a_):
        if u > a_:
            b = t_act * (0.5 + 1.5 * a_)
        else:
            b = t_deact / (0.5 + 1.5 * a_)
        return (u - a_) / b

    mid = a + 0.5 * dt * rate(a)
    mid = min(max(mid, 0.0), 1.0)
    out = a + dt * rate(mid)
    return min(max(out, 0.0), 1.0)


def mtu_kinematics(m: MuscleSpec, q: np.ndarray):
    """MTU path length and signed moment arm per attachment at coordinates q.

    Moment arm rho(theta) = sign * r * cos(theta - phi) for variable-arm
    attachments (knee/ankle) and sign * r for constant-arm ones (hip). The
    length is the consistency integral l(theta) = l_ref - integral rho dtheta
    from the all-zero reference pose, so dl/dtheta = -rho exactly.
    """
    length = m.l_ref
    arms = []
    for att in m.attachments:
        theta = q[JOINT_COORD[att.joint]]
        if att.constant_arm:
            rho = att.sign * att.r
            length -= att.sign * att.r * theta
        else:
            rho = att.sign * att.r * math.cos(theta - att.phi)
            length -= att.sign * att.r * (math.sin(theta - att.phi)
                                          - math.sin(-att.phi))
        arms.append((att.joint, rho))
    return length, arms


def muscle_state(m: MuscleSpec, q: np.ndarray, qdot: np.ndarray,
                 activation: float) -> MuscleState:
    """Algebraic fiber state under the rigid-tendon assumption."""
    length, arms = mtu_kinematics(m, q)
    v = 0.0
    for joint, rho in arms:
        v += -rho * qdot[JOINT_COORD[joint]]
    return MuscleState(
        activation=activation,
        fiber_length=length - m.tendon_slack,
        fiber_velocity=v,
        mtu_length=length,
    )


def force_length_active(l_hat: float) -> float:
    return math.exp(-(((l_hat - 1.0) / FL_WIDTH) ** 2))


def force_velocity(w: float) -> float:
    """Hill force-velocity factor; w = v_ce / (v_max * l_opt), shortening < 0."""
    if w < 0.0:
        return max((1.0 + w) / (1.0 - FV_HILL * w), 0.0)
    return 1.0 + 0.5 * (FV_HILL * w) / (FV_HILL * w + 1.0)


def force_length_passive(l_hat: float) -> float:
    if l_hat <= 1.0:
        return 0.0
    return (math.exp(FPE_EXP * (l_hat - 1.0) / FPE_STRAIN) - 1.0) / (math.exp(FPE_EXP) - 1.0)


def muscle_force(m: MuscleSpec, st: MuscleState):
    """Total, active, and passive force of one MTU.

    f = F_max * (a * f_l * f_v + f_PE), with the total floored at zero.
    """
    l_hat = st.fiber_length / m.l_opt
    w = st.fiber_velocity / (m.v_max * m.l_opt)
    f_active = m.f_max * st.activation * force_length_active(l_hat) * force_velocity(w)
    f_passive = m.f_max * force_length_passive(l_hat)
    return max(f_active + f_passive, 0.0), f_active, f_passive


def muscles_to_generalized_torques(spec: ModelSpec, q: np.ndarray,
                                   forces: np.ndarray) -> np.ndarray:
    """Map tensile muscle forces to generalized joint torques (base rows zero)."""
    if spec.actuation_mode != "mtu":
        raise ModeError("muscle torque mapping requires mtu actuation mode")
    tau = np.zeros(NQ)
    for m, f in zip(spec.muscles, forces):
        _, arms = mtu_kinematics(m, q)
        for joint, rho in arms:
            tau[JOINT_COORD[joint]] += rho * f
    return tau


def moment_arm_matrix(spec: ModelSpec, q: np.ndarray) -> np.ndarray:
    """R(q): 7 joints x num_muscles signed moment arms."""
    R = np.zeros((len(JOINT_NAMES), spec.num_muscles))
    for mi, m in enumerate(spec.muscles):
        _, arms = mtu_kinematics(m, q)
        for joint, rho in arms:
            R[JOINT_NAMES.index(joint), mi] += rho
    return R


@dataclass
class StaticOptResult:
    activations: np.ndarray
    residual: float      # ||R F a - tau||
    objective: float
    feasible: bool


class InfeasibleTorqueError(RuntimeError):
    def __init__(self, result: StaticOptResult):
        super().__init__(f"requested torques infeasible, residual {result.residual:.3e} N*m")
        self.result = result


def static_optimization(spec: ModelSpec, q: np.ndarray,
                        tau_desired: np.ndarray, p: float = 2.0,
                        fiber_lengths: np.ndarray | None = None) -> StaticOptResult:
    """Minimum-effort activations reproducing the desired joint torques.

    Solves min (1/m) sum a^p subject to R(q) diag(F_max f_l) a = tau with
    a in [0,1], quasi-static (f_v = 1). f_l is evaluated at the rigid-tendon
    fiber length implied by q unless `fiber_lengths` overrides it.
    """
    if spec.actuation_mode != "mtu":
        raise ModeError("static optimization requires mtu actuation mode")
    if p < 2.0:
        raise ValueError(f"exponent p must be >= 2, got {p}")
    nm = spec.num_muscles
    R = moment_arm_matrix(spec, q)
    gains = np.zeros(nm)
    for mi, m in enumerate(spec.muscles):
        if fiber_lengths is not None:
            l_ce = fiber_lengths[mi]
        else:
            length, _ = mtu_kinematics(m, q)
            l_ce = length - m.tendon_slack
        gains[mi] = m.f_max * force_length_active(l_ce / m.l_opt)
    C = R * gains[None, :]
    tau = np.asarray(tau_desired, dtype=float)

    # feasibility pass: bounded least squares on the equality constraints
    ls = optimize.lsq_linear(C, tau, bounds=(0.0, 1.0), tol=1e-12)
    a0 = np.clip(ls.x, 0.0, 1.0)
    residual0 = float(np.linalg.norm(C @ a0 - tau))
    if residual0 > STATIC_OPT_RESIDUAL_TOL:
        res = StaticOptResult(a0, residual0, float(np.mean(a0**p)), feasible=False)
        raise InfeasibleTorqueError(res)

    sol = optimize.minimize(
        lambda a: float(np.mean(a**p)),
        a0,
        jac=lambda a: (p / nm) * a ** (p - 1.0),
        bounds=[(0.0, 1.0)] * nm,
        constraints=[{"type": "eq", "fun": lambda a: C @ a - tau,
                      "jac": lambda a: C}],
        method="SLSQP",
        options={"maxiter": 200, "ftol": 1e-14},
    )
    a = np.clip(sol.x, 0.0, 1.0)
    residual = float(np.linalg.norm(C @ a - tau))
    if not sol.success or residual > residual0 + STATIC_OPT_RESIDUAL_TOL or \
            np.mean(a**p) > np.mean(a0**p):
        a, residual = a0, residual0
    return StaticOptResult(a, residual, float(np.mean(a**p)),
                           feasible=residual <= STATIC_OPT_RESIDUAL_TOL)


def activation_heat_factor(u: float, lam: float) -> float:
    """f_A(u) in W/kg."""
    return 40.0 * lam * math.sin(0.5 * math.pi * u) + \
        133.0 * (1.0 - lam) * (1.0 - math.cos(0.5 * math.pi * u))


def maintenance_heat_factor(a: float, lam: float) -> float:
    """f_M evaluated at the activation (maintenance depends on a, not u)."""
    return 74.0 * lam * math.sin(0.5 * math.pi * a) + \
        111.0 * (1.0 - lam) * (1.0 - math.cos(0.5 * math.pi * a))


def maintenance_length_factor(l_hat: float, slope: float = 0.5,
                              low: float = 0.5, high: float = 1.5) -> float:
    """g(l_hat): linear in fiber length, clamped; exposed through config."""
    return min(max(low, 0.5 + slope * l_hat), high)


def metabolic_rate(m: MuscleSpec, st: MuscleState, u: float,
                   f_active: float, f_total: float,
                   g_params: dict | None = None) -> EnergyReport:
    """Energy expenditure rate of one muscle: Edot = Adot + Mdot + Sdot + Wdot."""
    lam = m.type1_fraction
    gp = g_params or {}
    l_hat = st.fiber_length / m.l_opt
    shortening = max(0.0, -st.fiber_velocity)
    a_dot = m.muscle_mass * activation_heat_factor(u, lam)
    m_dot = m.muscle_mass * maintenance_length_factor(l_hat, **gp) * \
        maintenance_heat_factor(st.activation, lam)
    s_dot = 0.25 * f_total * shortening
    w_dot = f_active * shortening
    return EnergyReport(a_dot, m_dot, s_dot, w_dot,
                        total=a_dot + m_dot + s_dot + w_dot)


def cost_of_transport_step(tau: np.ndarray, dtheta: np.ndarray,
                           absolute: bool = False) -> float:
    """Mechanical work of the joint actuators over one control step (J)."""
    terms = np.asarray(tau) * np.asarray(dtheta)
    return float(np.sum(np.abs(terms))) if absolute else float(np.sum(terms))
