"""Forward dynamics of the planar biped and the fixed-step time integrator.

The equations of motion are assembled from per-segment COM Jacobians
(composite form), which keeps the mass matrix, bias forces, and gravity exact
without a symbolic derivation:

    M(q) qdd + C(q, qd) qd = tau + tau_ext

Locked joints are removed from the solved DoF set, not stiffly penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import S90, chain_for, forward_kinematics, point_jacobian
from .model import GRAVITY, NQ, JOINT_COORD, ModelSpec, SimState

PHYSICS_DT = 0.002
CONTROL_DT = 0.01
K_LIM = 500.0
D_LIM = 5.0


class SimulationFault(RuntimeError):
    """Non-finite quantity encountered during a dynamics solve."""


@dataclass
class GeneralizedForces:
    tau: np.ndarray       # actuation on the 9 coordinates; base rows must be 0
    external: np.ndarray  # contact + limit + gravity as generalized forces

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.external = np.asarray(self.external, dtype=float)
        if self.tau[0] != 0.0 or self.tau[1] != 0.0:
            raise ValueError("floating-base translations cannot be actuated directly")


def mass_matrix(spec: ModelSpec, q: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite joint-space mass matrix M(q)."""
    ch = chain_for(spec)
    q = np.asarray(q)
    frames = forward_kinematics(spec, q)
    dtype = np.result_type(q, float)
    M = np.zeros((NQ, NQ), dtype=dtype)
    for i in range(ch.nseg):
        Jv = point_jacobian(spec, frames, i, frames.coms[i])
        M += ch.masses[i] * (Jv.T @ Jv)
        anc = ch.ancestors[i]
        M[np.ix_(anc, anc)] += ch.inertias[i]
    return M


def bias_forces(spec: ModelSpec, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal generalized forces C(q, qd) qd."""
    ch = chain_for(spec)
    frames = forward_kinematics(spec, q, qdot)
    b = np.zeros(NQ)
    for i in range(ch.nseg):
        # velocity-product COM acceleration: sum_k qd_k * S (v_com - v_pivot_k)
        a_vp = np.zeros(2)
        for k in ch.ancestors[i]:
            v_piv = frames.v_origins[ch.pivot_seg[k]]
            a_vp += qdot[k] * (S90 @ (frames.v_coms[i] - v_piv))
        Jv = point_jacobian(spec, frames, i, frames.coms[i])
        b += ch.masses[i] * (Jv.T @ a_vp)
    return b


def coriolis_matrix(spec: ModelSpec, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Christoffel-symbol Coriolis matrix; satisfies skew-symmetry of Mdot - 2C.

    Partial derivatives of M are taken by complex step, so they are exact to
    machine precision. Used by verification code, not the integrator hot path.
    """
    h = 1e-20
    dM = np.zeros((NQ, NQ, NQ))
    for k in range(2, NQ):  # M does not depend on the base translations
        qc = np.asarray(q, dtype=complex).copy()
        qc[k] += 1j * h
        dM[k] = mass_matrix(spec, qc).imag / h
    C = np.zeros((NQ, NQ))
    for i in range(NQ):
        for j in range(NQ):
            cij = 0.0
            for k in range(NQ):
                cij += 0.5 * (dM[k][i, j] + dM[j][i, k] - dM[i][j, k]) * qdot[k]
            C[i, j] = cij
    return C


def gravity_forces(spec: ModelSpec, q: np.ndarray, g: float = GRAVITY) -> np.ndarray:
    ch = chain_for(spec)
    frames = forward_kinematics(spec, q)
    tau_g = np.zeros(NQ)
    grav = np.array([0.0, -g])
    for i in range(ch.nseg):
        Jv = point_jacobian(spec, frames, i, frames.coms[i])
        tau_g += ch.masses[i] * (Jv.T @ grav)
    return tau_g


def limit_forces(spec: ModelSpec, state: SimState,
                 k_lim: float = K_LIM, d_lim: float = D_LIM) -> np.ndarray:
    """Restoring joint-limit torques for coordinates outside their ranges.

    Zero inside the range; outside by delta, -k_lim*delta - d_lim*qd toward
    the range. The maximum magnitude is cached for the termination rule.
    """
    f = np.zeros(NQ)
    for j in spec.joints:
        i = JOINT_COORD[j.name]
        lo, hi = j.range
        qi = state.q[i]
        if qi > hi:
            f[i] = -k_lim * (qi - hi) - d_lim * state.qdot[i]
        elif qi < lo:
            f[i] = -k_lim * (qi - lo) - d_lim * state.qdot[i]
    state.limit_force_max_abs = float(np.max(np.abs(f)))
    return f


def total_energy(spec: ModelSpec, q: np.ndarray, qdot: np.ndarray,
                 g: float = GRAVITY) -> float:
    """Kinetic + gravitational potential energy (no contact, no springs)."""
    ch = chain_for(spec)
    M = mass_matrix(spec, q)
    frames = forward_kinematics(spec, q)
    kinetic = 0.5 * qdot @ M @ qdot
    potential = float(np.sum(ch.masses * frames.coms[:, 1])) * g
    return float(kinetic + potential)


def forward_dynamics(spec: ModelSpec, state: SimState,
                     forces: GeneralizedForces) -> np.ndarray:
    """Solve M qdd = tau + external - C qd; result is cached in state.qddot."""
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))
            and np.all(np.isfinite(forces.tau)) and np.all(np.isfinite(forces.external))):
        raise SimulationFault("non-finite input to forward dynamics")
    free = spec.free_coords()
    M = mass_matrix(spec, state.q)
    rhs = forces.tau + forces.external - bias_forces(spec, state.q, state.qdot)
    qdd = np.zeros(NQ)
    qdd[free] = np.linalg.solve(M[np.ix_(free, free)], rhs[free])
    if not np.all(np.isfinite(qdd)):
        bad = int(np.argmax(~np.isfinite(qdd)))
        raise SimulationFault(f"non-finite acceleration on coordinate {bad}")
    state.qddot = qdd
    return qdd


def step(spec: ModelSpec, state: SimState, tau: np.ndarray, dt: float,
         gravity: float = GRAVITY, with_contact: bool = True,
         with_limits: bool = True, k_lim: float = K_LIM,
         d_lim: float = D_LIM) -> SimState:
    """One semi-implicit Euler step with contact and limit forces.

    All external forces are evaluated at the pre-step state; velocities update
    first, then positions with the new velocities.
    """
    from .contact import accumulate_grf  # local import to avoid a cycle

    if not 0.0 < dt <= 0.01:
        raise ValueError(f"dt must be in (0, 0.01], got {dt}")
    new = state.copy()
    ext = gravity_forces(spec, state.q, gravity) if gravity else np.zeros(NQ)
    if with_contact:
        grf, wrenches = accumulate_grf(spec, state)
        ext = ext + grf
        new.grf_per_sphere = wrenches
    else:
        new.grf_per_sphere = []
    if with_limits:
        ext = ext + limit_forces(spec, new, k_lim=k_lim, d_lim=d_lim)
    else:
        new.limit_force_max_abs = 0.0
    qdd = forward_dynamics(spec, SimState(state.q, state.qdot, state.qddot,
                                          state.activations, state.time),
                           GeneralizedForces(tau, ext))
    new.qddot = qdd
    new.qdot = state.qdot + qdd * dt
    for j in spec.joints:
        if j.locked:
            i = JOINT_COORD[j.name]
            new.qdot[i] = 0.0
    new.q = state.q + new.qdot * dt
    for j in spec.joints:
        if j.locked:
            i = JOINT_COORD[j.name]
            new.q[i] = j.lock_angle
    new.time = state.time + dt
    bad = ~np.isfinite(new.q)
    if bad.any():
        raise SimulationFault(f"non-finite coordinate {int(np.argmax(bad))} after step")
    return new
