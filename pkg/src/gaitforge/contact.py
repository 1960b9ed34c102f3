"""Hunt-Crossley sphere-on-plane contact with regularized Coulomb friction.

Normal force: F = k*x^n + lambda*x^n*xdot, clamped at zero (no adhesion),
where x is sphere penetration into the y=0 plane. Friction is velocity
regularized: the effective coefficient ramps up with slip speed toward the
static value near sticking and settles at the dynamic value when sliding,
so the dynamics stay a smooth ODE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import chain_for, forward_kinematics, point_jacobian, _rot, S90
from .model import NQ, ContactParams, ModelSpec, SimState


@dataclass
class ContactWrench:
    sphere: int
    normal_force: float
    friction_force: float
    cop: np.ndarray          # world contact point
    penetration: float
    penetration_rate: float  # positive while compressing


def friction_coefficient(params: ContactParams, v_tangent: float) -> float:
    """Slip-speed dependent coefficient, bounded by mu_static."""
    s = abs(v_tangent) / params.v_transition
    if s <= 1.0:
        return params.mu_static * s
    if s <= 2.0:
        return params.mu_dynamic + (params.mu_static - params.mu_dynamic) * (2.0 - s)
    return params.mu_dynamic


def contact_force(params: ContactParams, radius: float,
                  center: np.ndarray, velocity: np.ndarray,
                  sphere_id: int = 0) -> ContactWrench:
    """Contact wrench of one sphere against the ground plane y = 0."""
    x = radius - center[1]
    if x <= 0.0:
        return ContactWrench(sphere_id, 0.0, 0.0,
                             np.array([center[0], 0.0]), 0.0, 0.0)
    xdot = -velocity[1]  # compression rate
    xn = x ** params.n
    fn = params.k * xn + params.lambda_damp * xn * xdot
    fn = max(fn, 0.0)
    vt = velocity[0]
    ft = -np.sign(vt) * friction_coefficient(params, vt) * fn
    return ContactWrench(sphere_id, float(fn), float(ft),
                         np.array([center[0], 0.0]), float(x), float(xdot))


def accumulate_grf(spec: ModelSpec, state: SimState):
    """Generalized contact forces J^T f summed over all spheres.

    Returns the 9-vector and the per-sphere wrench list (cached by the
    integrator for observation normalization and diagnostics).
    """
    frames = forward_kinematics(spec, state.q, state.qdot)
    ch = chain_for(spec)
    gen = np.zeros(NQ)
    wrenches = []
    for sid, sphere in enumerate(spec.contact_spheres):
        i = ch.seg_names.index(sphere.foot)
        arm = _rot(frames.angles[i]) @ np.asarray(sphere.local, dtype=float)
        pos = frames.origins[i] + arm
        vel = frames.v_origins[i] + frames.angdots[i] * (S90 @ arm)
        w = contact_force(spec.contact_params, sphere.radius, pos, vel, sphere_id=sid)
        wrenches.append(w)
        if w.normal_force > 0.0 or w.friction_force != 0.0:
            J = point_jacobian(spec, frames, i, pos)
            gen += J.T @ np.array([w.friction_force, w.normal_force])
    return gen, wrenches
