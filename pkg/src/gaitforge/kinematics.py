"""Forward kinematics of the planar chain: frames, Jacobians, COM, landmarks.

Everything here is written to accept complex-valued coordinates so callers can
take complex-step derivatives through it (used by the Coriolis-matrix builder
and by tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import JOINT_COORD, NQ, ModelSpec

# 90-degree rotation, d/dtheta of a rotation applied to a point
S90 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class Chain:
    """Precomputed tree structure for one ModelSpec (root first)."""

    seg_names: list[str]
    parent: list[int]            # -1 for root
    coord: list[int]             # rotational coordinate driving the segment
    parent_offset: np.ndarray    # (nseg, 2) joint location in parent frame
    com_offset: np.ndarray       # (nseg, 2)
    masses: np.ndarray
    inertias: np.ndarray
    ancestors: list[list[int]]   # rotational coords affecting each segment
    pivot_seg: dict[int, int]    # rot coord -> segment whose origin is the pivot

    @property
    def nseg(self) -> int:
        return len(self.seg_names)


_chain_cache: dict[int, Chain] = {}


def chain_for(spec: ModelSpec) -> Chain:
    key = id(spec)
    ch = _chain_cache.get(key)
    if ch is None:
        ch = _build_chain(spec)
        _chain_cache[key] = ch
    return ch


def _build_chain(spec: ModelSpec) -> Chain:
    by_child = {j.child: j for j in spec.joints}
    names: list[str] = []
    parent: list[int] = []
    coord: list[int] = []
    offsets: list[tuple[float, float]] = []
    # breadth-first from the pelvis root
    root = spec.segment("pelvis")
    names.append(root.name)
    parent.append(-1)
    coord.append(JOINT_COORD["pelvis_tilt"])
    offsets.append((0.0, 0.0))
    frontier = [root.name]
    while frontier:
        nxt = []
        for j in spec.joints:
            if j.parent in frontier and j.child not in names:
                names.append(j.child)
                parent.append(names.index(j.parent))
                coord.append(JOINT_COORD[j.name])
                offsets.append(j.parent_offset)
                nxt.append(j.child)
        frontier = nxt
    ancestors: list[list[int]] = []
    for i in range(len(names)):
        anc = []
        k = i
        while k >= 0:
            anc.append(coord[k])
            k = parent[k]
        ancestors.append(list(reversed(anc)))
    pivot_seg = {coord[i]: i for i in range(len(names))}
    segs = [spec.segment(n) for n in names]
    # unused by_child kept out; validated elsewhere
    del by_child
    return Chain(
        seg_names=names,
        parent=parent,
        coord=coord,
        parent_offset=np.array(offsets, dtype=float),
        com_offset=np.array([s.com_offset for s in segs], dtype=float),
        masses=np.array([s.mass for s in segs]),
        inertias=np.array([s.inertia_zz for s in segs]),
        ancestors=ancestors,
        pivot_seg=pivot_seg,
    )


@dataclass
class Frames:
    angles: np.ndarray       # (nseg,) world angle of each segment
    origins: np.ndarray      # (nseg, 2) world position of each segment origin
    coms: np.ndarray         # (nseg, 2)
    angdots: np.ndarray | None = None
    v_origins: np.ndarray | None = None
    v_coms: np.ndarray | None = None


def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def forward_kinematics(spec: ModelSpec, q: np.ndarray,
                       qdot: np.ndarray | None = None) -> Frames:
    """World pose (and, if qdot is given, velocity) of every segment."""
    ch = chain_for(spec)
    n = ch.nseg
    dtype = np.result_type(q, float)
    angles = np.zeros(n, dtype=dtype)
    origins = np.zeros((n, 2), dtype=dtype)
    coms = np.zeros((n, 2), dtype=dtype)
    angdots = v_origins = v_coms = None
    if qdot is not None:
        angdots = np.zeros(n, dtype=dtype)
        v_origins = np.zeros((n, 2), dtype=dtype)
        v_coms = np.zeros((n, 2), dtype=dtype)
    for i in range(n):
        p = ch.parent[i]
        k = ch.coord[i]
        if p < 0:
            angles[i] = q[k]
            origins[i] = q[0:2]
            if qdot is not None:
                angdots[i] = qdot[k]
                v_origins[i] = qdot[0:2]
        else:
            Rp = _rot(angles[p])
            off = Rp @ ch.parent_offset[i]
            angles[i] = angles[p] + q[k]
            origins[i] = origins[p] + off
            if qdot is not None:
                angdots[i] = angdots[p] + qdot[k]
                v_origins[i] = v_origins[p] + angdots[p] * (S90 @ off)
        Ri = _rot(angles[i])
        arm = Ri @ ch.com_offset[i]
        coms[i] = origins[i] + arm
        if qdot is not None:
            v_coms[i] = v_origins[i] + angdots[i] * (S90 @ arm)
    return Frames(angles, origins, coms, angdots, v_origins, v_coms)


def point_on_segment(spec: ModelSpec, frames: Frames, seg_name: str,
                     local: np.ndarray, with_velocity: bool = False):
    """World position (and velocity) of a point fixed in a segment frame."""
    ch = chain_for(spec)
    i = ch.seg_names.index(seg_name)
    arm = _rot(frames.angles[i]) @ np.asarray(local, dtype=float)
    pos = frames.origins[i] + arm
    if not with_velocity:
        return pos
    vel = frames.v_origins[i] + frames.angdots[i] * (S90 @ arm)
    return pos, vel


def point_jacobian(spec: ModelSpec, frames: Frames, seg_idx: int,
                   world_point: np.ndarray) -> np.ndarray:
    """2x9 Jacobian of a world point rigidly attached to segment seg_idx."""
    ch = chain_for(spec)
    dtype = np.result_type(frames.origins, float)
    J = np.zeros((2, NQ), dtype=dtype)
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    for k in ch.ancestors[seg_idx]:
        pivot = frames.origins[ch.pivot_seg[k]]
        r = world_point - pivot
        J[0, k] = -r[1]
        J[1, k] = r[0]
    return J


def angular_jacobian(spec: ModelSpec, seg_idx: int) -> np.ndarray:
    ch = chain_for(spec)
    J = np.zeros(NQ)
    J[ch.ancestors[seg_idx]] = 1.0
    return J


def com_position(spec: ModelSpec, q: np.ndarray) -> np.ndarray:
    ch = chain_for(spec)
    frames = forward_kinematics(spec, q)
    return (ch.masses[:, None] * frames.coms).sum(axis=0) / ch.masses.sum()


def com_state(spec: ModelSpec, q: np.ndarray, qdot: np.ndarray):
    """Whole-model COM position and velocity."""
    ch = chain_for(spec)
    frames = forward_kinematics(spec, q, qdot)
    m = ch.masses[:, None]
    total = ch.masses.sum()
    return (m * frames.coms).sum(axis=0) / total, (m * frames.v_coms).sum(axis=0) / total


# Landmark order used in observations: per-leg femur, tibia, talus, calcn,
# toes (right leg then left), with the whole-model COM appended by the caller.
LANDMARK_ORDER = tuple(
    f"{name}_{side}"
    for side in ("r", "l")
    for name in ("femur", "tibia", "talus", "calcn", "toes")
)


def landmark_states(spec: ModelSpec, q: np.ndarray, qdot: np.ndarray) -> dict:
    """World position and velocity of every named landmark."""
    frames = forward_kinematics(spec, q, qdot)
    out = {}
    ch = chain_for(spec)
    for i, seg_name in enumerate(ch.seg_names):
        seg = spec.segment(seg_name)
        side = seg_name.rsplit("_", 1)[-1] if "_" in seg_name else ""
        for lm_name, local in seg.landmarks:
            arm = _rot(frames.angles[i]) @ np.asarray(local, dtype=float)
            pos = frames.origins[i] + arm
            vel = frames.v_origins[i] + frames.angdots[i] * (S90 @ arm)
            key = f"{lm_name}_{side}" if side else lm_name
            out[key] = (pos, vel)
    return out
