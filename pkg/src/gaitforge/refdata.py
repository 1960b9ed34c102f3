"""Reference gait clips: loading, phase sampling, derived task-space targets.

A clip stores generalized coordinates only; joint velocities, landmark
positions/velocities relative to the pelvis, and the whole-model COM are all
derived through the same forward kinematics as the simulator, so a perfectly
tracking policy can reach reward 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kinematics
from .model import JOINT_COORD, JOINT_NAMES, NQ, ModelSpec

CSV_COLUMNS = ("time", "pelvis_tx", "pelvis_ty", "pelvis_tilt",
               "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l")
# coordinate index in q for each non-time CSV column
_COORD_FOR_COLUMN = {"pelvis_tx": 0, "pelvis_ty": 1,
                     **{name: JOINT_COORD[name] for name in JOINT_NAMES}}
RANGE_SLACK = 0.05  # fraction of range width tolerated beyond the limits
DT_TOLERANCE = 1e-6

# landmarks used for the end-effector reward term
END_EFFECTORS = ("toes_r", "toes_l", "calcn_r", "calcn_l")


class ClipLoadError(ValueError):
    """Reference clip file cannot be used; message names the row/column."""


@dataclass
class ReferenceTargets:
    q: np.ndarray               # 9-vector, pelvis_tx shifted by wraps*stride
    qdot: np.ndarray
    landmarks_rel: np.ndarray   # (10, 2) pelvis-relative landmark positions
    landmark_vel_rel: np.ndarray
    com: np.ndarray             # world frame, wrap-shifted
    com_vel: np.ndarray

    def end_effectors_rel(self) -> np.ndarray:
        idx = [kinematics.LANDMARK_ORDER.index(n) for n in END_EFFECTORS]
        return self.landmarks_rel[idx]


class GaitClip:
    """Time-indexed reference trajectory with derived task-space targets."""

    def __init__(self, frames: np.ndarray, dt: float, model: ModelSpec):
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 2 or frames.shape[1] != NQ or frames.shape[0] < 2:
            raise ClipLoadError(f"expected (>=2, {NQ}) frame array, got {frames.shape}")
        if not dt > 0:
            raise ClipLoadError(f"frame spacing must be positive, got {dt}")
        self.frames = frames
        self.dt = float(dt)
        self.duration = (len(frames) - 1) * self.dt
        self.stride_displacement = float(frames[-1, 0] - frames[0, 0])
        self.qdot = np.gradient(frames, self.dt, axis=0)
        n = len(frames)
        self.landmarks_rel = np.zeros((n, len(kinematics.LANDMARK_ORDER), 2))
        self.landmark_vel_rel = np.zeros_like(self.landmarks_rel)
        self.com = np.zeros((n, 2))
        self.com_vel = np.zeros((n, 2))
        for i in range(n):
            q, qd = frames[i], self.qdot[i]
            lms = kinematics.landmark_states(model, q, qd)
            pelvis = q[0:2]
            pelvis_vel = qd[0:2]
            for li, name in enumerate(kinematics.LANDMARK_ORDER):
                pos, vel = lms[name]
                self.landmarks_rel[i, li] = pos - pelvis
                self.landmark_vel_rel[i, li] = vel - pelvis_vel
            self.com[i], self.com_vel[i] = kinematics.com_state(model, q, qd)
        # how far the clip is from exactly periodic (pelvis_tx excluded; its
        # progression is absorbed by stride_displacement)
        seam = np.abs(frames[-1] - frames[0])
        seam[0] = 0.0
        self.periodicity_residual = float(seam.max())

    def __len__(self) -> int:
        return len(self.frames)

    def sample(self, phase: float, wraps: int = 0) -> ReferenceTargets:
        """Linear interpolation of all targets at phase in [0,1).

        pelvis_tx (and the COM) are shifted forward by wraps whole strides so
        targets keep progressing on wrapped clips.
        """
        if not 0.0 <= phase < 1.0:
            phase = phase % 1.0
        t = phase * self.duration
        i = min(int(t / self.dt), len(self.frames) - 2)
        frac = t / self.dt - i

        def lerp(arr):
            return (1.0 - frac) * arr[i] + frac * arr[i + 1]

        shift = wraps * self.stride_displacement
        q = lerp(self.frames).copy()
        q[0] += shift
        com = lerp(self.com).copy()
        com[0] += shift
        return ReferenceTargets(
            q=q,
            qdot=lerp(self.qdot).copy(),
            landmarks_rel=lerp(self.landmarks_rel).copy(),
            landmark_vel_rel=lerp(self.landmark_vel_rel).copy(),
            com=com,
            com_vel=lerp(self.com_vel).copy(),
        )

    def summary(self) -> dict:
        joint_ranges = {}
        for name in JOINT_NAMES:
            col = self.frames[:, JOINT_COORD[name]]
            joint_ranges[name] = (float(col.min()), float(col.max()))
        return {
            "frames": len(self.frames),
            "dt": self.dt,
            "duration": self.duration,
            "stride_displacement": self.stride_displacement,
            "periodicity_residual": self.periodicity_residual,
            "joint_ranges": joint_ranges,
        }


def load_clip(path: str, model: ModelSpec) -> GaitClip:
    """Load a reference clip from CSV and derive all task-space targets.

    Expected header: time,pelvis_tx,pelvis_ty,pelvis_tilt,hip_r,knee_r,
    ankle_r,hip_l,knee_l,ankle_l (angles rad, positions m, uniform time grid).
    """
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            rows = list(reader)
    except OSError as e:
        raise ClipLoadError(f"cannot read {path}: {e}") from e
    if not rows:
        raise ClipLoadError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for col in CSV_COLUMNS:
        if col not in header:
            raise ClipLoadError(f"{path}: missing column {col!r}")
    idx = {col: header.index(col) for col in CSV_COLUMNS}
    times = []
    frames = []
    for ri, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        q = np.zeros(NQ)
        for col in CSV_COLUMNS:
            try:
                val = float(row[idx[col]])
            except (ValueError, IndexError) as e:
                raise ClipLoadError(f"{path}: row {ri}, column {col!r}: bad value") from e
            if col == "time":
                times.append(val)
            else:
                q[_COORD_FOR_COLUMN[col]] = val
        frames.append(q)
    if len(frames) < 2:
        raise ClipLoadError(f"{path}: need at least 2 frames, got {len(frames)}")
    times = np.asarray(times)
    dts = np.diff(times)
    dt = dts[0]
    if np.any(np.abs(dts - dt) > DT_TOLERANCE):
        bad = int(np.argmax(np.abs(dts - dt) > DT_TOLERANCE)) + 2
        raise ClipLoadError(f"{path}: non-uniform time spacing at row {bad + 1}")
    frames = np.asarray(frames)
    for j in model.joints:
        ci = JOINT_COORD[j.name]
        lo, hi = j.range
        slack = RANGE_SLACK * (hi - lo)
        col = frames[:, ci]
        bad = np.flatnonzero((col < lo - slack) | (col > hi + slack))
        if bad.size:
            ri = int(bad[0]) + 2
            raise ClipLoadError(
                f"{path}: row {ri}, column {j.name!r}: value {col[bad[0]]:.4f} "
                f"outside range [{lo:.4f}, {hi:.4f}]")
    return GaitClip(frames, float(dt), model)


def write_clip_csv(path: str, frames: np.ndarray, dt: float) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for i, q in enumerate(frames):
            row = [repr(i * dt)] + [repr(float(q[_COORD_FOR_COLUMN[c]]))
                                    for c in CSV_COLUMNS[1:]]
            writer.writerow(row)


def make_synthetic_clip(model: ModelSpec, n_frames: int = 130, dt: float = 0.01,
                        seed: int = 0, speed: float = 1.0) -> GaitClip:
    """Deterministic sinusoidal two-step walk for tests and demos.

    Joint trajectories are periodic over the clip so the wrap seam is smooth;
    pelvis height is solved per frame so the lower foot's contact spheres sit
    at the ground, which keeps the clip kinematically plausible.
    """
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-0.02, 0.02, size=4)
    T = (n_frames - 1) * dt
    t = np.arange(n_frames) * dt
    w = 2.0 * np.pi / T
    frames = np.zeros((n_frames, NQ))
    frames[:, 0] = speed * t
    frames[:, JOINT_COORD["pelvis_tilt"]] = 0.04 * np.sin(2 * w * t + jitter[0])
    frames[:, JOINT_COORD["hip_r"]] = 0.35 * np.sin(w * t + jitter[1])
    frames[:, JOINT_COORD["hip_l"]] = 0.35 * np.sin(w * t + np.pi + jitter[1])
    frames[:, JOINT_COORD["knee_r"]] = -0.30 + 0.25 * np.cos(w * t + 0.7 + jitter[2])
    frames[:, JOINT_COORD["knee_l"]] = -0.30 + 0.25 * np.cos(w * t + np.pi + 0.7 + jitter[2])
    frames[:, JOINT_COORD["ankle_r"]] = 0.10 * np.sin(w * t + 0.3 + jitter[3])
    frames[:, JOINT_COORD["ankle_l"]] = 0.10 * np.sin(w * t + np.pi + 0.3 + jitter[3])
    # place the pelvis so the lowest contact sphere rests at its static
    # penetration depth (k x^n = m g), so contact supports the weight at reset
    cp = model.contact_params
    x_static = (model.total_mass * 9.80665 / cp.k) ** (1.0 / cp.n)
    for i in range(n_frames):
        q = frames[i].copy()
        q[1] = 0.0
        fr = kinematics.forward_kinematics(model, q)
        ch = kinematics.chain_for(model)
        lowest = np.inf
        for sphere in model.contact_spheres:
            si = ch.seg_names.index(sphere.foot)
            arm = kinematics._rot(fr.angles[si]) @ np.asarray(sphere.local)
            bottom = fr.origins[si][1] + arm[1] - sphere.radius
            lowest = min(lowest, bottom)
        frames[i, 1] = -lowest - x_static
    # keep pelvis height periodic over the wrap seam
    frames[:, 1] += np.linspace(0.0, frames[0, 1] - frames[-1, 1], n_frames)
    return GaitClip(frames, dt, model)
