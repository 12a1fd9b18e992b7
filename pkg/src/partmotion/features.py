"""Motion records and the per-part frame feature codec.

Each frame of a part is encoded as the tuple
``[root vel x, root vel z, root yaw vel, joint positions, joint
velocities, joint rotations]`` where positions are root-relative with the
heading removed, velocities are heading-aligned world deltas per frame,
and rotations use the continuous 6D encoding (first two rotation-matrix
columns). Feature width per part is ``3 + 12 * n_joints``.

Encoding consumes one frame for velocities (N frames in, N-1 feature
frames out) and is invariant to world translation and to rotation about
the vertical axis. ``decode_features`` inverts the map given the initial
root position and heading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .skeleton import PartPartition, SkeletonSpec

UP_AXIS = 1  # y-up


@dataclass
class MotionRecord:
    """One prompt-labeled motion clip: world joint positions + confidences."""

    id: str
    prompt: str
    fps: float
    positions: np.ndarray     # (N, J, 3) meters, world frame
    confidences: np.ndarray   # (N, J) in [0, 1]
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_joints(self) -> int:
        return self.positions.shape[1]

    def validate(self) -> None:
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"positions must be (N, J, 3), got {self.positions.shape}")
        if self.num_frames < 2:
            raise ValueError("need at least 2 frames")
        if not np.isfinite(self.positions).all():
            raise ValueError(f"record {self.id}: non-finite positions")
        if self.confidences.shape != self.positions.shape[:2]:
            raise ValueError(
                f"confidences shape {self.confidences.shape} does not match "
                f"positions {self.positions.shape[:2]}"
            )
        if self.confidences.min() < 0.0 or self.confidences.max() > 1.0:
            raise ValueError("confidences must lie in [0, 1]")


@dataclass
class PartFeatureSequence:
    """Feature frames for one part: (N', 3 + 12 * n_joints)."""

    part_id: int
    part_name: str
    joints: tuple[int, ...]
    frames: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def feature_dim(n_joints: int) -> int:
    return 3 + 12 * n_joints


# ---------------------------------------------------------------------------
# JSON Lines corpus interchange


def record_to_json(record: MotionRecord) -> str:
    doc = {
        "id": record.id,
        "prompt": record.prompt,
        "fps": record.fps,
        "positions": record.positions.tolist(),
        "confidences": record.confidences.tolist(),
    }
    for key in sorted(record.meta):
        doc[key] = record.meta[key]
    return json.dumps(doc, sort_keys=True)


def record_from_json(line: str) -> MotionRecord:
    doc = json.loads(line)
    known = {"id", "prompt", "fps", "positions", "confidences"}
    record = MotionRecord(
        id=doc["id"],
        prompt=doc["prompt"],
        fps=float(doc["fps"]),
        positions=np.asarray(doc["positions"], dtype=float),
        confidences=np.asarray(doc["confidences"], dtype=float),
        meta={k: v for k, v in doc.items() if k not in known},
    )
    record.validate()
    return record


def save_corpus(records: list[MotionRecord], path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(record_to_json(record))
            fh.write("\n")


def load_corpus(path) -> list[MotionRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(line))
    return records


# ---------------------------------------------------------------------------
# Heading and rotation helpers


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return np.mod(a + np.pi, 2.0 * np.pi) - np.pi


def _yaw_matrices(theta: np.ndarray) -> np.ndarray:
    """Rotation matrices about the vertical axis, (..., 3, 3)."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def heading_angles(positions: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """Per-frame facing angle about the vertical axis, from hips + shoulders.

    Zero heading faces +z; the angle is the yaw that maps local +z onto the
    body's forward direction.
    """
    names = list(skeleton.joint_names)
    l_hip, r_hip = names.index("left_hip"), names.index("right_hip")
    l_sh, r_sh = names.index("left_shoulder"), names.index("right_shoulder")

    across = (positions[:, r_hip] - positions[:, l_hip]) + (
        positions[:, r_sh] - positions[:, l_sh]
    )
    forward_x = across[:, 2]
    forward_z = -across[:, 0]
    norm = np.hypot(forward_x, forward_z)

    theta = np.arctan2(forward_x, forward_z)
    # Degenerate frames (collapsed hip/shoulder lines) hold the last heading.
    bad = norm < 1e-9
    if bad.any():
        theta = theta.copy()
        last = 0.0
        for i in range(len(theta)):
            if bad[i]:
                theta[i] = last
            else:
                last = theta[i]
    return theta


def rotation_6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the 6D encoding (..., 6) back to matrices (..., 3, 3)."""
    a1, a2 = r6[..., 0:3], r6[..., 3:6]
    b1 = a1 / np.maximum(np.linalg.norm(a1, axis=-1, keepdims=True), 1e-12)
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = a2p / np.maximum(np.linalg.norm(a2p, axis=-1, keepdims=True), 1e-12)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rotation_6d(mat: np.ndarray) -> np.ndarray:
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def _bone_rotations(local_pos: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """Per-joint frames built from bone directions, (N, J, 3, 3).

    The first column points along the bone to the joint's first child;
    leaves get the identity. Input positions are already heading-removed,
    so the result is invariant to world yaw and translation.
    """
    n, j = local_pos.shape[:2]
    rot = np.tile(np.eye(3), (n, j, 1, 1))
    first_child = {}
    for child, parent in enumerate(skeleton.parent_index):
        if parent >= 0 and parent not in first_child:
            first_child[parent] = child

    up = np.array([0.0, 1.0, 0.0])
    fwd = np.array([0.0, 0.0, 1.0])
    for joint, child in first_child.items():
        bone = local_pos[:, child] - local_pos[:, joint]
        norm = np.linalg.norm(bone, axis=-1, keepdims=True)
        ok = norm[:, 0] > 1e-9
        b1 = np.where(norm > 1e-9, bone / np.maximum(norm, 1e-12), up)
        ref = np.where(np.abs(b1 @ up)[:, None] > 0.99, fwd, up)
        a2 = ref - np.sum(b1 * ref, axis=-1, keepdims=True) * b1
        b2 = a2 / np.maximum(np.linalg.norm(a2, axis=-1, keepdims=True), 1e-12)
        b3 = np.cross(b1, b2)
        frame = np.stack([b1, b2, b3], axis=-1)
        rot[ok, joint] = frame[ok]
    return rot


# ---------------------------------------------------------------------------
# Encode / decode


def _encode_joint_set(
    record: MotionRecord,
    skeleton: SkeletonSpec,
    joints: tuple[int, ...],
    theta: np.ndarray,
    local_pos: np.ndarray,
    local_vel: np.ndarray,
    rot6: np.ndarray,
    root_vel_local: np.ndarray,
    yaw_vel: np.ndarray,
) -> np.ndarray:
    n_out = record.num_frames - 1
    jsel = list(joints)
    root_block = np.stack([root_vel_local[:, 0], root_vel_local[:, 2], yaw_vel], axis=1)
    jp = local_pos[:n_out, jsel].reshape(n_out, -1)
    jv = local_vel[:, jsel].reshape(n_out, -1)
    jr = rot6[:n_out, jsel].reshape(n_out, -1)
    return np.concatenate([root_block, jp, jv, jr], axis=1)


def _encode_common(record: MotionRecord, skeleton: SkeletonSpec):
    record.validate()
    pos = record.positions
    n = record.num_frames
    theta = heading_angles(pos, skeleton)
    inv_yaw = _yaw_matrices(-theta)

    rel = pos - pos[:, 0:1]
    local_pos = np.einsum("nab,njb->nja", inv_yaw, rel)

    world_vel = pos[1:] - pos[:-1]
    local_vel = np.einsum("nab,njb->nja", inv_yaw[:-1], world_vel)

    root_vel_local = local_vel[:, 0]
    yaw_vel = _wrap_angle(theta[1:] - theta[:-1])

    rot = _bone_rotations(local_pos, skeleton)
    rot6 = matrix_to_rotation_6d(rot)
    return theta, local_pos, local_vel, rot6, root_vel_local, yaw_vel, n


def encode_features(
    record: MotionRecord, skeleton: SkeletonSpec, partition: PartPartition
) -> list[PartFeatureSequence]:
    """Encode a record into the five per-part feature sequences."""
    theta, local_pos, local_vel, rot6, root_vel, yaw_vel, _ = _encode_common(
        record, skeleton
    )
    out = []
    for pid, part in enumerate(partition.parts):
        joints = partition.joints_of[part]
        frames = _encode_joint_set(
            record, skeleton, joints, theta, local_pos, local_vel, rot6, root_vel, yaw_vel
        )
        out.append(
            PartFeatureSequence(part_id=pid, part_name=part, joints=joints, frames=frames)
        )
    return out


def encode_fullbody(record: MotionRecord, skeleton: SkeletonSpec) -> PartFeatureSequence:
    """Whole-body variant of the frame tuple (all joints in one sequence)."""
    theta, local_pos, local_vel, rot6, root_vel, yaw_vel, _ = _encode_common(
        record, skeleton
    )
    joints = tuple(range(skeleton.num_joints))
    frames = _encode_joint_set(
        record, skeleton, joints, theta, local_pos, local_vel, rot6, root_vel, yaw_vel
    )
    return PartFeatureSequence(part_id=0, part_name="fullbody", joints=joints, frames=frames)


def root_init_of(record: MotionRecord, skeleton: SkeletonSpec) -> tuple[np.ndarray, float]:
    """Integration constants for decode: root position and heading at frame 0."""
    theta = heading_angles(record.positions[:1], skeleton)
    return record.positions[0, 0].copy(), float(theta[0])


def _split_frame_block(frames: np.ndarray, n_joints: int):
    jp = frames[:, 3 : 3 + 3 * n_joints].reshape(len(frames), n_joints, 3)
    jv = frames[:, 3 + 3 * n_joints : 3 + 6 * n_joints].reshape(len(frames), n_joints, 3)
    jr = frames[:, 3 + 6 * n_joints :].reshape(len(frames), n_joints, 6)
    return jp, jv, jr


def decode_features(
    part_seqs: list[PartFeatureSequence],
    skeleton: SkeletonSpec,
    partition: PartPartition,
    root_init: tuple[np.ndarray, float] | None = None,
) -> np.ndarray:
    """Invert the feature encoding back to world joint positions (N', J, 3).

    Root planar velocity and yaw are averaged across the five parts and
    integrated from ``root_init``; joints carried by several parts are
    averaged.
    """
    lengths = {seq.num_frames for seq in part_seqs}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent part lengths: {sorted(lengths)}")
    n = lengths.pop()
    j_total = skeleton.num_joints

    if root_init is None:
        root_init = (skeleton.rest_positions()[0], 0.0)
    root0, theta0 = np.asarray(root_init[0], dtype=float), float(root_init[1])

    root_block = np.mean([seq.frames[:, :3] for seq in part_seqs], axis=0)
    vx, vz, va = root_block[:, 0], root_block[:, 1], root_block[:, 2]

    # Vertical root velocity rides on each part's copy of the root joint.
    vy_copies = []
    for seq in part_seqs:
        slot = seq.joints.index(0)
        _, jv, _ = _split_frame_block(seq.frames, len(seq.joints))
        vy_copies.append(jv[:, slot, 1])
    vy = np.mean(vy_copies, axis=0)

    theta = np.empty(n)
    theta[0] = theta0
    theta[1:] = theta0 + np.cumsum(va[:-1])
    yaw = _yaw_matrices(theta)

    root = np.empty((n, 3))
    root[0] = root0
    step_local = np.stack([vx, np.zeros(n), vz], axis=1)
    step_world = np.einsum("nab,nb->na", yaw, step_local)
    root[1:, 0] = root0[0] + np.cumsum(step_world[:-1, 0])
    root[1:, 2] = root0[2] + np.cumsum(step_world[:-1, 2])
    root[1:, 1] = root0[1] + np.cumsum(vy[:-1])

    acc = np.zeros((n, j_total, 3))
    count = np.zeros(j_total)
    for seq in part_seqs:
        jp, _, _ = _split_frame_block(seq.frames, len(seq.joints))
        world = np.einsum("nab,njb->nja", yaw, jp) + root[:, None, :]
        for slot, joint in enumerate(seq.joints):
            acc[:, joint] += world[:, slot]
            count[joint] += 1
    if (count == 0).any():
        missing = [skeleton.joint_names[k] for k in np.flatnonzero(count == 0)]
        raise ValueError(f"no part carries joints: {missing}")
    return acc / count[None, :, None]


def decode_fullbody(
    seq: PartFeatureSequence,
    skeleton: SkeletonSpec,
    root_init: tuple[np.ndarray, float] | None = None,
) -> np.ndarray:
    """Decode the whole-body feature variant (single sequence, all joints)."""
    if root_init is None:
        root_init = (skeleton.rest_positions()[0], 0.0)
    root0, theta0 = np.asarray(root_init[0], dtype=float), float(root_init[1])
    n = seq.num_frames
    vx, vz, va = seq.frames[:, 0], seq.frames[:, 1], seq.frames[:, 2]
    jp, jv, _ = _split_frame_block(seq.frames, len(seq.joints))

    theta = np.empty(n)
    theta[0] = theta0
    theta[1:] = theta0 + np.cumsum(va[:-1])
    yaw = _yaw_matrices(theta)

    slot = seq.joints.index(0)
    vy = jv[:, slot, 1]
    root = np.empty((n, 3))
    root[0] = root0
    step_world = np.einsum("nab,nb->na", yaw, np.stack([vx, np.zeros(n), vz], axis=1))
    root[1:, 0] = root0[0] + np.cumsum(step_world[:-1, 0])
    root[1:, 2] = root0[2] + np.cumsum(step_world[:-1, 2])
    root[1:, 1] = root0[1] + np.cumsum(vy[:-1])

    world = np.einsum("nab,njb->nja", yaw, jp) + root[:, None, :]
    out = np.zeros((n, skeleton.num_joints, 3))
    for s, joint in enumerate(seq.joints):
        out[:, joint] = world[:, s]
    return out
