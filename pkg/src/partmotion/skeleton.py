"""Joint hierarchy and its decomposition into five kinematic chains.

The default body is a 22-joint humanoid in the SMPL-style layout (y-up,
left = +x). The five parts are torso, left/right arm, left/right leg; the
root and the three spine joints are shared by every part so each part
carries the global context of the body.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROOT_SENTINEL = -1

PART_NAMES = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")

_JOINT_NAMES = (
    "pelvis",
    "left_hip", "right_hip", "spine1",
    "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3",
    "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
)

_PARENTS = (
    ROOT_SENTINEL,
    0, 0, 0,
    1, 2, 3,
    4, 5, 6,
    7, 8, 9,
    9, 9, 12,
    13, 14,
    16, 17,
    18, 19,
)

# Offset of each joint from its parent in the rest pose (meters).
# The root offset is its absolute rest position.
_REST_OFFSETS = (
    (0.00, 0.94, 0.00),      # pelvis
    (0.10, -0.06, 0.00),     # left_hip
    (-0.10, -0.06, 0.00),    # right_hip
    (0.00, 0.11, 0.00),      # spine1
    (0.00, -0.40, 0.00),     # left_knee
    (0.00, -0.40, 0.00),     # right_knee
    (0.00, 0.12, 0.00),      # spine2
    (0.00, -0.42, 0.00),     # left_ankle
    (0.00, -0.42, 0.00),     # right_ankle
    (0.00, 0.13, 0.00),      # spine3
    (0.00, -0.06, 0.13),     # left_foot
    (0.00, -0.06, 0.13),     # right_foot
    (0.00, 0.14, 0.00),      # neck
    (0.07, 0.09, 0.00),      # left_collar
    (-0.07, 0.09, 0.00),     # right_collar
    (0.00, 0.16, 0.00),      # head
    (0.11, 0.02, 0.00),      # left_shoulder
    (-0.11, 0.02, 0.00),     # right_shoulder
    (0.26, 0.00, 0.00),      # left_elbow
    (-0.26, 0.00, 0.00),     # right_elbow
    (0.25, 0.00, 0.00),      # left_wrist
    (-0.25, 0.00, 0.00),     # right_wrist
)

_SHARED = (0, 3, 6, 9)  # pelvis + spine chain

_CHAINS = {
    "torso": (12, 15),
    "left_arm": (13, 16, 18, 20),
    "right_arm": (14, 17, 19, 21),
    "left_leg": (1, 4, 7, 10),
    "right_leg": (2, 5, 8, 11),
}


@dataclass(frozen=True)
class SkeletonSpec:
    """A joint tree: names, parent indices and rest-pose offsets."""

    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    rest_offsets: np.ndarray  # (J, 3) meters, offset from parent

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def rest_positions(self) -> np.ndarray:
        """Global joint positions of the rest pose, (J, 3)."""
        pos = np.zeros((self.num_joints, 3))
        for j, parent in enumerate(self.parent_index):
            if parent == ROOT_SENTINEL:
                pos[j] = self.rest_offsets[j]
            else:
                pos[j] = pos[parent] + self.rest_offsets[j]
        return pos

    def children_of(self, joint: int) -> list[int]:
        return [j for j, p in enumerate(self.parent_index) if p == joint]

    def validate(self) -> None:
        if self.num_joints < 6:
            raise ValueError(f"need at least 6 joints, got {self.num_joints}")
        if self.parent_index[0] != ROOT_SENTINEL:
            raise ValueError("joint 0 must be the root")
        for j, p in enumerate(self.parent_index[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"joint {j} has invalid parent {p}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "joint_names": list(self.joint_names),
                "parent_index": list(self.parent_index),
                "rest_offsets": self.rest_offsets.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SkeletonSpec":
        doc = json.loads(text)
        spec = cls(
            joint_names=tuple(doc["joint_names"]),
            parent_index=tuple(doc["parent_index"]),
            rest_offsets=np.asarray(doc["rest_offsets"], dtype=float),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class PartPartition:
    """Decomposition of a skeleton into five parts with shared core joints.

    ``joints_of[part]`` lists the joints a part's feature representation
    carries (shared core first, then the part's own chain).  ``chain_of``
    gives the part-exclusive chain only; confidence scoring uses the chain
    so that one part's visibility does not leak into another's.
    """

    parts: tuple[str, ...]
    joints_of: dict[str, tuple[int, ...]]
    shared_joints: tuple[int, ...]
    chain_of: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.chain_of:
            shared = set(self.shared_joints)
            object.__setattr__(
                self,
                "chain_of",
                {p: tuple(j for j in self.joints_of[p] if j not in shared) for p in self.parts},
            )

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def part_index(self, name: str) -> int:
        return self.parts.index(name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "parts": list(self.parts),
                "joints_of": {p: list(self.joints_of[p]) for p in self.parts},
                "shared_joints": list(self.shared_joints),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PartPartition":
        doc = json.loads(text)
        return cls(
            parts=tuple(doc["parts"]),
            joints_of={p: tuple(doc["joints_of"][p]) for p in doc["parts"]},
            shared_joints=tuple(doc["shared_joints"]),
        )


def build_default_skeleton() -> tuple[SkeletonSpec, PartPartition]:
    """The embedded 22-joint humanoid and its five-part partition."""
    skeleton = SkeletonSpec(
        joint_names=_JOINT_NAMES,
        parent_index=_PARENTS,
        rest_offsets=np.asarray(_REST_OFFSETS, dtype=float),
    )
    skeleton.validate()
    partition = PartPartition(
        parts=PART_NAMES,
        joints_of={name: _SHARED + _CHAINS[name] for name in PART_NAMES},
        shared_joints=_SHARED,
    )
    return skeleton, partition


def validate_partition(skeleton: SkeletonSpec, partition: PartPartition) -> list[str]:
    """Check every partition invariant; returns one entry per violation."""
    report: list[str] = []
    names = skeleton.joint_names

    if partition.num_parts != 5:
        report.append(f"expected 5 parts, got {partition.num_parts}")

    covered: set[int] = set()
    for part in partition.parts:
        covered.update(partition.joints_of[part])
    for j in range(skeleton.num_joints):
        if j not in covered:
            report.append(f"uncovered joint: {names[j]}")

    for part in partition.parts:
        joint_set = set(partition.joints_of[part])
        for j in partition.shared_joints:
            if j not in joint_set:
                report.append(f"missing shared joint {names[j]} in part {part}")

    shared = set(partition.shared_joints)
    owner: dict[int, str] = {}
    for part in partition.parts:
        for j in partition.joints_of[part]:
            if j in shared:
                continue
            if j in owner:
                report.append(
                    f"joint {names[j]} in multiple parts: {owner[j]}, {part}"
                )
            else:
                owner[j] = part

    return report
