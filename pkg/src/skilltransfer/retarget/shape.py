"""Bone-length alignment of a human skeleton to a humanoid skeleton."""

from __future__ import annotations

import numpy as np

from ..skeleton import Skeleton, fk_batch
from .mapping import JointMapping


class ScalingError(ValueError):
    pass


# lengths already within this of their target are left untouched, which
# makes the alignment exactly idempotent
_MATCH_TOL = 1e-12


def rest_positions(skeleton: Skeleton, offsets: np.ndarray | None = None) -> np.ndarray:
    """Frame positions in the zero pose with the root at the origin."""
    local = np.broadcast_to(np.eye(3), (1, skeleton.num_dofs, 3, 3))
    pos, _ = fk_batch(skeleton, np.zeros((1, 3)), np.eye(3)[None], local, offsets)
    return pos[0]


def _mapped_ancestor(skeleton: Skeleton, joint: int, mapped: set[int]) -> int | None:
    p = skeleton.joints[joint].parent
    while p >= 0:
        if p in mapped:
            return p
        p = skeleton.joints[p].parent
    return None


def bone_targets(human: Skeleton, humanoid: Skeleton, mapping: JointMapping) -> dict[int, tuple[int, float]]:
    """For each mapped human joint with a mapped ancestor: ``(ancestor, length)``.

    The length is the humanoid rest distance between the deepest humanoid
    joints of the two groups.
    """
    groups = mapping.groups()
    mapped = set(groups)
    robot_rest = rest_positions(humanoid)
    out = {}
    for a in sorted(groups):
        anc = _mapped_ancestor(human, a, mapped)
        if anc is None:
            continue
        end, anc_end = max(groups[a]), max(groups[anc])
        out[a] = (anc, float(np.linalg.norm(robot_rest[end] - robot_rest[anc_end])))
    return out


def align_skeleton_shape(human: Skeleton, humanoid: Skeleton, mapping: JointMapping) -> Skeleton:
    """Rescale mapped human bones so their lengths match the humanoid's.

    A mapped joint's bone runs from its nearest mapped ancestor.  Only the
    joint's own offset is scaled (by the positive factor that makes the
    ancestor distance equal the target), so unmapped bones keep their length
    and joint rotations are untouched.
    """
    mapping.validate(human, humanoid)
    offsets = human.offsets.copy()
    for a, (anc, length) in bone_targets(human, humanoid, mapping).items():
        rest = rest_positions(human, offsets)
        current = float(np.linalg.norm(rest[a] - rest[anc]))
        if abs(current - length) <= _MATCH_TOL:
            continue
        o = offsets[a]
        d = rest[human.joints[a].parent] - rest[anc]
        oo = float(o @ o)
        if oo == 0.0:
            raise ScalingError(f"human joint {human.joints[a].name!r} has a zero-length bone but target {length}")
        do = float(d @ o)
        disc = do * do - oo * (float(d @ d) - length * length)
        if disc < 0.0:
            raise ScalingError(f"bone of {human.joints[a].name!r} cannot reach length {length}")
        scale = (-do + np.sqrt(disc)) / oo
        if scale <= 0.0:
            raise ScalingError(f"bone of {human.joints[a].name!r} would need a non-positive scale")
        offsets[a] = o * scale
    return human.with_offsets(offsets)


def bone_lengths(skeleton: Skeleton, targets: dict[int, tuple[int, float]]) -> dict[int, float]:
    rest = rest_positions(skeleton)
    return {a: float(np.linalg.norm(rest[a] - rest[anc])) for a, (anc, _) in targets.items()}
