"""Copy-rotation retargeting: transplant human joint rotations onto revolute axes."""

from __future__ import annotations

import numpy as np

from ..motion import MotionSequence
from ..rotations import axis_angle_to_matrix, quat_to_matrix
from ..skeleton import Skeleton, load_skeleton
from .mapping import JointMapping, MappingError

_PARALLEL_TOL = 1e-9


class DegenerateMappingError(MappingError):
    pass


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(angle), np.cos(angle))


def _twist_angle(rot: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Angle of the twist component of ``rot`` (…, 3, 3) about ``axis``."""
    # 2 * atan2(q_v . a, q_w) with q_w, q_v from the matrix trace / skew part
    skew = np.stack(
        [rot[..., 2, 1] - rot[..., 1, 2], rot[..., 0, 2] - rot[..., 2, 0], rot[..., 1, 0] - rot[..., 0, 1]],
        axis=-1,
    )
    tr = rot[..., 0, 0] + rot[..., 1, 1] + rot[..., 2, 2]
    # q_w = sqrt(1 + tr) / 2 and q_v = skew / (4 q_w); scaling both atan2
    # arguments by 4 q_w >= 0 leaves the angle unchanged.
    return _wrap(2.0 * np.arctan2(skew @ axis, 1.0 + tr))


def _tait_bryan(rot: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angles (t1, t2, t3) with ``rot = R(a1, t1) R(a2, t2) R(a1 x a2, t3)``.

    ``a1`` and ``a2`` must be orthonormal.
    """
    basis = np.stack([a1, a2, np.cross(a1, a2)], axis=-1)
    m = basis.T @ rot @ basis
    t1 = np.arctan2(-m[..., 1, 2], m[..., 2, 2])
    t2 = np.arctan2(m[..., 0, 2], np.hypot(m[..., 1, 2], m[..., 2, 2]))
    t3 = np.arctan2(-m[..., 0, 1], m[..., 0, 0])
    return t1, t2, t3


def _projected_pair(rot: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-axis decomposition for non-orthogonal axes.

    The first angle turns ``a2`` (about ``a1``) as close as possible to
    ``rot @ a2``; the second is the remaining twist about ``a2``.
    """
    target = rot @ a2
    u = a2 - a1 * (a1 @ a2)
    v = target - (target @ a1)[..., None] * a1
    t1 = np.arctan2(np.cross(u, v) @ a1, v @ u)
    first = axis_angle_to_matrix(a1, t1)
    rest = np.swapaxes(first, -1, -2) @ rot
    return t1, _twist_angle(rest, a2)


def decompose_onto_axes(rot: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Angles ``(…, k)`` so that ``prod_i R(axes[i], angle_i)`` approximates ``rot``.

    Exact whenever ``rot`` lies in the span of the axes chain; otherwise the
    residual rotation is discarded.  For one axis this is the swing-twist
    twist angle; for two orthogonal axes a Tait-Bryan decomposition whose
    third (discarded) axis is ``a1 x a2``.
    """
    rot = np.asarray(rot, dtype=float)
    axes = np.asarray(axes, dtype=float)
    k = axes.shape[0]
    for i in range(k - 1):
        if np.linalg.norm(np.cross(axes[i], axes[i + 1])) < _PARALLEL_TOL:
            raise DegenerateMappingError(f"consecutive group axes {axes[i]} and {axes[i + 1]} are parallel")
    out = np.zeros(rot.shape[:-2] + (k,))
    if k == 0:
        return out
    if k == 1:
        out[..., 0] = _twist_angle(rot, axes[0])
        return out
    a1, a2 = axes[0], axes[1]
    if k == 2:
        if abs(a1 @ a2) < _PARALLEL_TOL:
            t1, t2, _ = _tait_bryan(rot, a1, a2)
        else:
            t1, t2 = _projected_pair(rot, a1, a2)
        out[..., 0], out[..., 1] = t1, t2
        return out
    if k == 3:
        a3 = axes[2]
        c = np.cross(a1, a2)
        if abs(a1 @ a2) < _PARALLEL_TOL and np.linalg.norm(np.cross(c, a3)) < _PARALLEL_TOL:
            t1, t2, t3 = _tait_bryan(rot, a1, a2)
            out[..., 0], out[..., 1], out[..., 2] = t1, t2, t3 * np.sign(c @ a3)
            return out
    # general chains: peel off one twist at a time
    rest = rot
    for i in range(k):
        out[..., i] = _twist_angle(rest, axes[i])
        rest = np.swapaxes(axis_angle_to_matrix(axes[i], out[..., i]), -1, -2) @ rest
    return out


def human_local_rotations(motion: MotionSequence, skeleton: Skeleton) -> np.ndarray:
    """``(T, dofs, 3, 3)`` local rotations of the human's non-root joints."""
    motion.check_skeleton(skeleton)
    if motion.joints.ndim == 3:
        return quat_to_matrix(motion.joints)
    return axis_angle_to_matrix(skeleton.axes[None], motion.joints)


def _group_chain(humanoid: Skeleton, group: list[int]) -> list[int]:
    revolute = [b for b in group if b != 0]
    for prev, cur in zip(revolute, revolute[1:]):
        if humanoid.joints[cur].parent != prev:
            raise MappingError(f"humanoid joints {revolute} must form a parent-child chain")
    for b in revolute:
        if humanoid.joints[b].kind != "revolute":
            raise MappingError(f"humanoid joint {b} is not revolute")
    return revolute


def copy_rotation(
    human_motion: MotionSequence,
    mapping: JointMapping,
    human_skeleton: Skeleton | None = None,
    humanoid_skeleton: Skeleton | None = None,
    clamp: bool = False,
) -> MotionSequence:
    """Retarget by copying root pose and projecting mapped joint rotations.

    The root pose is copied verbatim.  Each mapped human joint's local
    rotation is decomposed onto its group's revolute axes in tree order.
    Revolute joints grouped with the root get zero, since the root
    orientation already carries that rotation.  Unmapped joints stay at zero.
    """
    human = human_skeleton or load_skeleton(mapping.human_skeleton or human_motion.skeleton_id)
    robot = humanoid_skeleton or load_skeleton(mapping.humanoid_skeleton or "h1")
    mapping.validate(human, robot)
    if not robot.is_revolute:
        raise MappingError(f"target skeleton {robot.name!r} must be all-revolute")
    local = human_local_rotations(human_motion, human)
    T = human_motion.num_frames
    angles = np.zeros((T, robot.num_dofs))
    axes = robot.axes
    for a, group in mapping.groups().items():
        chain = _group_chain(robot, group)
        if not chain or a == 0:
            continue
        rot = local[:, a - 1]
        cols = [b - 1 for b in chain]
        angles[:, cols] = decompose_onto_axes(rot, axes[cols])
    if clamp and robot.limits is not None:
        lo, hi = robot.limits
        angles = np.clip(angles, lo, hi)
    return MotionSequence(
        human_motion.fps,
        robot.name,
        human_motion.root_pos.copy(),
        human_motion.root_quat.copy(),
        angles,
        object_pos=human_motion.object_pos,
        object_quat=human_motion.object_quat,
    )
