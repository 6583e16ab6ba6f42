"""Kinematic trees, poses and forward kinematics.

A skeleton is a topologically sorted list of joints.  Joint 0 is the free
root; every other joint is either *revolute* (one angle about a fixed unit
axis in the parent frame) or *spherical* (a full rotation).  Optional
*sites* are rigidly attached marker frames (e.g. the H1 wrists, which are not
joints of the robot).  FK returns joints first, then sites, in one array.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .rotations import Rotation, axis_angle_to_matrix, quat_to_matrix

ROOT = "root"
REVOLUTE = "revolute"
SPHERICAL = "spherical"
_KINDS = (ROOT, REVOLUTE, SPHERICAL)


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    offset: tuple[float, float, float]
    kind: str
    axis: tuple[float, float, float] | None = None
    limits: tuple[float, float] | None = None


@dataclass(frozen=True)
class Site:
    name: str
    parent: int
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class Skeleton:
    name: str
    joints: tuple[Joint, ...]
    sites: tuple[Site, ...] = ()

    def __post_init__(self):
        if not self.joints:
            raise SkeletonError("skeleton has no joints")
        roots = [j for j in self.joints if j.kind == ROOT]
        if len(roots) != 1 or self.joints[0].kind != ROOT or self.joints[0].parent != -1:
            raise SkeletonError("joint 0 must be the single root with parent -1")
        names = set()
        for i, j in enumerate(self.joints):
            if j.kind not in _KINDS:
                raise SkeletonError(f"joint {j.name!r}: unknown kind {j.kind!r}")
            if i > 0 and not 0 <= j.parent < i:
                raise SkeletonError(f"joint {i} ({j.name!r}) has parent {j.parent}; parents must precede children")
            if not all(math.isfinite(x) for x in j.offset):
                raise SkeletonError(f"joint {j.name!r} has a non-finite offset")
            if j.kind == REVOLUTE:
                if j.axis is None or abs(math.hypot(*j.axis) - 1.0) > 1e-9:
                    raise SkeletonError(f"revolute joint {j.name!r} needs a unit axis")
            if j.name in names:
                raise SkeletonError(f"duplicate joint name {j.name!r}")
            names.add(j.name)
        for s in self.sites:
            if not 0 <= s.parent < len(self.joints):
                raise SkeletonError(f"site {s.name!r} has invalid parent {s.parent}")
            if s.name in names:
                raise SkeletonError(f"duplicate name {s.name!r}")
            names.add(s.name)

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_dofs(self) -> int:
        """Number of non-root joints, i.e. the length of a pose's joint values."""
        return len(self.joints) - 1

    @property
    def num_frames(self) -> int:
        return len(self.joints) + len(self.sites)

    @property
    def frame_names(self) -> list[str]:
        return [j.name for j in self.joints] + [s.name for s in self.sites]

    @property
    def parents(self) -> np.ndarray:
        return np.array([j.parent for j in self.joints] + [s.parent for s in self.sites])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints] + [s.offset for s in self.sites], dtype=float)

    @property
    def is_revolute(self) -> bool:
        return all(j.kind == REVOLUTE for j in self.joints[1:])

    @property
    def is_spherical(self) -> bool:
        return all(j.kind == SPHERICAL for j in self.joints[1:])

    @property
    def axes(self) -> np.ndarray:
        """``(num_dofs, 3)`` revolute axes; zeros for spherical joints."""
        return np.array([j.axis if j.axis is not None else (0.0, 0.0, 0.0) for j in self.joints[1:]], dtype=float)

    @property
    def limits(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not any(j.limits for j in self.joints[1:]):
            return None
        lo = np.array([j.limits[0] if j.limits else -np.inf for j in self.joints[1:]])
        hi = np.array([j.limits[1] if j.limits else np.inf for j in self.joints[1:]])
        return lo, hi

    def index(self, name: str) -> int:
        """Frame index of a joint or site by name."""
        try:
            return self.frame_names.index(name)
        except ValueError:
            raise KeyError(f"skeleton {self.name!r} has no joint or site named {name!r}") from None

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.num_frames)]
        for i, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(i)
        return kids

    def with_offsets(self, offsets: np.ndarray) -> Skeleton:
        """Copy of this skeleton with new joint (and site) offsets."""
        offsets = np.asarray(offsets, dtype=float)
        n = len(self.joints)
        joints = tuple(
            Joint(j.name, j.parent, tuple(float(x) for x in offsets[i]), j.kind, j.axis, j.limits)
            for i, j in enumerate(self.joints)
        )
        sites = tuple(
            Site(s.name, s.parent, tuple(float(x) for x in offsets[n + k])) for k, s in enumerate(self.sites)
        )
        return Skeleton(self.name, joints, sites)


@dataclass(frozen=True)
class Pose:
    """Root pose plus one value per non-root joint.

    ``joint_values[i]`` belongs to joint ``i + 1``: a float for revolute
    joints, a :class:`Rotation` for spherical ones.
    """

    root_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    root_orientation: Rotation = field(default_factory=Rotation)
    joint_values: tuple = ()


@dataclass(frozen=True)
class Transform:
    position: np.ndarray
    orientation: Rotation


# ---------------------------------------------------------------------------
# forward kinematics


def local_rotations(skeleton: Skeleton, joint_values: np.ndarray) -> np.ndarray:
    """``(T, num_dofs, 3, 3)`` local joint rotations.

    ``joint_values`` is ``(T, num_dofs)`` angles for a revolute skeleton or
    ``(T, num_dofs, 4)`` quaternions for a spherical one.
    """
    jv = np.asarray(joint_values, dtype=float)
    n = skeleton.num_dofs
    if skeleton.is_revolute and jv.ndim == 2 and jv.shape[1] == n:
        return axis_angle_to_matrix(skeleton.axes[None], jv)
    if skeleton.is_spherical and jv.ndim == 3 and jv.shape[1:] == (n, 4):
        return quat_to_matrix(jv)
    raise SkeletonError(
        f"joint values of shape {jv.shape} do not match skeleton {skeleton.name!r} ({n} dofs)"
    )


def fk_batch(
    skeleton: Skeleton,
    root_pos: np.ndarray,
    root_rot: np.ndarray,
    local_rot: np.ndarray,
    offsets: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized FK over frames.

    Args:
        root_pos: ``(T, 3)`` root positions.
        root_rot: ``(T, 3, 3)`` root orientations.
        local_rot: ``(T, num_dofs, 3, 3)`` from :func:`local_rotations`.
        offsets: override for ``skeleton.offsets``.

    Returns:
        ``(positions (T, F, 3), orientations (T, F, 3, 3))`` for all
        ``F = num_frames`` joints and sites.
    """
    root_pos = np.asarray(root_pos, dtype=float)
    T = root_pos.shape[0]
    F = skeleton.num_frames
    n = skeleton.num_joints
    if local_rot.shape != (T, n - 1, 3, 3):
        raise SkeletonError(f"expected local rotations of shape {(T, n - 1, 3, 3)}, got {local_rot.shape}")
    offs = skeleton.offsets if offsets is None else offsets
    parents = skeleton.parents
    pos = np.empty((T, F, 3))
    rot = np.empty((T, F, 3, 3))
    pos[:, 0] = root_pos
    rot[:, 0] = root_rot
    for i in range(1, F):
        p = parents[i]
        pos[:, i] = pos[:, p] + rot[:, p] @ offs[i]
        rot[:, i] = rot[:, p] @ local_rot[:, i - 1] if i < n else rot[:, p]
    return pos, rot


def _pose_arrays(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    if len(pose.joint_values) != skeleton.num_dofs:
        raise SkeletonError(
            f"pose has {len(pose.joint_values)} joint values, skeleton {skeleton.name!r} has {skeleton.num_dofs} dofs"
        )
    mats = np.empty((1, skeleton.num_dofs, 3, 3))
    for i, (joint, value) in enumerate(zip(skeleton.joints[1:], pose.joint_values)):
        if joint.kind == REVOLUTE:
            if isinstance(value, Rotation) or not math.isfinite(float(value)):
                raise SkeletonError(f"joint {joint.name!r} expects a finite angle")
            mats[0, i] = axis_angle_to_matrix(np.array(joint.axis), float(value))
        else:
            if not isinstance(value, Rotation):
                raise SkeletonError(f"spherical joint {joint.name!r} expects a Rotation")
            mats[0, i] = value.as_matrix()
    return mats


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> list[Transform]:
    """Global transform of every joint and site for one pose."""
    local = _pose_arrays(skeleton, pose)
    pos, rot = fk_batch(
        skeleton,
        np.asarray(pose.root_position, dtype=float)[None],
        pose.root_orientation.as_matrix()[None],
        local,
    )
    return [Transform(pos[0, i], Rotation.from_matrix(rot[0, i])) for i in range(skeleton.num_frames)]


def to_root_frame(
    positions: np.ndarray, orientations: np.ndarray, root_pos: np.ndarray, root_rot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Express global ``(…, F, 3)`` positions and ``(…, F, 3, 3)`` orientations
    in the frame of ``root_pos (…, 3)`` / ``root_rot (…, 3, 3)``."""
    rt = np.swapaxes(np.asarray(root_rot, dtype=float), -1, -2)
    local_pos = np.einsum("...ij,...fj->...fi", rt, positions - np.asarray(root_pos)[..., None, :])
    local_rot = rt[..., None, :, :] @ orientations
    return local_pos, local_rot


def from_root_frame(
    positions: np.ndarray, orientations: np.ndarray, root_pos: np.ndarray, root_rot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    root_rot = np.asarray(root_rot, dtype=float)
    world_pos = np.einsum("...ij,...fj->...fi", root_rot, positions) + np.asarray(root_pos)[..., None, :]
    world_rot = root_rot[..., None, :, :] @ orientations
    return world_pos, world_rot


def transforms_to_root_frame(transforms: Sequence[Transform], root: Transform) -> list[Transform]:
    pos = np.array([t.position for t in transforms])
    rot = np.array([t.orientation.as_matrix() for t in transforms])
    lp, lr = to_root_frame(pos, rot, root.position, root.orientation.as_matrix())
    return [Transform(lp[i], Rotation.from_matrix(lr[i])) for i in range(len(transforms))]


# ---------------------------------------------------------------------------
# skeleton files


def skeleton_from_dict(doc: dict) -> Skeleton:
    joints = []
    for i, j in enumerate(doc["joints"]):
        kind = j.get("kind", REVOLUTE)
        axis = j.get("axis")
        if kind == REVOLUTE and axis is not None:
            a = np.asarray(axis, dtype=float)
            n = np.linalg.norm(a)
            if n == 0:
                raise SkeletonError(f"joint {i} has a zero axis")
            axis = tuple(float(x) for x in a / n)
        limits = j.get("limits")
        joints.append(
            Joint(
                name=j["name"],
                parent=int(j["parent"]) if j.get("parent") is not None else -1,
                offset=tuple(float(x) for x in j.get("offset", (0.0, 0.0, 0.0))),
                kind=kind,
                axis=axis if kind == REVOLUTE else None,
                limits=(float(limits[0]), float(limits[1])) if limits else None,
            )
        )
    sites = [
        Site(s["name"], int(s["parent"]), tuple(float(x) for x in s["offset"])) for s in doc.get("sites", [])
    ]
    return Skeleton(doc["name"], tuple(joints), tuple(sites))


def skeleton_to_dict(skeleton: Skeleton) -> dict:
    joints = []
    for j in skeleton.joints:
        d = {"name": j.name, "parent": j.parent, "offset": list(j.offset), "kind": j.kind}
        if j.axis is not None:
            d["axis"] = list(j.axis)
        if j.limits is not None:
            d["limits"] = list(j.limits)
        joints.append(d)
    doc = {"name": skeleton.name, "joints": joints}
    if skeleton.sites:
        doc["sites"] = [{"name": s.name, "parent": s.parent, "offset": list(s.offset)} for s in skeleton.sites]
    return doc


def load_skeleton(path_or_name: str | Path) -> Skeleton:
    """Load a skeleton file, or one of the bundled skeletons by name."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = resources.files("skilltransfer.data").joinpath(f"skeletons/{path_or_name}.json")
        if not bundled.is_file():
            raise FileNotFoundError(f"no skeleton file or bundled skeleton named {path_or_name!r}")
        return skeleton_from_dict(json.loads(bundled.read_text(encoding="utf-8")))
    with open(path, encoding="utf-8") as f:
        return skeleton_from_dict(json.load(f))


def save_skeleton(skeleton: Skeleton, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(skeleton_to_dict(skeleton), f, indent=2)
        f.write("\n")


BUNDLED_SKELETONS = ("h1", "unihsi", "roam", "core4d")
