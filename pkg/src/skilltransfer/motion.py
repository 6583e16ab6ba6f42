"""Motion sequences, their JSON file format, and finite-difference kinematics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rotations import Rotation, matrix_to_rotvec, quat_to_matrix
from .skeleton import Pose, Skeleton, fk_batch, local_rotations, to_root_frame

NOMINAL_FPS = 50.0

# unit-norm tolerance: quaternions this close to unit are kept verbatim so
# save/load round-trips bit-exactly; up to 1e-6 they are renormalized
_KEEP_TOL = 1e-12
_RENORM_TOL = 1e-6


class MotionFormatError(ValueError):
    pass


class MotionSchemaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """A timed sequence of poses on one skeleton.

    ``joints`` is ``(T, dofs)`` joint angles for revolute skeletons or
    ``(T, dofs, 4)`` local quaternions (w, x, y, z) for spherical ones.
    Optional channels are ``(T, dofs)`` torques and actions and a per-frame
    object pose.
    """

    fps: float
    skeleton_id: str
    root_pos: np.ndarray
    root_quat: np.ndarray
    joints: np.ndarray
    torques: np.ndarray | None = None
    actions: np.ndarray | None = None
    object_pos: np.ndarray | None = None
    object_quat: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("root_pos", "root_quat", "joints", "torques", "actions", "object_pos", "object_quat"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise MotionSchemaError(f"fps must be positive, got {self.fps}")
        T = self.root_pos.shape[0]
        if T < 1:
            raise MotionSchemaError("motion needs at least one frame")
        if self.root_pos.shape != (T, 3) or self.root_quat.shape != (T, 4):
            raise MotionSchemaError("root_pos must be (T, 3) and root_quat (T, 4)")
        if self.joints.shape[0] != T:
            raise MotionSchemaError("joints must have one row per frame")
        for name in ("torques", "actions", "object_pos", "object_quat"):
            value = getattr(self, name)
            if value is not None and value.shape[0] != T:
                raise MotionSchemaError(f"channel {name!r} has {value.shape[0]} frames, expected {T}")
        if (self.object_pos is None) != (self.object_quat is None):
            raise MotionSchemaError("object channel needs both positions and quaternions")

    @property
    def num_frames(self) -> int:
        return self.root_pos.shape[0]

    @property
    def duration(self) -> float:
        return (self.num_frames - 1) / self.fps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.fps

    def root_rot(self) -> np.ndarray:
        return quat_to_matrix(self.root_quat)

    def frame(self, i: int) -> Pose:
        if self.joints.ndim == 2:
            values = tuple(float(x) for x in self.joints[i])
        else:
            values = tuple(Rotation(tuple(q)) for q in self.joints[i])
        return Pose(tuple(self.root_pos[i]), Rotation(tuple(self.root_quat[i])), values)

    def replace(self, **changes) -> MotionSequence:
        return replace(self, **changes)

    def check_skeleton(self, skeleton: Skeleton) -> None:
        n = skeleton.num_dofs
        if skeleton.is_revolute:
            ok = self.joints.shape == (self.num_frames, n)
        elif skeleton.is_spherical:
            ok = self.joints.shape == (self.num_frames, n, 4)
        else:
            ok = False
        if not ok:
            raise MotionSchemaError(
                f"motion joints {self.joints.shape} do not fit skeleton {skeleton.name!r} with {n} dofs"
            )
        for name in ("torques", "actions"):
            value = getattr(self, name)
            if value is not None and value.shape != (self.num_frames, n):
                raise MotionSchemaError(f"channel {name!r} must be (T, {n})")

    def global_transforms(self, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
        """FK for every frame: positions ``(T, F, 3)``, orientations ``(T, F, 3, 3)``."""
        self.check_skeleton(skeleton)
        return fk_batch(skeleton, self.root_pos, self.root_rot(), local_rotations(skeleton, self.joints))


def motion_from_poses(poses, fps: float, skeleton_id: str, **channels) -> MotionSequence:
    poses = list(poses)
    root_pos = np.array([p.root_position for p in poses], dtype=float)
    root_quat = np.array([p.root_orientation.as_quat() for p in poses])
    if poses and poses[0].joint_values and isinstance(poses[0].joint_values[0], Rotation):
        joints = np.array([[r.as_quat() for r in p.joint_values] for p in poses])
    else:
        joints = np.array([list(p.joint_values) for p in poses], dtype=float).reshape(len(poses), -1)
    return MotionSequence(fps, skeleton_id, root_pos, root_quat, joints, **channels)


# ---------------------------------------------------------------------------
# file format


def _unit_quat(q, where: str) -> list[float]:
    q = [float(x) for x in q]
    if len(q) != 4 or not all(math.isfinite(x) for x in q):
        raise MotionFormatError(f"{where}: expected 4 finite quaternion components")
    n = math.sqrt(sum(x * x for x in q))
    if abs(n - 1.0) <= _KEEP_TOL:
        return q
    if abs(n - 1.0) <= _RENORM_TOL:
        return [x / n for x in q]
    raise MotionFormatError(f"{where}: quaternion norm {n} is not unit")


def motion_from_dict(doc: dict, skeleton: Skeleton | None = None) -> MotionSequence:
    try:
        fps = float(doc["fps"])
        skeleton_id = str(doc["skeleton_id"])
        frames = doc["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MotionFormatError(f"motion header is malformed: {exc}") from None
    if not isinstance(frames, list) or not frames:
        raise MotionFormatError("motion has no frames")
    spherical = skeleton.is_spherical if skeleton is not None else None
    root_pos, root_quat, joints = [], [], []
    for i, fr in enumerate(frames):
        try:
            pos = [float(x) for x in fr["root_pos"]]
            if len(pos) != 3:
                raise ValueError("root_pos needs 3 values")
            quat = _unit_quat(fr["root_quat"], f"frame {i} root_quat")
            raw = fr["joints"]
            if spherical is None:
                spherical = bool(raw) and isinstance(raw[0], list)
            if spherical:
                jv = [_unit_quat(q, f"frame {i} joint {k}") for k, q in enumerate(raw)]
            else:
                jv = [float(x) for x in raw]
        except MotionFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MotionFormatError(f"frame {i}: {exc}") from None
        if joints and len(jv) != len(joints[0]):
            raise MotionSchemaError(f"frame {i} has {len(jv)} joints, frame 0 has {len(joints[0])}")
        if skeleton is not None and len(jv) != skeleton.num_dofs:
            raise MotionSchemaError(
                f"frame {i} has {len(jv)} joints, skeleton {skeleton.name!r} has {skeleton.num_dofs}"
            )
        root_pos.append(pos)
        root_quat.append(quat)
        joints.append(jv)

    channels = {}
    T = len(frames)
    for key in ("torques", "actions"):
        if doc.get(key) is not None:
            arr = np.array(doc[key], dtype=float)
            if arr.ndim != 2 or arr.shape[0] != T:
                raise MotionSchemaError(f"{key!r} must hold one row per frame")
            channels[key] = arr
    if doc.get("object") is not None:
        obj = doc["object"]
        if len(obj) != T:
            raise MotionSchemaError("'object' must hold one entry per frame")
        channels["object_pos"] = np.array([[float(x) for x in o["pos"]] for o in obj])
        channels["object_quat"] = np.array([_unit_quat(o["quat"], f"frame {i} object quat") for i, o in enumerate(obj)])
    n = len(joints[0])
    joints_arr = np.array(joints, dtype=float).reshape((T, n, 4) if spherical else (T, n))
    motion = MotionSequence(fps, skeleton_id, np.array(root_pos), np.array(root_quat), joints_arr, meta=dict(doc.get("meta", {})), **channels)
    if skeleton is not None:
        motion.check_skeleton(skeleton)
    return motion


def motion_to_dict(motion: MotionSequence) -> dict:
    frames = []
    for i in range(motion.num_frames):
        frames.append(
            {
                "root_pos": motion.root_pos[i].tolist(),
                "root_quat": motion.root_quat[i].tolist(),
                "joints": motion.joints[i].tolist(),
            }
        )
    doc: dict = {"fps": motion.fps, "skeleton_id": motion.skeleton_id, "frames": frames}
    if motion.torques is not None:
        doc["torques"] = motion.torques.tolist()
    if motion.actions is not None:
        doc["actions"] = motion.actions.tolist()
    if motion.object_pos is not None:
        doc["object"] = [
            {"pos": p.tolist(), "quat": q.tolist()} for p, q in zip(motion.object_pos, motion.object_quat)
        ]
    if motion.meta:
        doc["meta"] = motion.meta
    return doc


def dumps_motion(motion: MotionSequence) -> str:
    return json.dumps(motion_to_dict(motion), separators=(",", ":"), allow_nan=False) + "\n"


def save_motion(motion: MotionSequence, path: str | Path) -> None:
    Path(path).write_text(dumps_motion(motion), encoding="utf-8")


def load_motion(path: str | Path, skeleton: Skeleton | None = None) -> MotionSequence:
    """Read a motion file.  With ``skeleton`` given, joint counts are validated."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MotionFormatError(f"{path}: not valid JSON ({exc})") from None
    return motion_from_dict(doc, skeleton)


# ---------------------------------------------------------------------------
# finite-difference kinematics


@dataclass(frozen=True, eq=False)
class KinematicDerivatives:
    joint_vel: np.ndarray  # (T, dofs) rad/s
    joint_acc: np.ndarray  # (T, dofs) rad/s^2
    lin_vel: np.ndarray  # (T, F, 3) m/s, root frame
    ang_vel: np.ndarray  # (T, F, 3) rad/s, root frame


def time_derivative(x: np.ndarray, fps: float) -> np.ndarray:
    """Central differences inside, first-order one-sided at both ends."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return np.zeros_like(x)
    return np.gradient(x, 1.0 / fps, axis=0, edge_order=1)


def angular_velocity(rot: np.ndarray, fps: float) -> np.ndarray:
    """Body-frame angular velocity ``(T, …, 3)`` from orientations ``(T, …, 3, 3)``.

    Forward rate ``log(R_t^T R_{t+1}) * fps``; interior frames average the
    backward and forward rates.
    """
    T = rot.shape[0]
    out = np.zeros(rot.shape[:-2] + (3,))
    if T < 2:
        return out
    step = matrix_to_rotvec(np.swapaxes(rot[:-1], -1, -2) @ rot[1:]) * fps
    out[0] = step[0]
    out[-1] = step[-1]
    if T > 2:
        out[1:-1] = 0.5 * (step[:-1] + step[1:])
    return out


def derive_kinematics(motion: MotionSequence, skeleton: Skeleton) -> KinematicDerivatives:
    """Joint rates plus per-frame linear/angular velocities in the root frame.

    A single-frame motion yields all-zero derivatives.
    """
    pos, rot = motion.global_transforms(skeleton)
    if motion.joints.ndim != 2:
        raise MotionSchemaError("joint-rate derivatives need a revolute skeleton")
    jv = time_derivative(motion.joints, motion.fps)
    ja = time_derivative(jv, motion.fps)
    root_rot = rot[:, 0]
    lin_world = time_derivative(pos, motion.fps)
    ang_body = angular_velocity(rot, motion.fps)
    ang_world = np.einsum("tfij,tfj->tfi", rot, ang_body)
    rt = np.swapaxes(root_rot, -1, -2)
    lin = np.einsum("tij,tfj->tfi", rt, lin_world)
    ang = np.einsum("tij,tfj->tfi", rt, ang_world)
    return KinematicDerivatives(jv, ja, lin, ang)


def root_frame_states(motion: MotionSequence, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame body positions and orientations in each frame's own root frame."""
    pos, rot = motion.global_transforms(skeleton)
    return to_root_frame(pos, rot, pos[:, 0], rot[:, 0])
