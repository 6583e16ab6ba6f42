"""Tracking rewards, early termination and tracker observation vectors."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .motion import MotionSequence, angular_velocity, derive_kinematics, time_derivative
from .rotations import geodesic_distance, matrix_to_rotvec, quat_to_matrix
from .skeleton import Skeleton

NUM_DOFS = 19
NUM_BODIES = 20
TASKS = ("SC", "SS", "LB", "LS", "T", "L")
VARIANTS = ("hst", "phc")

ACTION_COEF = 1e-3
VEL_COEF = 2e-3
ACC_COEF = 5e-7
ENERGY_COEF = 1e-6
TERMINATION_DISTANCE = 0.5


class RewardError(ValueError):
    pass


def default_lambda_height(task_id: str) -> float:
    return 100.0 if task_id in ("SC", "SS") else 10.0


@dataclass(frozen=True, eq=False)
class TrackState:
    """Current humanoid state and its animation target.

    Body quantities are ``(20, ...)`` arrays in the current root frame, as
    are the optional wrist and object extras.  ``root_pos`` and
    ``target_root_pos`` are world-frame.  Object states are 12-vectors:
    position, rotation vector, linear velocity, angular velocity.
    """

    joint_pos: np.ndarray
    joint_vel: np.ndarray
    body_pos: np.ndarray
    body_rot: np.ndarray
    body_lin_vel: np.ndarray
    body_ang_vel: np.ndarray
    target_joint_pos: np.ndarray
    target_joint_vel: np.ndarray
    target_body_pos: np.ndarray
    target_body_rot: np.ndarray
    target_body_lin_vel: np.ndarray
    target_body_ang_vel: np.ndarray
    prev_action: np.ndarray
    gravity: np.ndarray
    root_pos: np.ndarray
    target_root_pos: np.ndarray
    action: np.ndarray | None = None
    joint_acc: np.ndarray | None = None
    target_joint_acc: np.ndarray | None = None
    wrist_pos: np.ndarray | None = None
    wrist_targets: np.ndarray | None = None
    object_state: np.ndarray | None = None
    object_target: np.ndarray | None = None

    def __post_init__(self):
        shapes = {
            "joint_pos": (NUM_DOFS,),
            "joint_vel": (NUM_DOFS,),
            "body_pos": (NUM_BODIES, 3),
            "body_rot": (NUM_BODIES, 3, 3),
            "body_lin_vel": (NUM_BODIES, 3),
            "body_ang_vel": (NUM_BODIES, 3),
            "prev_action": (NUM_DOFS,),
            "gravity": (3,),
            "root_pos": (3,),
            "action": (NUM_DOFS,),
            "joint_acc": (NUM_DOFS,),
            "wrist_pos": (2, 3),
            "wrist_targets": (2, 3),
            "object_state": (12,),
            "object_target": (12,),
        }
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            arr = np.asarray(value, dtype=float)
            key = f.name.removeprefix("target_")
            want = shapes[key]
            if arr.shape != want:
                raise RewardError(f"{f.name} has shape {arr.shape}, expected {want}")
            object.__setattr__(self, f.name, arr)
        if abs(np.linalg.norm(self.gravity) - 1.0) > 1e-6:
            raise RewardError("gravity must be a unit vector")

    @property
    def height(self) -> float:
        return float(self.root_pos[2])

    @property
    def target_height(self) -> float:
        return float(self.target_root_pos[2])


@dataclass(frozen=True)
class RewardBreakdown:
    r_pos: float
    r_ori: float
    r_root: float
    r_wrist: float | None
    r_w2o: float | None
    r_object: float | None
    r_action: float
    r_vel: float
    r_acc: float
    r_energy: float
    r_overall: float

    @property
    def r_human(self) -> float:
        return self.r_pos + self.r_ori + self.r_root

    @property
    def r_reg(self) -> float:
        return self.r_action + self.r_vel + self.r_acc + self.r_energy

    def as_dict(self) -> dict:
        return asdict(self)


def _exp_l1(diff: np.ndarray) -> float:
    return float(np.exp(-10.0 * np.sum(np.abs(diff))))


def reward_tracking(
    task_id: str,
    state: TrackState,
    torques: np.ndarray | None = None,
    lambda_height: float | None = None,
    variant: str = "hst",
    energy_coef: float = ENERGY_COEF,
) -> RewardBreakdown:
    """Per-step tracking reward.

    The energy regularizer penalizes, so its contribution is
    ``-energy_coef * ||tau * J_dot||^2``.  Regularizers whose inputs are
    absent (``action``, accelerations, ``torques``) contribute zero, and the
    ``phc`` variant drops all regularizers.
    """
    if task_id not in TASKS:
        raise RewardError(f"unknown task {task_id!r}")
    if variant not in VARIANTS:
        raise RewardError(f"unknown variant {variant!r}")
    if lambda_height is None:
        lambda_height = default_lambda_height(task_id)
    s = state

    r_pos = float(np.exp(-5.0 * np.sum((s.body_pos - s.target_body_pos) ** 2)))
    r_ori = float(np.sum(np.exp(-geodesic_distance(s.body_rot, s.target_body_rot))))
    r_root = 5.0 * _exp_l1(s.root_pos - s.target_root_pos) - lambda_height * (s.height - s.target_height) ** 2

    r_wrist = r_w2o = r_object = None
    if s.wrist_pos is not None and s.wrist_targets is not None:
        r_wrist = _exp_l1(s.wrist_pos[0] - s.wrist_targets[0]) + _exp_l1(s.wrist_pos[1] - s.wrist_targets[1])
    if s.object_state is not None and s.object_target is not None:
        obj, obj_bar = s.object_state[:3], s.object_target[:3]
        r_object = _exp_l1(obj - obj_bar)
        if s.wrist_pos is not None and s.wrist_targets is not None:
            r_w2o = sum(_exp_l1((s.wrist_pos[k] - obj) - (s.wrist_targets[k] - obj_bar)) for k in range(2))

    r_action = r_vel = r_acc = r_energy = 0.0
    if variant == "hst":
        if s.action is not None:
            r_action = 0.0 - ACTION_COEF * float(np.sum((s.action - s.prev_action) ** 2))
        r_vel = 0.0 - VEL_COEF * float(np.sum((s.joint_vel - s.target_joint_vel) ** 2))
        if s.joint_acc is not None and s.target_joint_acc is not None:
            r_acc = 0.0 - ACC_COEF * float(np.sum((s.joint_acc - s.target_joint_acc) ** 2))
        if torques is not None:
            tau = np.asarray(torques, dtype=float)
            if tau.shape != (NUM_DOFS,):
                raise RewardError(f"torques have shape {tau.shape}, expected ({NUM_DOFS},)")
            r_energy = 0.0 - energy_coef * float(np.sum((tau * s.joint_vel) ** 2))

    r_human = r_pos + r_ori + r_root
    r_reg = r_action + r_vel + r_acc + r_energy
    if task_id == "T":
        if r_wrist is None:
            raise RewardError("task T needs wrist positions and wrist targets")
        overall = r_human * r_wrist + r_reg
    elif task_id == "L":
        if r_object is None or r_w2o is None:
            raise RewardError("task L needs object state, object target and wrist positions/targets")
        overall = r_human * r_w2o * r_object + r_reg
    else:
        overall = r_human + r_reg
    return RewardBreakdown(r_pos, r_ori, r_root, r_wrist, r_w2o, r_object, r_action, r_vel, r_acc, r_energy, overall)


def early_termination(state: TrackState, height_threshold: float) -> bool:
    """True when the root strays more than 0.5 m from its target or drops too low."""
    dist = float(np.linalg.norm(state.root_pos - state.target_root_pos))
    return dist > TERMINATION_DISTANCE or state.height < height_threshold


# ---------------------------------------------------------------------------
# observations

_BASE_LAYOUT = (
    ("J", NUM_DOFS),
    ("J_dot", NUM_DOFS),
    ("t", 3 * NUM_BODIES),
    ("R", 3 * NUM_BODIES),
    ("v", 3 * NUM_BODIES),
    ("omega", 3 * NUM_BODIES),
    ("J_bar", NUM_DOFS),
    ("J_dot_bar", NUM_DOFS),
    ("t_bar", 3 * NUM_BODIES),
    ("R_bar", 3 * NUM_BODIES),
    ("v_bar", 3 * NUM_BODIES),
    ("omega_bar", 3 * NUM_BODIES),
    ("a_prev", NUM_DOFS),
    ("g", 3),
)
_PHC_EXTRA = (("t_diff", 3 * NUM_BODIES), ("R_diff", 3 * NUM_BODIES))
_TASK_EXTRA = {
    "T": (("wrist_targets", 6),),
    "L": (("object", 12), ("object_target", 12)),
}


def observation_layout(variant: str, task_id: str | None = None) -> list[tuple[str, slice]]:
    """Named slices of the observation vector, in order."""
    if variant not in VARIANTS:
        raise RewardError(f"unknown variant {variant!r}")
    parts = list(_BASE_LAYOUT)
    if variant == "phc":
        parts += _PHC_EXTRA
    parts += _TASK_EXTRA.get(task_id, ())
    out, start = [], 0
    for name, size in parts:
        out.append((name, slice(start, start + size)))
        start += size
    return out


def observation_size(variant: str, task_id: str | None = None) -> int:
    return observation_layout(variant, task_id)[-1][1].stop


def build_observation(variant: str, state: TrackState, task_id: str | None = None) -> np.ndarray:
    s = state
    rv, rv_bar = matrix_to_rotvec(s.body_rot), matrix_to_rotvec(s.target_body_rot)
    chunks = [
        s.joint_pos,
        s.joint_vel,
        s.body_pos,
        rv,
        s.body_lin_vel,
        s.body_ang_vel,
        s.target_joint_pos,
        s.target_joint_vel,
        s.target_body_pos,
        rv_bar,
        s.target_body_lin_vel,
        s.target_body_ang_vel,
        s.prev_action,
        s.gravity,
    ]
    if variant == "phc":
        chunks += [s.body_pos - s.target_body_pos, rv - rv_bar]
    elif variant != "hst":
        raise RewardError(f"unknown variant {variant!r}")
    if task_id == "T":
        if s.wrist_targets is None:
            raise RewardError("task T observation needs wrist targets")
        chunks.append(s.wrist_targets)
    elif task_id == "L":
        if s.object_state is None or s.object_target is None:
            raise RewardError("task L observation needs object state and target")
        chunks += [s.object_state, s.object_target]
    return np.concatenate([np.ravel(c) for c in chunks])


# ---------------------------------------------------------------------------
# states from motion logs


def _object_states(motion: MotionSequence, root_pos: np.ndarray, root_rot: np.ndarray) -> np.ndarray | None:
    """(T, 12) object states in the given per-frame root frames."""
    if motion.object_pos is None:
        return None
    rot = quat_to_matrix(motion.object_quat)
    lin = time_derivative(motion.object_pos, motion.fps)
    ang = np.einsum("tij,tj->ti", rot, angular_velocity(rot[:, None], motion.fps)[:, 0])
    rt = np.swapaxes(root_rot, -1, -2)
    pos = np.einsum("tij,tj->ti", rt, motion.object_pos - root_pos)
    ori = matrix_to_rotvec(rt @ rot)
    return np.concatenate(
        [pos, ori, np.einsum("tij,tj->ti", rt, lin), np.einsum("tij,tj->ti", rt, ang)], axis=-1
    )


def track_states(motion: MotionSequence, reference: MotionSequence, skeleton: Skeleton) -> list[TrackState]:
    """Per-frame states pairing a humanoid log with its reference motion.

    Reference quantities are re-expressed in the log's root frame of the
    same frame.  The previous action is the log's action one frame earlier
    (the first frame's own action for frame 0).
    """
    if motion.num_frames != reference.num_frames:
        raise RewardError(f"motion has {motion.num_frames} frames, reference has {reference.num_frames}")
    pos, rot = motion.global_transforms(skeleton)
    rpos, rrot = reference.global_transforms(skeleton)
    kin, rkin = derive_kinematics(motion, skeleton), derive_kinematics(reference, skeleton)
    nb = NUM_BODIES
    root_p, root_r = pos[:, 0], rot[:, 0]
    rt = np.swapaxes(root_r, -1, -2)
    local = lambda p: np.einsum("tij,tfj->tfi", rt, p - root_p[:, None])  # noqa: E731
    t, t_bar = local(pos[:, :nb]), local(rpos[:, :nb])
    R = rt[:, None] @ rot[:, :nb]
    R_bar = rt[:, None] @ rrot[:, :nb]
    # reference velocities come in its own root frame; rotate into ours
    rel = rt @ rrot[:, 0]
    v_bar = np.einsum("tij,tfj->tfi", rel, rkin.lin_vel[:, :nb])
    w_bar = np.einsum("tij,tfj->tfi", rel, rkin.ang_vel[:, :nb])
    gravity = np.einsum("tij,j->ti", rt, np.array([0.0, 0.0, -1.0]))

    wrist_idx = [skeleton.index(n) for n in ("left_wrist", "right_wrist")] if "left_wrist" in skeleton.frame_names else None
    obj, obj_bar = _object_states(motion, root_p, root_r), _object_states(reference, root_p, root_r)

    actions = motion.actions
    states = []
    for i in range(motion.num_frames):
        prev = actions[max(i - 1, 0)] if actions is not None else motion.joints[max(i - 1, 0)]
        states.append(
            TrackState(
                joint_pos=motion.joints[i],
                joint_vel=kin.joint_vel[i],
                body_pos=t[i],
                body_rot=R[i],
                body_lin_vel=kin.lin_vel[i, :nb],
                body_ang_vel=kin.ang_vel[i, :nb],
                target_joint_pos=reference.joints[i],
                target_joint_vel=rkin.joint_vel[i],
                target_body_pos=t_bar[i],
                target_body_rot=R_bar[i],
                target_body_lin_vel=v_bar[i],
                target_body_ang_vel=w_bar[i],
                prev_action=prev,
                gravity=gravity[i],
                root_pos=root_p[i],
                target_root_pos=rpos[i, 0],
                action=None if actions is None else actions[i],
                joint_acc=kin.joint_acc[i],
                target_joint_acc=rkin.joint_acc[i],
                wrist_pos=None if wrist_idx is None else local(pos[:, wrist_idx])[i],
                wrist_targets=None if wrist_idx is None else local(rpos[:, wrist_idx])[i],
                object_state=None if obj is None else obj[i],
                object_target=None if obj_bar is None else obj_bar[i],
            )
        )
    return states


REWARD_COLUMNS = ["frame"] + [f.name for f in fields(RewardBreakdown)]


def score_motion(
    task_id: str,
    motion: MotionSequence,
    reference: MotionSequence,
    skeleton: Skeleton,
    variant: str = "hst",
) -> list[RewardBreakdown]:
    states = track_states(motion, reference, skeleton)
    torques = motion.torques
    return [
        reward_tracking(task_id, s, None if torques is None else torques[i], variant=variant)
        for i, s in enumerate(states)
    ]


def rewards_to_csv(rows: list[RewardBreakdown]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REWARD_COLUMNS)
    for i, r in enumerate(rows):
        w.writerow([i] + ["" if v is None else repr(float(v)) for v in asdict(r).values()])
    return buf.getvalue()
