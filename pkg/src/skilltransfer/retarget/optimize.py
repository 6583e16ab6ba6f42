"""Whole-sequence retargeting by gradient descent on a weighted FK loss.

The state is every frame's root position, root orientation and joint angles.
The loss combines

* ``pos``  - mean squared distance of mapped joints to their targets,
* ``hand`` - the same for the two wrists (tasks T and L only),
* ``ori``  - mean geodesic distance of mapped joint orientations,
* ``acc``  - mean absolute joint acceleration,

and is minimized with Adam using analytic gradients through FK.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..motion import MotionSequence
from ..rotations import matrix_to_rotvec, quat_mul, quat_normalize, quat_to_matrix, rotvec_to_quat
from ..skeleton import Skeleton, fk_batch, local_rotations
from .copy_rotation import copy_rotation
from .mapping import JointMapping
from .shape import align_skeleton_shape

log = logging.getLogger(__name__)

HAND_TASKS = ("T", "L")
TASKS = ("SC", "SS", "LB", "LS", "T", "L")
WRIST_NAMES = ("left_wrist", "right_wrist")


class RetargetConfigError(ValueError):
    pass


class RetargetInitError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetargetConfig:
    lambda_pos: float = 1.0
    lambda_ori: float = 0.1
    # acceleration is in rad/s^2; 2e-5 equals 0.05 on per-frame second
    # differences at 50 fps
    lambda_acc: float = 2e-5
    # None picks 1.0 for hand tasks and 0.0 otherwise
    lambda_hand: float | None = None
    learning_rate: float = 0.02
    epochs: int = 3000
    # learning-rate schedule: "constant", or "exp" decaying geometrically to
    # learning_rate * lr_final_ratio at the last epoch
    lr_schedule: str = "exp"
    lr_final_ratio: float = 1e-4
    task_id: str | None = None
    seed: int = 0
    checkpoint_every: int = 100

    def __post_init__(self):
        for name in ("lambda_pos", "lambda_ori", "lambda_acc", "learning_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise RetargetConfigError(f"{name} must be a non-negative number, got {value}")
        if self.lr_schedule not in ("constant", "exp"):
            raise RetargetConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0 < self.lr_final_ratio <= 1:
            raise RetargetConfigError("lr_final_ratio must be in (0, 1]")
        if self.epochs < 0:
            raise RetargetConfigError("epochs must be >= 0")
        if self.checkpoint_every < 1:
            raise RetargetConfigError("checkpoint_every must be >= 1")
        if self.task_id is not None and self.task_id not in TASKS:
            raise RetargetConfigError(f"unknown task {self.task_id!r}")
        if self.lambda_hand is not None:
            if not (math.isfinite(self.lambda_hand) and self.lambda_hand >= 0):
                raise RetargetConfigError("lambda_hand must be non-negative")
            if self.lambda_hand > 0 and self.task_id not in HAND_TASKS:
                raise RetargetConfigError(
                    f"lambda_hand > 0 is only valid for tasks T and L (task is {self.task_id!r})"
                )

    @property
    def hand_weight(self) -> float:
        if self.task_id not in HAND_TASKS:
            return 0.0
        return 1.0 if self.lambda_hand is None else self.lambda_hand


@dataclass(frozen=True, eq=False)
class ReferenceTargets:
    """Per-frame global targets for each mapping pair (and optionally wrists)."""

    positions: np.ndarray  # (T, K, 3)
    orientations: np.ndarray  # (T, K, 3, 3)
    wrists: np.ndarray | None = None  # (T, 2, 3)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]


@dataclass
class LossBreakdown:
    total: float
    pos: float
    hand: float
    ori: float
    acc: float

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total, "pos": self.pos, "hand": self.hand, "ori": self.ori, "acc": self.acc}


def reference_targets(
    human_motion: MotionSequence, human: Skeleton, mapping: JointMapping
) -> ReferenceTargets:
    """Global positions/orientations of each pair's human joint, per frame."""
    pos, rot = human_motion.global_transforms(human)
    idx = mapping.human_indices
    wrists = None
    names = human.frame_names
    if all(n in names for n in WRIST_NAMES):
        wrists = pos[:, [human.index(n) for n in WRIST_NAMES]]
    return ReferenceTargets(pos[:, idx], rot[:, idx], wrists)


def finite_difference_matrix(T: int, fps: float) -> np.ndarray:
    """Matrix form of :func:`skilltransfer.motion.time_derivative`."""
    D = np.zeros((T, T))
    if T < 2:
        return D
    D[0, 0], D[0, 1] = -fps, fps
    D[-1, -2], D[-1, -1] = -fps, fps
    for t in range(1, T - 1):
        D[t, t - 1], D[t, t + 1] = -0.5 * fps, 0.5 * fps
    return D


class RetargetProblem:
    """Loss and analytic gradient for one sequence on one humanoid skeleton."""

    def __init__(
        self,
        skeleton: Skeleton,
        mapping: JointMapping,
        targets: ReferenceTargets,
        config: RetargetConfig,
        fps: float,
    ):
        if not skeleton.is_revolute:
            raise RetargetConfigError("optimization needs an all-revolute target skeleton")
        self.skeleton = skeleton
        self.config = config
        self.targets = targets
        self.fps = fps
        self.pair_frames = np.array(mapping.humanoid_indices, dtype=int)
        self.wrist_frames = None
        if config.hand_weight > 0:
            if targets.wrists is None:
                raise RetargetConfigError("hand term needs wrist targets from the human skeleton")
            self.wrist_frames = np.array([skeleton.index(n) for n in WRIST_NAMES])
        T = targets.num_frames
        self.acc_op = finite_difference_matrix(T, fps) @ finite_difference_matrix(T, fps)
        self._ref_rot_t = np.swapaxes(targets.orientations, -1, -2)

    def evaluate(
        self, root_pos: np.ndarray, root_quat: np.ndarray, joints: np.ndarray, grad: bool = True
    ) -> tuple[LossBreakdown, tuple[np.ndarray, np.ndarray, np.ndarray] | None]:
        """Loss terms and gradients w.r.t. root position, root rotation
        (world-frame rotation-vector increment) and joint angles."""
        cfg = self.config
        sk = self.skeleton
        tg = self.targets
        T = joints.shape[0]
        if tg.num_frames != T:
            raise ValueError(f"candidate has {T} frames, targets have {tg.num_frames}")
        root_rot = quat_to_matrix(root_quat)
        pos, rot = fk_batch(sk, root_pos, root_rot, local_rotations(sk, joints))
        K = len(self.pair_frames)
        F = sk.num_frames
        g_pos = np.zeros((T, F, 3))
        g_rot = np.zeros((T, F, 3))

        diff = pos[:, self.pair_frames] - tg.positions
        l_pos = float(np.sum(diff * diff) / (T * K)) if K else 0.0
        if grad and K:
            np.add.at(g_pos, (slice(None), self.pair_frames), 2.0 * cfg.lambda_pos * diff / (T * K))

        l_hand = 0.0
        if self.wrist_frames is not None:
            wd = pos[:, self.wrist_frames] - tg.wrists
            l_hand = float(np.sum(wd * wd) / (T * 2))
            if grad:
                np.add.at(g_pos, (slice(None), self.wrist_frames), 2.0 * cfg.hand_weight * wd / (T * 2))

        l_ori = 0.0
        if K:
            err = matrix_to_rotvec(rot[:, self.pair_frames] @ self._ref_rot_t)
            angle = np.linalg.norm(err, axis=-1)
            l_ori = float(np.sum(angle) / (T * K))
            if grad:
                unit = np.where(angle[..., None] > 1e-12, err / np.maximum(angle, 1e-300)[..., None], 0.0)
                np.add.at(g_rot, (slice(None), self.pair_frames), cfg.lambda_ori * unit / (T * K))

        acc = self.acc_op @ joints
        l_acc = float(np.mean(np.abs(acc)))
        total = cfg.lambda_pos * l_pos + cfg.hand_weight * l_hand + cfg.lambda_ori * l_ori + cfg.lambda_acc * l_acc
        terms = LossBreakdown(total, l_pos, l_hand, l_ori, l_acc)
        if not grad:
            return terms, None

        # accumulate force / moment of every subtree (moments about the origin)
        s_f = g_pos.copy()
        s_m = np.cross(pos, g_pos) + g_rot
        parents = sk.parents
        for f in range(F - 1, 0, -1):
            s_f[:, parents[f]] += s_f[:, f]
            s_m[:, parents[f]] += s_m[:, f]
        n = sk.num_joints
        world_axes = np.einsum("tfij,fj->tfi", rot[:, 1:n], sk.axes)
        torque = s_m[:, 1:n] - np.cross(pos[:, 1:n], s_f[:, 1:n])
        g_joints = np.einsum("tfi,tfi->tf", world_axes, torque)
        g_joints += cfg.lambda_acc * (self.acc_op.T @ np.sign(acc)) / acc.size
        g_root_pos = s_f[:, 0]
        g_root_rot = s_m[:, 0] - np.cross(pos[:, 0], s_f[:, 0])
        return terms, (g_root_pos, g_root_rot, g_joints)


def loss_optim(
    candidate: MotionSequence,
    targets: ReferenceTargets,
    mapping: JointMapping,
    config: RetargetConfig,
    skeleton: Skeleton,
) -> LossBreakdown:
    """Weighted retargeting loss of ``candidate`` against ``targets``."""
    if candidate.num_frames != targets.num_frames:
        raise ValueError(f"candidate has {candidate.num_frames} frames, targets have {targets.num_frames}")
    problem = RetargetProblem(skeleton, mapping, targets, config, candidate.fps)
    terms, _ = problem.evaluate(candidate.root_pos, candidate.root_quat, candidate.joints, grad=False)
    return terms


class Adam:
    def __init__(self, shapes, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, grads, lr: float | None = None) -> list[np.ndarray]:
        """Return the update (to be added) for each parameter."""
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for m, v, g in zip(self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out.append(-lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def learning_rate_at(config: RetargetConfig, epoch: int) -> float:
    """Step size for ``epoch`` (1-based); starts at ``config.learning_rate``."""
    if config.lr_schedule == "constant" or config.epochs <= 1:
        return config.learning_rate
    frac = (epoch - 1) / (config.epochs - 1)
    return config.learning_rate * config.lr_final_ratio**frac


@dataclass
class RetargetResult:
    motion: MotionSequence
    loss: LossBreakdown
    initial_loss: LossBreakdown
    best_epoch: int
    checkpoints: list[tuple[int, float]] = field(default_factory=list)


def optimize_motion(
    init: MotionSequence,
    skeleton: Skeleton,
    mapping: JointMapping,
    targets: ReferenceTargets,
    config: RetargetConfig,
) -> RetargetResult:
    """Run Adam from ``init`` and return the best iterate seen.

    ``checkpoints`` holds ``(epoch, best loss so far)`` every
    ``config.checkpoint_every`` epochs and at the end.
    """
    problem = RetargetProblem(skeleton, mapping, targets, config, init.fps)
    limits = skeleton.limits
    root_pos = init.root_pos.copy()
    root_quat = quat_normalize(init.root_quat.copy())
    joints = init.joints.copy()
    if limits is not None:
        joints = np.clip(joints, *limits)

    terms, grads = problem.evaluate(root_pos, root_quat, joints)
    if not np.isfinite(terms.total):
        raise RetargetInitError(f"initial loss is not finite ({terms.total})")
    initial = terms
    best = (terms, root_pos.copy(), root_quat.copy(), joints.copy(), 0)
    checkpoints: list[tuple[int, float]] = [(0, terms.total)]
    adam = Adam([root_pos.shape, root_pos.shape, joints.shape], config.learning_rate)

    for epoch in range(1, config.epochs + 1):
        d_pos, d_rot, d_joints = adam.step(grads, learning_rate_at(config, epoch))
        root_pos = root_pos + d_pos
        root_quat = quat_normalize(quat_mul(rotvec_to_quat(d_rot), root_quat))
        joints = joints + d_joints
        if limits is not None:
            joints = np.clip(joints, *limits)
        terms, grads = problem.evaluate(root_pos, root_quat, joints)
        if np.isfinite(terms.total) and terms.total < best[0].total:
            best = (terms, root_pos.copy(), root_quat.copy(), joints.copy(), epoch)
        if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
            checkpoints.append((epoch, best[0].total))

    terms, rp, rq, jv, epoch = best
    log.debug("retarget: loss %.3e -> %.3e (best epoch %d)", initial.total, terms.total, epoch)
    motion = init.replace(root_pos=rp, root_quat=rq, joints=jv, skeleton_id=skeleton.name)
    return RetargetResult(motion, terms, initial, epoch, checkpoints)


def retarget_optimize(
    human_motion: MotionSequence,
    human_skeleton: Skeleton,
    humanoid_skeleton: Skeleton,
    mapping: JointMapping,
    config: RetargetConfig | None = None,
    targets: ReferenceTargets | None = None,
) -> RetargetResult:
    """Optimization retargeting initialized from copy-rotation.

    ``targets`` defaults to the human's FK at the mapped joints.
    """
    config = config or RetargetConfig()
    mapping.validate(human_skeleton, humanoid_skeleton)
    if targets is None:
        targets = reference_targets(human_motion, human_skeleton, mapping)
    init = copy_rotation(human_motion, mapping, human_skeleton, humanoid_skeleton, clamp=True)
    return optimize_motion(init, humanoid_skeleton, mapping, targets, config)


def retarget_align_optimize(
    human_motion: MotionSequence,
    human_skeleton: Skeleton,
    humanoid_skeleton: Skeleton,
    mapping: JointMapping,
    config: RetargetConfig | None = None,
) -> RetargetResult:
    """Shape alignment followed by optimization against the rescaled human's FK."""
    aligned = align_skeleton_shape(human_skeleton, humanoid_skeleton, mapping)
    return retarget_optimize(human_motion, aligned, humanoid_skeleton, mapping, config)
