"""Task-success evaluation: kinematic predicates, energy bound, aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .motion import MotionSequence, time_derivative
from .rotations import quat_to_matrix
from .skeleton import Skeleton

TASKS = ("SC", "SS", "LB", "LS", "T", "L")
LAMBDA_P = (1e6, 2e6, 4e6, 8e6)

SIT_MARGIN = 0.27  # m above the seat
LIE_MARGIN = 0.4  # m above the bed/sofa seat
HOLD_SECONDS = 0.3  # SC, SS, LB, LS
TOUCH_SECONDS = 1.0  # T
WRIST_TOLERANCE = 0.1  # m, tasks T and L
LIFT_HEIGHT = 0.2  # m, task L
TIME_LIMITS = {"SC": 20.0, "SS": 20.0, "LB": 20.0, "LS": 20.0, "T": 10.0, "L": 10.0}

PELVIS = "pelvis"
ANKLES = ("left_ankle", "right_ankle")
WRISTS = ("left_wrist", "right_wrist")

CSV_COLUMNS = ["motion_id", "kinematic", "e_max", "pass_1e6", "pass_2e6", "pass_4e6", "pass_8e6", "success_avg"]
NO_ENERGY = "no-energy"
SUMMARY_ID = "__summary__"


class SceneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    quat: np.ndarray
    half_extents: np.ndarray


@dataclass(frozen=True, eq=False)
class TaskScene:
    task_id: str
    footprint: np.ndarray | None = None  # (N, 2) convex polygon, world xy
    seat_height: float | None = None
    sofa_height: float | None = None
    targets: np.ndarray | None = None  # (2, 3) left, right wrist targets
    box: Box | None = None
    lift_height: float = LIFT_HEIGHT
    time_limit: float | None = None

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise SceneError(f"unknown task {self.task_id!r}")
        if self.time_limit is None:
            object.__setattr__(self, "time_limit", TIME_LIMITS[self.task_id])
        if not self.time_limit > 0:
            raise SceneError("time_limit must be positive")
        if self.footprint is not None:
            fp = np.asarray(self.footprint, dtype=float)
            _check_convex(fp)
            object.__setattr__(self, "footprint", fp)
        if self.seat_height is not None and self.seat_height < 0:
            raise SceneError("seat height must be >= 0")
        if self.targets is not None:
            object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float).reshape(2, 3))

    def require(self) -> None:
        """Raise :class:`SceneError` if a field the task needs is missing."""
        need = {
            "SC": ("footprint", "seat_height"),
            "SS": ("footprint", "seat_height"),
            "LB": ("footprint", "seat_height"),
            "LS": ("footprint", "seat_height", "sofa_height"),
            "T": ("targets",),
            "L": ("box",),
        }[self.task_id]
        missing = [n for n in need if getattr(self, n) is None]
        if missing:
            raise SceneError(f"task {self.task_id} scene is missing {', '.join(missing)}")

    def translated(self, offset) -> TaskScene:
        """The same scene moved rigidly by ``offset`` (x, y, z)."""
        d = np.asarray(offset, dtype=float)
        box = None
        if self.box is not None:
            box = Box(self.box.center + d, self.box.quat, self.box.half_extents)
        return TaskScene(
            self.task_id,
            None if self.footprint is None else self.footprint + d[:2],
            None if self.seat_height is None else self.seat_height + d[2],
            self.sofa_height,
            None if self.targets is None else self.targets + d,
            box,
            self.lift_height,
            self.time_limit,
        )


def _check_convex(poly: np.ndarray) -> None:
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise SceneError("footprint must be a polygon with at least 3 (x, y) vertices")
    edges = np.roll(poly, -1, axis=0) - poly
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if abs(area) < 1e-12:
        raise SceneError("footprint is degenerate (zero area)")
    if np.any(cross * np.sign(area) < -1e-12):
        raise SceneError("footprint is not convex")


def inside_footprint(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Point-in-convex-polygon test; points on the boundary count as inside."""
    pts = np.asarray(points, dtype=float)[..., :2]
    edges = np.roll(poly, -1, axis=0) - poly
    area = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    rel = pts[..., None, :] - poly
    cross = edges[:, 0] * rel[..., 1] - edges[:, 1] * rel[..., 0]
    return np.all(cross * np.sign(area) >= 0.0, axis=-1)


def box_surface_distance(points: np.ndarray, center, quat, half_extents) -> np.ndarray:
    """Euclidean distance from points to a solid oriented box (0 inside)."""
    rot = quat_to_matrix(np.asarray(quat, dtype=float))
    local = (np.asarray(points, dtype=float) - center) @ rot
    excess = np.maximum(np.abs(local) - np.asarray(half_extents, dtype=float), 0.0)
    return np.linalg.norm(excess, axis=-1)


def window_frames(seconds: float, fps: float) -> int:
    """Consecutive frames needed to cover ``seconds`` at ``fps``."""
    return max(1, math.ceil(seconds * fps - 1e-9))


def first_window(mask: np.ndarray, length: int) -> int | None:
    """Start index of the first run of ``length`` consecutive true values."""
    run = 0
    for i, ok in enumerate(mask):
        run = run + 1 if ok else 0
        if run >= length:
            return i - length + 1
    return None


@dataclass(frozen=True)
class KinematicResult:
    passed: bool
    start_time: float | None = None

    def __bool__(self) -> bool:
        return self.passed


def _in_band(z: np.ndarray, low: float, margin: float) -> np.ndarray:
    return (z >= low) & (z <= low + margin)


def kinematic_success(task: TaskScene, motion: MotionSequence, skeleton: Skeleton) -> KinematicResult:
    """Task-specific kinematic success predicate.

    Frames after the scene's time limit are ignored.  For sitting, lying
    and touching tasks the returned time is the start of the first window
    that satisfies the predicate.  For lifting it is the last frame's time.
    """
    task.require()
    pos, _ = motion.global_transforms(skeleton)
    n = min(motion.num_frames, int(math.floor(task.time_limit * motion.fps + 1e-9)) + 1)
    pos = pos[:n]
    fps = motion.fps
    tid = task.task_id

    if tid in ("SC", "SS", "LB", "LS"):
        pelvis = pos[:, skeleton.index(PELVIS)]
        H = task.seat_height
        if tid in ("SC", "SS"):
            ok = inside_footprint(pelvis, task.footprint) & _in_band(pelvis[:, 2], H, SIT_MARGIN)
        else:
            ok = inside_footprint(pelvis, task.footprint) & _in_band(pelvis[:, 2], H, LIE_MARGIN)
            ankles = pos[:, [skeleton.index(a) for a in ANKLES]]
            if tid == "LB":
                ok &= np.all(inside_footprint(ankles, task.footprint) & _in_band(ankles[..., 2], H, LIE_MARGIN), axis=1)
            else:
                ok &= np.all(ankles[..., 2] >= 0.5 * task.sofa_height, axis=1)
        start = first_window(ok, window_frames(HOLD_SECONDS, fps))
    elif tid == "T":
        wrists = pos[:, [skeleton.index(w) for w in WRISTS]]
        dist = np.linalg.norm(wrists - task.targets, axis=-1)
        start = first_window(np.all(dist <= WRIST_TOLERANCE, axis=1), window_frames(TOUCH_SECONDS, fps))
    else:
        if motion.object_pos is None:
            raise SceneError("task L needs the motion's object channel")
        last = n - 1
        box = task.box
        lifted = motion.object_pos[last, 2] - box.center[2] >= task.lift_height
        wrists = pos[last, [skeleton.index(w) for w in WRISTS]]
        dist = box_surface_distance(wrists, motion.object_pos[last], motion.object_quat[last], box.half_extents)
        passed = bool(lifted and np.all(dist <= WRIST_TOLERANCE))
        return KinematicResult(passed, last / fps if passed else None)
    if start is None:
        return KinematicResult(False)
    return KinematicResult(True, start / fps)


# ---------------------------------------------------------------------------
# physical metric


def energy_series(torques: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """Per-frame ``(mean|tau| * mean|v|)**2``."""
    tau = np.asarray(torques, dtype=float)
    vel = np.asarray(velocities, dtype=float)
    if tau.shape != vel.shape:
        raise ValueError(f"torques {tau.shape} and velocities {vel.shape} differ in shape")
    return (np.mean(np.abs(tau), axis=-1) * np.mean(np.abs(vel), axis=-1)) ** 2


def physical_success(series: np.ndarray, lambda_p: float) -> bool:
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("energy series is empty")
    if not lambda_p > 0:
        raise ValueError("lambda_p must be positive")
    return bool(np.max(series) < lambda_p)


def pd_torques(actions, angles, velocities, kp, kd) -> np.ndarray:
    """``kp * (actions - angles) - kd * velocities``, elementwise."""
    a, q, qd = (np.asarray(x, dtype=float) for x in (actions, angles, velocities))
    kp = np.asarray(kp, dtype=float)
    kd = np.asarray(kd, dtype=float)
    width = a.shape[-1]
    for name, arr in (("angles", q), ("velocities", qd), ("kp", kp), ("kd", kd)):
        if arr.shape[-1] != width:
            raise ValueError(f"{name} has width {arr.shape[-1]}, actions have {width}")
    return kp * (a - q) - kd * qd


@dataclass(frozen=True)
class PDGains:
    kp: tuple[float, ...]
    kd: tuple[float, ...]


def load_gains(path: str | Path | None = None) -> PDGains:
    """PD gains from a JSON file ``{"kp": [...], "kd": [...]}``; bundled H1 defaults if None."""
    if path is None:
        doc = json.loads(resources.files("skilltransfer.data").joinpath("h1_pd_gains.json").read_text(encoding="utf-8"))
    else:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kp, kd = tuple(float(x) for x in doc["kp"]), tuple(float(x) for x in doc["kd"])
    if len(kp) != len(kd):
        raise ValueError("kp and kd must have the same length")
    return PDGains(kp, kd)


@dataclass(frozen=True)
class EvalReport:
    motion_id: str
    kinematic_pass: bool
    energy_series: np.ndarray | None = field(default=None, compare=False)
    physical_pass_per_lambda: tuple[bool, ...] = (False,) * len(LAMBDA_P)

    @property
    def has_energy(self) -> bool:
        return self.energy_series is not None

    @property
    def e_max(self) -> float | None:
        return None if self.energy_series is None else float(np.max(self.energy_series))

    @property
    def success_per_lambda(self) -> tuple[bool, ...]:
        return tuple(self.kinematic_pass and p for p in self.physical_pass_per_lambda)

    @property
    def success_avg(self) -> float:
        return sum(self.success_per_lambda) / len(LAMBDA_P)


def make_report(motion_id: str, kinematic_pass: bool, series: np.ndarray | None) -> EvalReport:
    if series is None:
        return EvalReport(motion_id, bool(kinematic_pass))
    passes = tuple(physical_success(series, lam) for lam in LAMBDA_P)
    return EvalReport(motion_id, bool(kinematic_pass), np.asarray(series), passes)


def motion_energy(motion: MotionSequence, gains: PDGains | None = None) -> np.ndarray | None:
    """Energy series from logged torques, else from actions through the PD law."""
    if motion.joints.ndim != 2:
        raise ValueError("energy needs a revolute (humanoid) motion")
    vel = time_derivative(motion.joints, motion.fps)
    if motion.torques is not None:
        tau = motion.torques
    elif motion.actions is not None and gains is not None:
        tau = pd_torques(motion.actions, motion.joints, vel, gains.kp, gains.kd)
    else:
        return None
    return energy_series(tau, vel)


def evaluate_motion(
    motion_id: str,
    motion: MotionSequence,
    scene: TaskScene,
    skeleton: Skeleton,
    gains: PDGains | None = None,
) -> EvalReport:
    kin = kinematic_success(scene, motion, skeleton)
    return make_report(motion_id, kin.passed, motion_energy(motion, gains))


def aggregate(reports: Sequence[EvalReport]) -> tuple[float, float]:
    """(kinematic success rate, energy-averaged success rate)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    kin = sum(r.kinematic_pass for r in reports) / len(reports)
    avg = sum(r.success_avg for r in reports) / len(reports)
    return kin, avg


def _fmt(x: float) -> str:
    return repr(float(x))


def report_rows(reports: Sequence[EvalReport], summary: bool = True) -> list[list[str]]:
    rows = []
    for r in reports:
        e = NO_ENERGY if r.e_max is None else _fmt(r.e_max)
        rows.append(
            [r.motion_id, str(int(r.kinematic_pass)), e]
            + [str(int(p)) for p in r.physical_pass_per_lambda]
            + [_fmt(r.success_avg)]
        )
    if summary and reports:
        kin, avg = aggregate(reports)
        rows.append([SUMMARY_ID, _fmt(kin), "", "", "", "", "", _fmt(avg)])
    return rows


def reports_to_csv(reports: Sequence[EvalReport], summary: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(report_rows(reports, summary))
    return buf.getvalue()


def reports_from_csv(text: str) -> list[EvalReport]:
    """Parse per-motion rows of a report CSV (the summary row is skipped)."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["motion_id"] == SUMMARY_ID:
            continue
        passes = tuple(row[f"pass_{k}"] == "1" for k in ("1e6", "2e6", "4e6", "8e6"))
        series = None if row["e_max"] == NO_ENERGY else np.array([float(row["e_max"])])
        out.append(EvalReport(row["motion_id"], row["kinematic"] == "1", series, passes))
    return out


# ---------------------------------------------------------------------------
# scene files


def scene_from_dict(doc: dict) -> TaskScene:
    try:
        task = doc["task"]
    except KeyError:
        raise SceneError("scene file needs a 'task' field") from None
    box = None
    if doc.get("box") is not None:
        b = doc["box"]
        try:
            box = Box(
                np.asarray(b["center"], dtype=float),
                np.asarray(b.get("quat", [1.0, 0.0, 0.0, 0.0]), dtype=float),
                np.asarray(b["half_extents"], dtype=float),
            )
        except KeyError as exc:
            raise SceneError(f"box is missing {exc}") from None
    return TaskScene(
        task_id=task,
        footprint=None if doc.get("footprint") is None else np.asarray(doc["footprint"], dtype=float),
        seat_height=doc.get("seat_height"),
        sofa_height=doc.get("sofa_height"),
        targets=doc.get("targets"),
        box=box,
        lift_height=doc.get("lift_height", LIFT_HEIGHT),
        time_limit=doc.get("time_limit"),
    )


def load_scene(path: str | Path) -> TaskScene:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
