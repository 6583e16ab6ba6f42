"""Command-line batch driver.

Every subcommand accepts ``--config FILE`` (a JSON object keyed by option
name); options given on the command line take precedence.  Exit status is
0 on success, 1 when a batch ran but produced only failures (or, for
``retarget``, any failed sequence), and 2 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .metrics import (
    LAMBDA_P,
    SceneError,
    TaskScene,
    aggregate,
    evaluate_motion,
    kinematic_success,
    load_gains,
    load_scene,
    reports_from_csv,
    reports_to_csv,
)
from .motion import MotionFormatError, MotionSchemaError, dumps_motion, load_motion
from .perception import (
    CELL_SIZE,
    PerceptionError,
    cell_size_for_task,
    elevation_from_depths,
    find_depth_files,
    load_depth,
    target_point_map,
)
from .retarget import (
    RetargetConfig,
    RetargetConfigError,
    copy_rotation,
    load_mapping,
    loss_optim,
    reference_targets,
    retarget_align_optimize,
    retarget_optimize,
)
from .retarget.mapping import MappingError
from .rewards import RewardError, rewards_to_csv, score_motion
from .skeleton import SkeletonError, load_skeleton

log = logging.getLogger("skilltransfer")

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2
ALGOS = ("copy", "optimize", "align-optimize")
MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad configuration or unreadable input; maps to exit status 2."""


# ---------------------------------------------------------------------------
# config handling


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser, defaults: dict) -> None:
    """Fill options left unset on the command line from --config, then defaults."""
    known = {a.dest for a in parser._actions}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "command", "func"):
                raise UsageError(f"unknown config key {key!r}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for dest, value in defaults.items():
        if getattr(args, dest) is None:
            setattr(args, dest, value)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _motion_files(path: str) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise UsageError(f"corpus {path} does not exist")
    return sorted(f for f in p.iterdir() if f.suffix == ".json" and f.name != MANIFEST)


def _scene_for(scenes: str, motion_id: str) -> TaskScene:
    p = Path(scenes)
    if p.is_dir():
        p = p / f"{motion_id}.json"
    if not p.is_file():
        raise UsageError(f"no scene file for {motion_id} ({p})")
    try:
        return load_scene(p)
    except (OSError, ValueError) as exc:
        raise UsageError(f"{p}: {exc}") from None


def _pool_map(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Map in input order; a process pool when more than one worker is asked for."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# retarget


@dataclass(frozen=True)
class _RetargetJob:
    path: str
    algo: str
    mapping: str
    human_skeleton: str | None
    humanoid_skeleton: str
    config: RetargetConfig
    scenes: str | None


def _retarget_one(job: _RetargetJob) -> dict:
    mid = Path(job.path).stem
    entry: dict = {"id": mid}
    try:
        mapping = load_mapping(job.mapping)
        human = load_skeleton(job.human_skeleton or mapping.human_skeleton)
        robot = load_skeleton(job.humanoid_skeleton or mapping.humanoid_skeleton)
        motion = load_motion(job.path, human)
        if job.algo == "copy":
            out = copy_rotation(motion, mapping, human, robot, clamp=True)
            loss = loss_optim(out, reference_targets(motion, human, mapping), mapping, job.config, robot).total
        elif job.algo == "optimize":
            res = retarget_optimize(motion, human, robot, mapping, job.config)
            out, loss = res.motion, res.loss.total
        else:
            res = retarget_align_optimize(motion, human, robot, mapping, job.config)
            out, loss = res.motion, res.loss.total
        entry["loss"] = float(loss)
        if job.scenes is not None:
            scene = _scene_for(job.scenes, mid)
            if not kinematic_success(scene, out, robot).passed:
                entry["status"] = "filtered"
                return entry
        entry["status"] = "ok"
        entry["output"] = f"{mid}.json"
        entry["motion"] = dumps_motion(out)
    except (OSError, ValueError, RuntimeError, LookupError, UsageError) as exc:
        entry["status"] = "failed"
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


def cmd_retarget(args: argparse.Namespace) -> int:
    _require(args, "input", "out")
    if args.algo not in ALGOS:
        raise UsageError(f"unknown algorithm {args.algo!r}; choose from {', '.join(ALGOS)}")
    if args.filter and not args.scenes:
        raise UsageError("--filter needs --scenes")
    try:
        config = RetargetConfig(
            lambda_pos=args.lambda_pos,
            lambda_ori=args.lambda_ori,
            lambda_acc=args.lambda_acc,
            lambda_hand=args.lambda_hand,
            learning_rate=args.lr,
            epochs=args.epochs,
            task_id=args.task,
            seed=args.seed,
        )
        load_mapping(args.mapping)
    except (RetargetConfigError, MappingError, LookupError, OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    files = _motion_files(args.input)
    jobs = [
        _RetargetJob(str(f), args.algo, args.mapping, args.human_skeleton, args.humanoid_skeleton, config,
                     args.scenes if args.filter else None)
        for f in files
    ]
    entries = _pool_map(_retarget_one, jobs, args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for e in entries:
        text = e.pop("motion", None)
        if text is not None:
            _write_text(out_dir / e["output"], text)
        log.info("%s: %s", e["id"], e["status"])
    manifest = {"algo": args.algo, "mapping": args.mapping, "seed": args.seed, "sequences": entries}
    _write_text(out_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    failed = sum(e["status"] == "failed" for e in entries)
    return EXIT_FAILURES if failed else EXIT_OK


# ---------------------------------------------------------------------------
# eval


@dataclass(frozen=True)
class _EvalJob:
    path: str
    scene: TaskScene
    skeleton: str
    gains: str | None


def _eval_one(job: _EvalJob):
    skeleton = load_skeleton(job.skeleton)
    motion = load_motion(job.path, skeleton)
    return evaluate_motion(Path(job.path).stem, motion, job.scene, skeleton, load_gains(job.gains))


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "input", "scenes")
    if not Path(args.scenes).exists():
        raise UsageError(f"scene path {args.scenes} does not exist")
    files = _motion_files(args.input)
    jobs = [_EvalJob(str(f), _scene_for(args.scenes, f.stem), args.skeleton, args.gains) for f in files]
    try:
        load_gains(args.gains)
        reports = _pool_map(_eval_one, jobs, args.workers)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    text = reports_to_csv(reports)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _write_text(Path(args.out), text)
    if reports:
        kin, avg = aggregate(reports)
        log.info("kinematic %.4f  energy-averaged %.4f  (%d motions)", kin, avg, len(reports))
        if all(r.success_avg == 0 for r in reports):
            return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# elevation


def _parse_targets(spec: str) -> np.ndarray:
    p = Path(spec)
    if p.is_file():
        return np.asarray(json.loads(p.read_text(encoding="utf-8")), dtype=float).reshape(-1, 3)
    return np.array([[float(v) for v in t.split(",")] for t in spec.split(";")]).reshape(-1, 3)


def cmd_elevation(args: argparse.Namespace) -> int:
    _require(args, "out")
    cell = args.cell_size if args.cell_size is not None else (cell_size_for_task(args.task) if args.task else CELL_SIZE)
    written = []
    if args.input:
        p = Path(args.input)
        files = [p] if p.is_file() else find_depth_files(p) if p.is_dir() else None
        if files is None:
            raise UsageError(f"depth input {args.input} does not exist")
        images = {}
        for f in files:
            depth, cam = load_depth(f)
            if cam in images:
                raise UsageError(f"two depth images for camera {cam!r}")
            images[cam] = depth
        emap = elevation_from_depths(images, cell_size=cell)
        written += emap.save(args.out)
    if args.targets:
        tmap = target_point_map(_parse_targets(args.targets), cell)
        written += tmap.save(Path(args.out).with_suffix("").as_posix() + "_target")
    if not written:
        raise UsageError("nothing to do: give --in and/or --targets")
    for w in written:
        log.info("wrote %s", w)
    return EXIT_OK


# ---------------------------------------------------------------------------
# score-rewards


def cmd_score_rewards(args: argparse.Namespace) -> int:
    _require(args, "motion", "reference", "task", "out")
    skeleton = load_skeleton(args.skeleton)
    mp, rp = Path(args.motion), Path(args.reference)
    if mp.is_dir():
        if not rp.is_dir():
            raise UsageError("--reference must be a directory when --motion is")
        pairs = [(f, rp / f.name, Path(args.out) / f"{f.stem}.csv") for f in _motion_files(args.motion)]
    else:
        pairs = [(mp, rp, Path(args.out))]
    for motion_path, ref_path, out_path in pairs:
        if not ref_path.is_file():
            raise UsageError(f"no reference motion {ref_path}")
        rows = score_motion(
            args.task, load_motion(motion_path, skeleton), load_motion(ref_path, skeleton), skeleton, args.variant
        )
        _write_text(out_path, rewards_to_csv(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args: argparse.Namespace) -> int:
    _require(args, "input")
    reports = []
    for path in args.input:
        try:
            reports += reports_from_csv(Path(path).read_text(encoding="utf-8"))
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read report {path}: {exc}") from None
    if not reports:
        raise UsageError("no motion rows in the given reports")
    kin, avg = aggregate(reports)
    summary = {
        "motions": len(reports),
        "kinematic": kin,
        "energy_averaged": avg,
        "per_lambda": {f"{lam:.0e}": sum(r.success_per_lambda[k] for r in reports) / len(reports)
                       for k, lam in enumerate(LAMBDA_P)},
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _write_text(Path(args.out), text)
    return EXIT_OK


# ---------------------------------------------------------------------------


_DEFAULTS = {
    "retarget": dict(
        algo="optimize", mapping="unihsi", humanoid_skeleton="h1", lambda_pos=1.0, lambda_ori=0.1,
        lambda_acc=2e-5, lr=0.02, epochs=3000, seed=0, workers=1, filter=False,
    ),
    "eval": dict(skeleton="h1", workers=1),
    "elevation": dict(),
    "score-rewards": dict(skeleton="h1", variant="hst"),
    "report": dict(),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skilltransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of option defaults")
        p.set_defaults(func=func)
        return p

    p = add("retarget", cmd_retarget, "retarget human motions onto the humanoid")
    p.add_argument("--in", dest="input", help="motion file or directory of motion files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--algo", help="copy, optimize or align-optimize (default optimize)")
    p.add_argument("--mapping", help="mapping preset or JSON file (default unihsi)")
    p.add_argument("--human-skeleton", help="human skeleton name or file (default: from the mapping)")
    p.add_argument("--humanoid-skeleton", help="humanoid skeleton name or file (default h1)")
    p.add_argument("--task", choices=["SC", "SS", "LB", "LS", "T", "L"])
    p.add_argument("--lambda-pos", type=float)
    p.add_argument("--lambda-ori", type=float)
    p.add_argument("--lambda-acc", type=float)
    p.add_argument("--lambda-hand", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--filter", action="store_true", default=None, help="drop outputs failing the task's kinematic metric")
    p.add_argument("--scenes", help="scene file, or directory of <motion id>.json scenes (for --filter)")

    p = add("eval", cmd_eval, "evaluate humanoid motions against task scenes")
    p.add_argument("--in", dest="input", help="motion file or directory")
    p.add_argument("--scenes", help="scene file, or directory of <motion id>.json scenes")
    p.add_argument("--skeleton", help="humanoid skeleton (default h1)")
    p.add_argument("--gains", help="PD gains JSON (default: bundled H1 gains)")
    p.add_argument("--out", help="report CSV path ('-' for stdout)")
    p.add_argument("--workers", type=int)

    p = add("elevation", cmd_elevation, "rasterize depth images into an elevation map")
    p.add_argument("--in", dest="input", help="depth .f32 file or directory with JSON sidecars")
    p.add_argument("--task", choices=["SC", "SS", "LB", "LS", "T", "L"])
    p.add_argument("--cell-size", type=float)
    p.add_argument("--targets", help="'x,y,z;x,y,z' or a JSON file of target points")
    p.add_argument("--out", help="output path stem (.pgm/.f32/.json are written)")

    p = add("score-rewards", cmd_score_rewards, "per-frame tracking rewards of motion logs")
    p.add_argument("--motion", help="humanoid motion file or directory")
    p.add_argument("--reference", help="reference motion file or directory (matched by file name)")
    p.add_argument("--task", choices=["SC", "SS", "LB", "LS", "T", "L"])
    p.add_argument("--variant", choices=["hst", "phc"])
    p.add_argument("--skeleton")
    p.add_argument("--out", help="CSV path, or directory when scoring directories")

    p = add("report", cmd_report, "aggregate eval CSVs")
    p.add_argument("--in", dest="input", nargs="+", help="one or more eval CSVs")
    p.add_argument("--out", help="JSON summary path ('-' for stdout)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _apply_config(args, sub, _DEFAULTS[args.command])
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        OSError,
        MotionFormatError,
        MotionSchemaError,
        SkeletonError,
        SceneError,
        PerceptionError,
        RewardError,
        MappingError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
