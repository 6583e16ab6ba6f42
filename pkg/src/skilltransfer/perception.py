"""Egocentric cameras, depth back-projection and elevation maps.

Camera frame convention: x forward (optical axis), y left, z up.  Pixel
``(row, col)`` has its center at ``(row + 0.5, col + 0.5)`` and the
principal point sits at the image center.  Depth is distance along the
optical axis.

Elevation grids are top-down views centered on the root: row index grows
with root +x, column index with root +y, and cell ``(64, 64)`` of a 128
grid contains the origin.  Rendered as an image, the humanoid therefore
faces down.  Empty cells hold NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rotations import axis_angle_to_matrix

GRID_SIZE = 128
CELL_SIZE = 0.04
TARGET_CELL_SIZE = 0.01
MAX_DEPTH = 6.0
CAPTURE_CLIP = 50.0
NO_DATA = np.nan

PGM_LOW, PGM_HIGH = -1.0, 2.0


class PerceptionError(ValueError):
    pass


def _mount_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Yaw about root z, then a downward pitch about the camera's left axis."""
    yaw = axis_angle_to_matrix(np.array([0.0, 0.0, 1.0]), math.radians(yaw_deg))
    pitch = axis_angle_to_matrix(np.array([0.0, 1.0, 0.0]), math.radians(pitch_deg))
    return yaw @ pitch


@dataclass(frozen=True, eq=False)
class Camera:
    name: str
    width: int = 480
    height: int = 360
    hfov_deg: float = 120.0
    mount_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mount_rot: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if not 0.0 < self.hfov_deg < 180.0:
            raise PerceptionError(f"camera {self.name!r}: FOV must be in (0, 180) degrees")
        if self.width <= 0 or self.height <= 0:
            raise PerceptionError(f"camera {self.name!r}: resolution must be positive")
        rot = np.asarray(self.mount_rot, dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise PerceptionError(f"camera {self.name!r}: mount rotation is not a proper rotation")
        object.__setattr__(self, "mount_rot", rot)
        object.__setattr__(self, "mount_pos", np.asarray(self.mount_pos, dtype=float).reshape(3))

    @classmethod
    def mounted(cls, name: str, yaw_deg: float, pitch_deg: float, position, **kw) -> Camera:
        return cls(name, mount_pos=np.asarray(position, dtype=float), mount_rot=_mount_rotation(yaw_deg, pitch_deg), **kw)

    @property
    def focal(self) -> float:
        """Focal length in pixels, shared by both axes."""
        return (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)

    @property
    def vfov_deg(self) -> float:
        return math.degrees(2.0 * math.atan((self.height / 2.0) / self.focal))

    @property
    def principal_point(self) -> tuple[float, float]:
        """(col, row) of the optical axis in continuous pixel coordinates."""
        return self.width / 2.0, self.height / 2.0


def _pelvis_camera(name: str, yaw_deg: float) -> Camera:
    # 10 cm out from the pelvis center along the viewing direction
    yaw = math.radians(yaw_deg)
    return Camera.mounted(name, yaw_deg, 35.0, [0.1 * math.cos(yaw), 0.1 * math.sin(yaw), 0.0])


CAMERA_PRESETS: dict[str, Camera] = {
    "right_front": _pelvis_camera("right_front", -45.0),
    "left_front": _pelvis_camera("left_front", 45.0),
    "left_back": _pelvis_camera("left_back", 135.0),
    "right_back": _pelvis_camera("right_back", -135.0),
    "head": Camera.mounted("head", 0.0, 55.0, [0.0, 0.0, 0.55]),
}

RIGS: dict[str, tuple[str, ...]] = {
    "pelvis": ("right_front", "left_front", "left_back", "right_back"),
    "head": ("head",),
}


def rig_for_task(task_id: str) -> tuple[Camera, ...]:
    names = RIGS["head"] if task_id in ("T", "L") else RIGS["pelvis"]
    return tuple(CAMERA_PRESETS[n] for n in names)


def cell_size_for_task(task_id: str) -> float:
    return TARGET_CELL_SIZE if task_id == "T" else CELL_SIZE


def get_camera(name: str) -> Camera:
    try:
        return CAMERA_PRESETS[name]
    except KeyError:
        raise PerceptionError(f"unknown camera {name!r}; presets: {', '.join(CAMERA_PRESETS)}") from None


def _body_to_root(root_transform) -> tuple[np.ndarray, np.ndarray]:
    if root_transform is None:
        return np.zeros(3), np.eye(3)
    pos, rot = root_transform
    return np.asarray(pos, dtype=float), np.asarray(rot, dtype=float)


def depth_to_points(
    depth: np.ndarray,
    camera: Camera,
    root_transform: tuple[np.ndarray, np.ndarray] | None = None,
    max_depth: float = MAX_DEPTH,
) -> np.ndarray:
    """Back-project a depth image to an ``(N, 3)`` point set in the root frame.

    ``root_transform`` is the ``(position, rotation)`` of the body carrying
    the camera mounts, expressed in the root frame; omit it when the mounts
    are already root-relative.  Pixels deeper than ``max_depth``, non-finite
    or zero are dropped.  Points come out in row-major pixel order.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (camera.height, camera.width):
        raise PerceptionError(
            f"depth image is {depth.shape[1]}x{depth.shape[0]}, camera {camera.name!r} is {camera.width}x{camera.height}"
        )
    if np.any(depth < 0):
        raise PerceptionError("depth values must be non-negative")
    rows, cols = np.nonzero(np.isfinite(depth) & (depth > 0) & (depth <= max_depth))
    d = depth[rows, cols]
    cx, cy = camera.principal_point
    f = camera.focal
    cam = np.stack([d, d * (cx - (cols + 0.5)) / f, d * (cy - (rows + 0.5)) / f], axis=-1)
    body = cam @ camera.mount_rot.T + camera.mount_pos
    pos, rot = _body_to_root(root_transform)
    return body @ rot.T + pos


def project_points(
    points: np.ndarray,
    camera: Camera,
    root_transform: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous ``(col, row)`` pixel coordinates and depth of root-frame points."""
    pos, rot = _body_to_root(root_transform)
    body = (np.asarray(points, dtype=float) - pos) @ rot
    cam = (body - camera.mount_pos) @ camera.mount_rot
    d = cam[:, 0]
    cx, cy = camera.principal_point
    f = camera.focal
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cx - f * cam[:, 1] / d
        v = cy - f * cam[:, 2] / d
    return np.stack([u, v], axis=-1), d


@dataclass(frozen=True, eq=False)
class ElevationMap:
    heights: np.ndarray  # (G, G), NaN where empty
    cell_size: float

    @property
    def grid_size(self) -> int:
        return self.heights.shape[0]

    @property
    def populated(self) -> np.ndarray:
        return ~np.isnan(self.heights)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        rows, cols = cell_index(np.array([x]), np.array([y]), self.cell_size, self.grid_size)
        return int(rows[0]), int(cols[0])

    def to_gray(self) -> np.ndarray:
        """8-bit image: empty cells 0, heights in [-1, 2] m mapped onto [1, 255]."""
        h = np.clip(self.heights, PGM_LOW, PGM_HIGH)
        scaled = 1.0 + np.round((h - PGM_LOW) / (PGM_HIGH - PGM_LOW) * 254.0)
        return np.where(self.populated, scaled, 0.0).astype(np.uint8)

    def to_pgm(self) -> bytes:
        img = self.to_gray()
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        return header + img.tobytes()

    def save(self, path: str | Path) -> tuple[Path, Path, Path]:
        """Write ``<stem>.pgm``, raw float32 cells ``<stem>.f32`` and ``<stem>.json``."""
        base = Path(path).with_suffix("")
        pgm, raw, meta = base.with_suffix(".pgm"), base.with_suffix(".f32"), base.with_suffix(".json")
        pgm.write_bytes(self.to_pgm())
        raw.write_bytes(self.heights.astype("<f4").tobytes())
        meta.write_text(
            json.dumps({"rows": self.grid_size, "cols": self.grid_size, "cell_size": self.cell_size, "no_data": "nan"})
            + "\n",
            encoding="utf-8",
        )
        return pgm, raw, meta


def load_elevation(path: str | Path) -> ElevationMap:
    base = Path(path).with_suffix("")
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    raw = np.frombuffer(base.with_suffix(".f32").read_bytes(), dtype="<f4")
    return ElevationMap(raw.reshape(meta["rows"], meta["cols"]).astype(float), float(meta["cell_size"]))


def cell_index(x: np.ndarray, y: np.ndarray, cell_size: float, grid_size: int = GRID_SIZE):
    """Grid (row, col) of root-frame coordinates; may fall outside the grid."""
    half = grid_size // 2
    rows = np.floor(np.asarray(x, dtype=float) / cell_size).astype(np.int64) + half
    cols = np.floor(np.asarray(y, dtype=float) / cell_size).astype(np.int64) + half
    return rows, cols


def rasterize_elevation(points: np.ndarray, cell_size: float = CELL_SIZE, grid_size: int = GRID_SIZE) -> ElevationMap:
    """Per-cell maximum z of the points; points outside the grid are dropped."""
    if not cell_size > 0:
        raise PerceptionError("cell size must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    rows, cols = cell_index(pts[:, 0], pts[:, 1], cell_size, grid_size)
    keep = (rows >= 0) & (rows < grid_size) & (cols >= 0) & (cols < grid_size)
    grid = np.full(grid_size * grid_size, -np.inf)
    np.maximum.at(grid, rows[keep] * grid_size + cols[keep], pts[keep, 2])
    grid[np.isneginf(grid)] = NO_DATA
    return ElevationMap(grid.reshape(grid_size, grid_size), cell_size)


def target_point_map(targets: np.ndarray, cell_size: float = TARGET_CELL_SIZE, grid_size: int = GRID_SIZE) -> ElevationMap:
    """Map populated only at the cells under the target points (max height on collision)."""
    return rasterize_elevation(np.asarray(targets, dtype=float).reshape(-1, 3), cell_size, grid_size)


def elevation_from_depths(
    images: Mapping[str, np.ndarray],
    cameras: Sequence[Camera] | None = None,
    cell_size: float = CELL_SIZE,
    root_transform: tuple[np.ndarray, np.ndarray] | None = None,
) -> ElevationMap:
    """Merge depth images from several cameras into one elevation map."""
    cams = {c.name: c for c in cameras} if cameras is not None else CAMERA_PRESETS
    clouds = []
    for name in sorted(images):
        if name not in cams:
            raise PerceptionError(f"no camera named {name!r}")
        clouds.append(depth_to_points(images[name], cams[name], root_transform))
    points = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    return rasterize_elevation(points, cell_size)


# ---------------------------------------------------------------------------
# depth files: raw little-endian float32, row-major, plus a JSON sidecar


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_depth(path: str | Path, depth: np.ndarray, camera_id: str) -> None:
    path = Path(path)
    depth = np.asarray(depth)
    path.write_bytes(depth.astype("<f4").tobytes())
    _sidecar(path).write_text(
        json.dumps({"width": int(depth.shape[1]), "height": int(depth.shape[0]), "camera_id": camera_id}) + "\n",
        encoding="utf-8",
    )


def load_depth(path: str | Path) -> tuple[np.ndarray, str]:
    """Depth image clipped at the capture range, and its camera id."""
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
        w, h, cam = int(meta["width"]), int(meta["height"]), str(meta["camera_id"])
    except (OSError, ValueError, KeyError) as exc:
        raise PerceptionError(f"{path}: bad depth sidecar ({exc})") from None
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != w * h:
        raise PerceptionError(f"{path}: {raw.size} values for a {w}x{h} image")
    return np.minimum(raw.reshape(h, w).astype(float), CAPTURE_CLIP), cam


def find_depth_files(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix == ".f32" and _sidecar(p).exists())


def merge_maps(maps: Iterable[ElevationMap]) -> ElevationMap:
    """Cellwise max of maps sharing a layout (NaN-aware)."""
    maps = list(maps)
    if not maps:
        raise PerceptionError("nothing to merge")
    return ElevationMap(np.fmax.reduce([m.heights for m in maps]), maps[0].cell_size)
