import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skilltransfer.perception import (
    CAMERA_PRESETS,
    RIGS,
    Camera,
    ElevationMap,
    PerceptionError,
    depth_to_points,
    elevation_from_depths,
    load_depth,
    load_elevation,
    merge_maps,
    project_points,
    rasterize_elevation,
    rig_for_task,
    save_depth,
    target_point_map,
)


def brute_force(points, cell, grid=128):
    """Per-point scan with plain floats."""
    out = [[None] * grid for _ in range(grid)]
    for x, y, z in points:
        r = math.floor(x / cell) + grid // 2
        c = math.floor(y / cell) + grid // 2
        if 0 <= r < grid and 0 <= c < grid and (out[r][c] is None or z > out[r][c]):
            out[r][c] = z
    return np.array([[np.nan if v is None else v for v in row] for row in out])


def test_camera_intrinsics():
    cam = CAMERA_PRESETS["left_front"]
    assert (cam.width, cam.height, cam.hfov_deg) == (480, 360, 120.0)
    assert cam.focal == pytest.approx(240 / math.tan(math.radians(60)))
    assert cam.vfov_deg == pytest.approx(math.degrees(2 * math.atan(180 / cam.focal)))
    with pytest.raises(PerceptionError):
        Camera("bad", hfov_deg=180.0)
    with pytest.raises(PerceptionError):
        Camera("bad", mount_rot=np.diag([1.0, 1.0, -1.0]))


def test_rig_presets_look_down_and_around():
    forwards = []
    for cam in rig_for_task("SC"):
        f = cam.mount_rot[:, 0]
        assert math.degrees(math.asin(-f[2])) == pytest.approx(35.0)
        forwards.append(math.degrees(math.atan2(f[1], f[0])))
    assert sorted(round(a) for a in forwards) == [-135, -45, 45, 135]
    (head,) = rig_for_task("T")
    assert head.mount_pos[2] == 0.55
    assert math.degrees(math.asin(-head.mount_rot[2, 0])) == pytest.approx(55.0)
    assert len(RIGS["pelvis"]) == 4


def test_principal_ray():
    cam = Camera("odd", width=5, height=5)
    depth = np.full((5, 5), 7.0)
    depth[2, 2] = 2.5
    np.testing.assert_allclose(depth_to_points(depth, cam), [[2.5, 0.0, 0.0]])


def test_far_pixels_dropped():
    cam = CAMERA_PRESETS["right_back"]
    assert depth_to_points(np.full((360, 480), 7.0), cam).shape == (0, 3)
    assert depth_to_points(np.full((360, 480), 6.0), cam).shape == (360 * 480, 3)


def test_off_center_pixel_matches_ray_oracle():
    cam = Camera("c", width=480, height=360)
    depth = np.full((360, 480), 100.0)
    row, col, d = 40, 400, 3.0
    depth[row, col] = d
    (p,) = depth_to_points(depth, cam)
    half = math.radians(60)
    # angle of the ray from the optical axis in each image direction
    yaw = math.atan((240 - (col + 0.5)) / 240 * math.tan(half))
    pitch = math.atan((180 - (row + 0.5)) / 240 * math.tan(half))
    np.testing.assert_allclose(p, [d, d * math.tan(yaw), d * math.tan(pitch)], atol=1e-12)


def test_resolution_mismatch_and_negative_depth():
    cam = CAMERA_PRESETS["head"]
    with pytest.raises(PerceptionError):
        depth_to_points(np.ones((10, 10)), cam)
    with pytest.raises(PerceptionError):
        depth_to_points(-np.ones((360, 480)), cam)


@pytest.mark.parametrize("name", sorted(CAMERA_PRESETS))
def test_reprojection_recovers_pixel(name):
    cam = CAMERA_PRESETS[name]
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.2, 5.9, size=(360, 480))
    root = (np.array([0.1, -0.2, 0.3]), np.eye(3))
    pts = depth_to_points(depth, cam, root)
    uv, d = project_points(pts, cam, root)
    rows, cols = np.indices(depth.shape)
    np.testing.assert_allclose(uv[:, 0], cols.ravel() + 0.5, atol=1e-6)
    np.testing.assert_allclose(uv[:, 1], rows.ravel() + 0.5, atol=1e-6)
    np.testing.assert_allclose(d, depth.ravel(), atol=1e-9)


def test_single_point_cell():
    m = rasterize_elevation(np.array([[0.50, 0.50, 1.2]]), 0.04)
    assert np.argwhere(m.populated).tolist() == [[64 + math.floor(0.50 / 0.04)] * 2]
    assert m.heights[76, 76] == 1.2
    assert m.cell_of(0.0, 0.0) == (64, 64)


def test_empty_and_max_rule():
    assert not rasterize_elevation(np.zeros((0, 3))).populated.any()
    m = rasterize_elevation(np.array([[0.01, 0.01, 0.3], [0.02, 0.03, 0.9]]))
    assert m.heights[64, 64] == 0.9 and m.populated.sum() == 1


def test_forward_is_down_the_image():
    m = rasterize_elevation(np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.7]]))
    assert m.heights[64 + 25, 64] == 0.5  # ahead: larger row
    assert m.heights[64, 64 + 25] == 0.7  # left: larger column


def test_out_of_extent_dropped():
    m = rasterize_elevation(np.array([[2.56, 0.0, 1.0], [-2.56, 0.0, 1.0], [2.55, 0.0, 2.0]]))
    assert m.populated.sum() == 2
    assert m.heights[0, 64] == 1.0 and m.heights[127, 64] == 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 3000), st.sampled_from([0.04, 0.01]))
def test_rasterize_matches_brute_force(seed, n, cell):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3.0, 3.0, size=(n, 3))
    got = rasterize_elevation(pts, cell).heights
    want = brute_force(pts.tolist(), cell)
    assert np.array_equal(got, want, equal_nan=True)


def test_order_independence():
    rng = np.random.default_rng(5)
    clouds = [rng.uniform(-2, 2, size=(500, 3)) for _ in range(4)]
    merged = merge_maps(rasterize_elevation(c) for c in clouds)
    whole = rasterize_elevation(np.concatenate(clouds[::-1]))
    assert np.array_equal(merged.heights, whole.heights, equal_nan=True)


def test_target_map():
    m = target_point_map(np.array([[0.2, 0.3, 0.8], [-0.2, 0.3, 0.8]]))
    cells = np.argwhere(m.populated).tolist()
    assert len(cells) == 2 and all(m.heights[r, c] == 0.8 for r, c in cells)
    (r1, c1), (r2, c2) = sorted(cells)
    assert c1 == c2 == 64 + math.floor(0.3 / 0.01)
    assert (r1, r2) == (64 + math.floor(-0.2 / 0.01), 64 + math.floor(0.2 / 0.01)) == (44, 84)
    assert target_point_map(np.array([[5.0, 0.0, 1.0], [0.0, 0.0, 1.0]])).populated.sum() == 1
    same = target_point_map(np.array([[0.001, 0.001, 0.5], [0.002, 0.002, 0.9]]))
    assert same.populated.sum() == 1 and np.nanmax(same.heights) == 0.9


def test_pgm_and_sidecar(tmp_path):
    m = rasterize_elevation(np.array([[0.0, 0.0, -5.0], [0.1, 0.0, 0.5], [0.2, 0.0, 9.0]]))
    gray = m.to_gray()
    assert gray[64, 64] == 1 and gray[66, 64] == 128 and gray[69, 64] == 255
    assert gray[0, 0] == 0
    pgm, raw, meta = m.save(tmp_path / "e")
    data = pgm.read_bytes()
    assert data.startswith(b"P5\n128 128\n255\n") and len(data) == len(b"P5\n128 128\n255\n") + 128 * 128
    back = load_elevation(tmp_path / "e")
    assert np.array_equal(back.heights, m.heights.astype(np.float32).astype(float), equal_nan=True)


def test_depth_file_roundtrip(tmp_path):
    depth = np.random.default_rng(0).uniform(0, 80, size=(360, 480)).astype(np.float32)
    save_depth(tmp_path / "d.f32", depth, "left_front")
    back, cam = load_depth(tmp_path / "d.f32")
    assert cam == "left_front" and back.max() <= 50.0
    np.testing.assert_array_equal(back, np.minimum(depth, 50.0))
    (tmp_path / "d.json").write_text('{"width": 10, "height": 10, "camera_id": "x"}')
    with pytest.raises(PerceptionError):
        load_depth(tmp_path / "d.f32")


def test_elevation_from_depth_of_floor():
    # a flat floor 1 m below the pelvis seen by all four cameras
    images = {}
    for cam in rig_for_task("SC"):
        rows, cols = np.indices((cam.height, cam.width))
        ray = np.stack([np.ones_like(rows, float), (240 - cols - 0.5) / cam.focal, (180 - rows - 0.5) / cam.focal], -1)
        down = ray @ cam.mount_rot.T
        with np.errstate(divide="ignore"):
            t = np.where(down[..., 2] < 0, -(1.0 + cam.mount_pos[2]) / down[..., 2], 100.0)
        images[cam.name] = t
    m = elevation_from_depths(images)
    vals = m.heights[m.populated]
    assert m.populated.sum() > 1000
    np.testing.assert_allclose(vals, -1.0, atol=1e-9)
