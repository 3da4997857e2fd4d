import math
from collections import deque

import numpy as np
import pytest

from mtglab import env
from mtglab.env import (
    RobotPose,
    SceneGenerationError,
    SceneSpec,
    TraversabilityGrid,
)


def bfs_reach(cells, start):
    """Plain queue flood fill, 8-connected; independent of scipy."""
    h, w = cells.shape
    seen = np.zeros_like(cells, dtype=bool)
    q = deque([start])
    seen[start[1], start[0]] = True
    while q:
        x, y = q.popleft()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and cells[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    q.append((nx, ny))
    return seen


# -- scene generation ------------------------------------------------------


@pytest.mark.parametrize("kind", env.SCENE_KINDS)
def test_generate_scene_deterministic(kind):
    a_grid, a_pose = env.generate_scene(SceneSpec(kind, seed=42))
    b_grid, b_pose = env.generate_scene(SceneSpec(kind, seed=42))
    assert np.array_equal(a_grid.cells, b_grid.cells)
    assert a_pose == b_pose


def test_corridor_is_a_single_band():
    grid, pose = env.generate_scene(SceneSpec("corridor", seed=3))
    rows = np.where(grid.cells.any(axis=1))[0]
    assert np.array_equal(rows, np.arange(rows[0], rows[-1] + 1))
    assert grid.cells[rows].all()  # band rows run wall to wall
    assert not grid.cells[: rows[0]].any() and not grid.cells[rows[-1] + 1 :].any()
    assert grid.traversable_at(pose.x, pose.y)


@pytest.mark.parametrize("kind", env.SCENE_KINDS)
@pytest.mark.parametrize("seed", [0, 7, 123])
def test_placement_contract(kind, seed):
    grid, pose = env.generate_scene(SceneSpec(kind, seed=seed))
    ix, iy = grid.cell_at(pose.x, pose.y)
    assert grid.cells[iy, ix]
    assert grid.clearance_field()[iy, ix] >= 1.0
    # some connected cell sits >= 15 m away (straight-line lower bound)
    seen = bfs_reach(grid.cells, (ix, iy))
    ys, xs = np.nonzero(seen)
    d = np.hypot(xs - ix, ys - iy) * grid.resolution
    assert d.max() >= 15.0


def test_generation_error_when_unplaceable():
    # a corridor narrower than the clearance requirement can never host the robot
    with pytest.raises(SceneGenerationError):
        spec = SceneSpec("open-with-obstacles", seed=0, size_m=6.0)
        env.generate_scene(spec)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="kind"):
        SceneSpec("maze", seed=0)


def test_heading_normalized():
    assert RobotPose(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
    assert RobotPose(0, 0, -math.pi).heading == pytest.approx(math.pi)
    assert RobotPose(0, 0, -0.5).heading == pytest.approx(-0.5)


def test_grid_rejects_bad_resolution():
    with pytest.raises(ValueError, match="resolution"):
        TraversabilityGrid(np.ones((4, 4), dtype=bool), 0.0)


def test_clearance_field_matches_manual_min_distance():
    cells = np.ones((5, 5), dtype=bool)
    cells[2, 2] = False
    grid = TraversabilityGrid(cells, 0.5)
    clear = grid.clearance_field()
    blocked = [(2, 2)]
    for iy in range(5):
        for ix in range(5):
            want = min(math.hypot(ix - bx, iy - by) for bx, by in blocked) * 0.5
            assert clear[iy, ix] == pytest.approx(want)
    assert clear[2, 2] == 0.0


# -- raycasting --------------------------------------------------------------


def free_grid(n=200, res=0.1):
    return TraversabilityGrid(np.ones((n, n), dtype=bool), res)


def test_raycast_free_space_hits_r_max():
    grid = free_grid()
    r = env.raycast(grid, RobotPose(10.0, 10.0, 0.3), r_max=5.0)
    assert np.all(r == 5.0)


def test_raycast_perpendicular_wall_range():
    cells = np.ones((200, 200), dtype=bool)
    cells[:, 150:153] = False  # wall at x = 15.0 m
    grid = TraversabilityGrid(cells, 0.1)
    r = env.raycast(grid, RobotPose(10.0, 10.0, 0.0), beams=65)
    assert abs(r[32] - 5.0) <= grid.resolution  # center beam is dead ahead


def test_raycast_adjacent_obstacle_bound():
    cells = np.ones((50, 50), dtype=bool)
    cells[25, 26] = False
    grid = TraversabilityGrid(cells, 0.1)
    r = env.raycast(grid, RobotPose(2.55, 2.55, 0.0), fov=2 * math.pi, beams=128)
    assert r.min() <= grid.resolution * math.sqrt(2.0)


def test_raycast_monotone_under_added_obstacles():
    rng = np.random.default_rng(9)
    grid = free_grid()
    pose = RobotPose(10.0, 10.0, rng.uniform(-math.pi, math.pi))
    base = env.raycast(grid, pose)
    world = grid
    for _ in range(5):
        discs = [(rng.uniform(2, 18), rng.uniform(2, 18), rng.uniform(0.3, 1.5))
                 for _ in range(rng.integers(1, 6))]
        world = env.grid_with_discs(world, discs)  # progressively denser
        r = env.raycast(world, pose)
        assert np.all(r <= base + 1e-12)
        base = r


def test_raycast_translation_invariance():
    cells = np.ones((300, 300), dtype=bool)
    cells[100:120, 200:210] = False
    g1 = TraversabilityGrid(cells, 0.1)
    shift = 13  # cells
    cells2 = np.ones((300, 300), dtype=bool)
    cells2[100 + shift : 120 + shift, 200 + shift : 210 + shift] = False
    g2 = TraversabilityGrid(cells2, 0.1)
    p1 = RobotPose(12.0, 9.0, 0.4)
    p2 = RobotPose(12.0 + shift * 0.1, 9.0 + shift * 0.1, 0.4)
    r1 = env.raycast(g1, p1)
    r2 = env.raycast(g2, p2)
    assert np.max(np.abs(r1 - r2)) <= g1.resolution


def test_raycast_pose_outside_grid_rejected():
    with pytest.raises(ValueError, match="outside"):
        env.raycast(free_grid(), RobotPose(-1.0, 5.0, 0.0))


def test_raycast_parameter_validation():
    with pytest.raises(ValueError, match="beams"):
        env.raycast(free_grid(), RobotPose(1, 1, 0), beams=1)
    with pytest.raises(ValueError, match="fov"):
        env.raycast(free_grid(), RobotPose(1, 1, 0), fov=0.0)


def test_raycast_beam_angles_span_fov():
    # two walls catch the extreme beams; they must sit at heading +- fov/2
    cells = np.ones((400, 400), dtype=bool)
    grid = TraversabilityGrid(cells, 0.1)
    pose = RobotPose(20.0, 20.0, 0.0)
    fov = math.radians(120)
    r = env.raycast(grid, pose, fov=fov, beams=5, r_max=10.0)
    assert r.shape == (5,)
    # free grid: every beam r_max regardless of angle
    assert np.all(r == 10.0)


# -- observation --------------------------------------------------------------


def test_observe_stationary_scans_identical():
    grid, pose = env.generate_scene(SceneSpec("junction", seed=1))
    vel = np.zeros((10, 2))
    obs = env.observe(grid, [pose] * 3, vel)
    assert obs.scans.shape == (3, 64)
    assert np.array_equal(obs.scans[0], obs.scans[1])
    assert np.array_equal(obs.scans[1], obs.scans[2])


def test_observe_requires_history():
    grid, pose = env.generate_scene(SceneSpec("corridor", seed=1))
    with pytest.raises(ValueError, match="poses"):
        env.observe(grid, [pose] * 2, np.zeros((10, 2)))
    with pytest.raises(ValueError, match="velocity"):
        env.observe(grid, [pose] * 3, np.zeros((4, 2)))


def test_observe_approach_shrinks_forward_beam():
    cells = np.ones((300, 300), dtype=bool)
    cells[:, 200:205] = False  # wall at x = 20 m
    grid = TraversabilityGrid(cells, 0.1)
    step = 1.0 / 3.0  # 1 m/s at 3 Hz
    poses = [RobotPose(10.0 + k * step, 15.0, 0.0) for k in range(3)]
    obs = env.observe(grid, poses, np.zeros((10, 2)), beams=65)
    fwd = obs.scans[:, 32]
    d = np.diff(fwd)
    assert np.all(d < 0)
    assert np.all(np.abs(d + step) <= grid.resolution)


def test_frame_discs_do_not_touch_world_grid():
    grid, pose = env.generate_scene(SceneSpec("corridor", seed=2))
    before = grid.cells.copy()
    rng = np.random.default_rng(0)
    frames = env.occluder_frames(rng, pose, count=3)
    obs_occ = env.observe(grid, [pose] * 3, np.zeros((10, 2)), frame_discs=frames)
    obs_free = env.observe(grid, [pose] * 3, np.zeros((10, 2)))
    assert np.array_equal(grid.cells, before)
    assert np.all(obs_occ.scans <= obs_free.scans + 1e-12)
    assert (obs_occ.scans < obs_free.scans).any()


def test_simulate_history_ends_at_pose_and_orders_oldest_first():
    grid, pose = env.generate_scene(SceneSpec("corridor", seed=4))
    poses, vel = env.simulate_history(grid, pose, np.random.default_rng(3))
    assert len(poses) == 3 and vel.shape == (10, 2)
    assert poses[-1] == pose
    ahead = np.cos(pose.heading) * (poses[1].x - poses[0].x) + np.sin(pose.heading) * (
        poses[1].y - poses[0].y
    )
    assert ahead > 0  # strictly advancing toward the final pose


# -- interpolation -------------------------------------------------------------


def test_bilinear_sample_exact_on_affine_field():
    res = 0.25
    h = w = 12
    jj, ii = np.mgrid[0:h, 0:w]
    fieldarr = 2.0 * (ii + 0.5) * res + 3.0 * (jj + 0.5) * res
    rng = np.random.default_rng(5)
    xs = rng.uniform(res, (w - 1) * res, size=40)
    ys = rng.uniform(res, (h - 1) * res, size=40)
    got = env.bilinear_sample(fieldarr, res, xs, ys)
    assert np.max(np.abs(got - (2 * xs + 3 * ys))) < 1e-12


def test_bilinear_sample_clamps_at_border():
    fieldarr = np.arange(16, dtype=float).reshape(4, 4)
    v = env.bilinear_sample(fieldarr, 1.0, -5.0, -5.0)
    assert v == fieldarr[0, 0]
    v2 = env.bilinear_sample(fieldarr, 1.0, 50.0, 50.0)
    assert abs(v2 - fieldarr[-1, -1]) < 1e-3


# -- scene files ----------------------------------------------------------------


def test_rle_roundtrip_random(tmp_path):
    rng = np.random.default_rng(8)
    cells = rng.uniform(size=(37, 53)) < 0.4
    lines = env.rle_encode(cells)
    assert np.array_equal(env.rle_decode(lines, 53, 37), cells)


def test_scene_file_roundtrip(tmp_path):
    spec = SceneSpec("junction", seed=11)
    grid, pose = env.generate_scene(spec)
    p = tmp_path / "scene.txt"
    env.save_scene(p, grid, pose, spec)
    g2, p2, s2 = env.load_scene(p)
    assert np.array_equal(g2.cells, grid.cells)
    assert g2.resolution == grid.resolution
    assert (p2.x, p2.y, p2.heading) == (pose.x, pose.y, pose.heading)
    assert s2.kind == spec.kind and s2.seed == spec.seed


def test_scene_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a scene\n")
    with pytest.raises(ValueError, match="scene"):
        env.load_scene(p)


def test_rle_rejects_wrong_row_width():
    with pytest.raises(ValueError, match="decodes"):
        env.rle_decode(["3t 2n"], width=6, height=1)
