"""Ground-truth route fans: arc-sampled targets, A* search, resampling.

For each scene the robot gets a fan of supervision routes: candidate
targets sit on the arc of radius `distance` inside the sensor fov,
A* connects the robot to each reachable target on the grid, and each
cell path is resampled to a fixed number of waypoints in the robot
frame (X forward, Y left). Near-duplicate routes are merged so the fan
reflects genuinely distinct ways through the scene.
"""

from __future__ import annotations

from dataclasses import dataclass
import heapq
import math

import numpy as np

from . import geom
from .env import TraversabilityGrid, RobotPose, DEFAULT_FOV, eroded_grid

__all__ = [
    "Trajectory",
    "GroundTruthSet",
    "NoPathError",
    "NoViableTargetsError",
    "astar",
    "path_cost",
    "sample_targets",
    "resample",
    "build_ground_truth",
    "DEFAULT_TARGET_DISTANCE",
    "DEFAULT_MAX_TARGETS",
    "DEFAULT_WAYPOINTS",
    "DEDUP_DISTANCE",
]

DEFAULT_TARGET_DISTANCE = 15.0  # meters from robot to each target
DEFAULT_MAX_TARGETS = 11
DEFAULT_WAYPOINTS = 16
DEDUP_DISTANCE = 1.0  # routes closer than this (avg Hausdorff) merge
SNAP_DISTANCE = 1.0  # blocked arc candidates may move this far
PLANNING_MARGIN = 0.5  # meters of clearance the planner keeps from walls

_SQRT2 = math.sqrt(2.0)
# (dx, dy, step cost); diagonal moves must not cut blocked corners
_NEIGHBORS = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2), (-1, -1, _SQRT2),
)


class NoPathError(RuntimeError):
    """Goal is disconnected from start on the traversability grid."""


class NoViableTargetsError(RuntimeError):
    """No arc target survived snapping, search, and filtering; skip the scene."""


@dataclass
class Trajectory:
    """waypoints [S, 2] in meters, robot frame, ordered from the robot out."""

    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return len(self.waypoints)

    def world(self, pose: RobotPose) -> np.ndarray:
        return geom.robot_to_world(self.waypoints, pose)


@dataclass
class GroundTruthSet:
    """All distinct supervision routes for one scene, robot frame."""

    trajectories: list
    target_angles: np.ndarray  # absolute world bearing of each surviving target

    def __post_init__(self):
        self.target_angles = np.asarray(self.target_angles, dtype=np.float64)
        if len(self.trajectories) < 1:
            raise ValueError("a ground-truth set needs at least one trajectory")

    def __len__(self):
        return len(self.trajectories)

    def stacked(self) -> np.ndarray:
        return np.stack([t.waypoints for t in self.trajectories])


# -- search -----------------------------------------------------------------


def _check_cell(grid, cell, name):
    ix, iy = cell
    if not grid.in_bounds(ix, iy):
        raise ValueError(f"{name} cell {cell} outside grid {grid.width}x{grid.height}")
    if not grid.cells[iy, ix]:
        raise ValueError(f"{name} cell {cell} is not traversable")


def astar(grid: TraversabilityGrid, start, goal):
    """Minimal-cost 8-connected cell path (straight 1, diagonal sqrt(2)).

    Euclidean heuristic; insertion-order tie-breaking keeps expansions,
    and therefore returned paths, deterministic. Diagonal steps are
    allowed only when both flanking orthogonal cells are traversable.

    Many optimal paths usually exist; among them the returned one walks
    back from the goal always taking the equal-cost predecessor whose
    step aligns best with the straight start-goal chord, so paths in the
    open hug the chord instead of wandering the optimal-cost corridor.
    """
    _check_cell(grid, start, "start")
    _check_cell(grid, goal, "goal")
    sx, sy = start
    gx, gy = goal
    if start == goal:
        return [start]
    w, h = grid.width, grid.height
    cells = grid.cells
    g = np.full((h, w), np.inf)
    g[sy, sx] = 0.0
    parent = np.full((h, w), -1, dtype=np.int64)
    closed = np.zeros((h, w), dtype=bool)
    tie = 0
    heap = [(math.hypot(gx - sx, gy - sy), tie, sx, sy)]
    reached = False
    while heap:
        _, _, x, y = heapq.heappop(heap)
        if closed[y, x]:
            continue
        if (x, y) == (gx, gy):
            reached = True
            break
        closed[y, x] = True
        base = g[y, x]
        for dx, dy, c in _NEIGHBORS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h) or not cells[ny, nx]:
                continue
            if dx and dy and not (cells[y, nx] and cells[ny, x]):
                continue
            ng = base + c
            if ng < g[ny, nx]:
                g[ny, nx] = ng
                parent[ny, nx] = y * w + x
                tie += 1
                heapq.heappush(heap, (ng + math.hypot(gx - nx, gy - ny), tie, nx, ny))
    if not reached:
        raise NoPathError(f"no path from {start} to {goal}")

    ux, uy = gx - sx, gy - sy
    norm = math.hypot(ux, uy)
    ux, uy = ux / norm, uy / norm
    path = [(gx, gy)]
    x, y = gx, gy
    while (x, y) != (sx, sy):
        best = None
        for dx, dy, c in _NEIGHBORS:
            px, py = x - dx, y - dy
            if not (0 <= px < w and 0 <= py < h) or not cells[py, px]:
                continue
            if dx and dy and not (cells[py, x] and cells[y, px]):
                continue
            if not closed[py, px] and (px, py) != (sx, sy):
                continue
            if abs(g[py, px] + c - g[y, x]) > 1e-9:
                continue
            score = (dx * ux + dy * uy) / c
            if best is None or score > best[0] + 1e-12:
                best = (score, px, py)
        if best is None:  # floating ties left no candidate; use the tree
            idx = parent[y, x]
            px, py = idx % w, idx // w
        else:
            px, py = best[1], best[2]
        path.append((px, py))
        x, y = px, py
    path.reverse()
    return path


def path_cost(path) -> float:
    """Canonical cost of a cell path: straight steps + sqrt(2) * diagonals.

    Recomputed from step counts, so equal-cost paths from different
    searches compare bit-identically.
    """
    straight = diag = 0
    for (x0, y0), (x1, y1) in zip(path[:-1], path[1:]):
        if abs(x1 - x0) + abs(y1 - y0) == 1:
            straight += 1
        else:
            diag += 1
    return straight + _SQRT2 * diag


# -- target sampling -----------------------------------------------------------


def _snap_to_traversable(grid, x, y):
    """Nearest traversable cell within SNAP_DISTANCE of world point, or None."""
    res = grid.resolution
    r_cells = int(math.ceil(SNAP_DISTANCE / res))
    cx, cy = grid.cell_at(x, y)
    best = None
    for iy in range(max(0, cy - r_cells), min(grid.height, cy + r_cells + 1)):
        for ix in range(max(0, cx - r_cells), min(grid.width, cx + r_cells + 1)):
            if not grid.cells[iy, ix]:
                continue
            px, py = grid.cell_center(ix, iy)
            d = math.hypot(px - x, py - y)
            if d <= SNAP_DISTANCE and (best is None or d < best[0] - 1e-12):
                best = (d, ix, iy)
    return None if best is None else (best[1], best[2])


def _candidate_routes(grid, pose, distance, fov, max_targets, n_waypoints,
                      margin=PLANNING_MARGIN):
    """Arc candidates -> snapped cells -> A* -> resampled robot-frame routes.

    Returns (trajectories, angles) before deduplication, dropping
    candidates that cannot be snapped, cannot be reached, take a detour
    longer than the waypoint-spacing budget, or leave traversable ground.

    Search runs on the margin-eroded grid so that chords between sparse
    waypoints cannot clip corners; incursion is still judged against the
    true grid.
    """
    if distance <= 0:
        raise ValueError(f"target distance must be positive, got {distance}")
    if max_targets < 1:
        raise ValueError(f"max_targets must be >= 1, got {max_targets}")
    plan_grid = eroded_grid(grid, margin)
    start = grid.cell_at(pose.x, pose.y)
    if max_targets == 1:
        angles = np.array([pose.heading])
    else:
        angles = pose.heading - fov / 2.0 + np.arange(max_targets) * (
            fov / (max_targets - 1)
        )
    # a path longer than this cannot satisfy the spacing budget of
    # 2*distance/S between consecutive resampled waypoints
    max_len = 2.0 * distance * (n_waypoints - 1) / n_waypoints
    routes, kept_angles, cell_polylines = [], [], []
    for ang in angles:
        tx = pose.x + distance * math.cos(ang)
        ty = pose.y + distance * math.sin(ang)
        cell = _snap_to_traversable(plan_grid, tx, ty)
        if cell is None:
            continue
        try:
            path = astar(plan_grid, start, cell)
        except (NoPathError, ValueError):
            # start can lose its margin in tight scenes; drop the candidate
            continue
        world = np.array([grid.cell_center(ix, iy) for ix, iy in path])
        if geom.polyline_arclength(world) > max_len:
            continue
        wp_world = geom.resample_polyline(world, n_waypoints)
        traj = Trajectory(geom.world_to_robot(wp_world, pose))
        # the fan must be clean on its own grid, measured exactly the way
        # the evaluation measures incursion
        if geom.nontraversable_fraction(grid, traj.world(pose)) != 0.0:
            continue
        routes.append(traj)
        kept_angles.append(float(ang))
        cell_polylines.append(world)
    return routes, kept_angles, cell_polylines


def _dedup(routes, angles, cell_polylines, threshold=DEDUP_DISTANCE):
    """Drop routes whose full search polyline duplicates a kept one.

    Similarity is judged on the dense cell paths rather than the sparse
    waypoints: two targets down the same corridor share almost all of
    their path and merge, while genuinely different openings stay apart.
    """
    kept, kept_angles, kept_lines = [], [], []
    for traj, ang, line in zip(routes, angles, cell_polylines):
        if all(geom.avg_hausdorff(line, other) >= threshold for other in kept_lines):
            kept.append(traj)
            kept_angles.append(ang)
            kept_lines.append(line)
    return kept, kept_angles


def sample_targets(grid, pose, distance=DEFAULT_TARGET_DISTANCE, fov=DEFAULT_FOV,
                   max_targets=DEFAULT_MAX_TARGETS, n_waypoints=DEFAULT_WAYPOINTS):
    """Surviving target cells on the arc (deduplicated by route similarity)."""
    routes, angles, lines = _candidate_routes(
        grid, pose, distance, fov, max_targets, n_waypoints
    )
    routes, angles = _dedup(routes, angles, lines)
    cells = []
    for traj, ang in zip(routes, angles):
        end = geom.robot_to_world(traj.waypoints[-1:], pose)[0]
        cells.append(grid.cell_at(end[0], end[1]))
    return cells


def resample(path, n_waypoints=DEFAULT_WAYPOINTS, grid=None, pose=None) -> Trajectory:
    """Arclength-uniform waypoints for a cell path, in the robot frame."""
    if len(path) < 1:
        raise ValueError("cannot resample an empty path")
    if grid is None or pose is None:
        raise ValueError("resample needs the grid (for scale) and the robot pose")
    world = np.array([grid.cell_center(ix, iy) for ix, iy in path], dtype=np.float64)
    wp = geom.resample_polyline(world, n_waypoints)
    return Trajectory(geom.world_to_robot(wp, pose))


def build_ground_truth(grid, pose, distance=DEFAULT_TARGET_DISTANCE, fov=DEFAULT_FOV,
                       max_targets=DEFAULT_MAX_TARGETS,
                       n_waypoints=DEFAULT_WAYPOINTS) -> GroundTruthSet:
    """The scene's supervision fan; raises NoViableTargetsError when empty."""
    routes, angles, lines = _candidate_routes(
        grid, pose, distance, fov, max_targets, n_waypoints
    )
    routes, angles = _dedup(routes, angles, lines)
    if not routes:
        raise NoViableTargetsError(
            f"no target on the {distance} m arc is reachable from "
            f"({pose.x:.2f}, {pose.y:.2f})"
        )
    return GroundTruthSet(trajectories=routes, target_angles=np.asarray(angles))
