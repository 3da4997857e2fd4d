"""Polyline geometry shared by planning, losses, and metrics (numpy only)."""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "polyline_arclength",
    "resample_polyline",
    "densify_polyline",
    "avg_hausdorff",
    "world_to_robot",
    "robot_to_world",
    "nontraversable_fraction",
]


def polyline_arclength(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Exactly n points, uniformly spaced in arclength along the polyline.

    A single input point (or a zero-length polyline) yields n copies of it.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if n < 1:
        raise ValueError(f"need n >= 1 points, got {n}")
    if len(points) == 1:
        return np.repeat(points, n, axis=0)
    seg = np.hypot(*np.diff(points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(points[:1], n, axis=0)
    want = np.linspace(0.0, total, n)
    x = np.interp(want, cum, points[:, 0])
    y = np.interp(want, cum, points[:, 1])
    return np.stack([x, y], axis=1)


def densify_polyline(points: np.ndarray, step: float) -> np.ndarray:
    """Insert vertices so consecutive spacing never exceeds `step`."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) < 2:
        return points.copy()
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        d = math.hypot(b[0] - a[0], b[1] - a[1])
        k = max(1, int(math.ceil(d / step)))
        for j in range(1, k + 1):
            out.append(a + (b - a) * (j / k))
    return np.asarray(out)


def avg_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor distance between two point sets."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    d = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def world_to_robot(points: np.ndarray, pose) -> np.ndarray:
    """World (x, y) -> robot frame with X forward, Y to the robot's left."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    dx = points[:, 0] - pose.x
    dy = points[:, 1] - pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def robot_to_world(points: np.ndarray, pose) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = pose.x + c * points[:, 0] - s * points[:, 1]
    y = pose.y + s * points[:, 0] + c * points[:, 1]
    return np.stack([x, y], axis=1)


def nontraversable_fraction(grid, world_points: np.ndarray, step=None) -> float:
    """Arclength fraction of a world-frame polyline over blocked cells.

    Segments are subdivided to half a cell and labeled at their midpoint,
    so label changes between waypoints are charged to the right portion
    of the path. Points outside the grid count as blocked.
    """
    if step is None:
        step = grid.resolution / 2.0
    pts = densify_polyline(world_points, step)
    if len(pts) < 2:
        ix, iy = grid.cell_at(*np.asarray(world_points, dtype=float).reshape(-1, 2)[0])
        inside = grid.in_bounds(ix, iy)
        return 0.0 if inside and grid.cells[iy, ix] else 1.0
    seg_len = np.hypot(*np.diff(pts, axis=0).T)
    total = seg_len.sum()
    if total == 0.0:
        return 0.0 if grid.traversable_at(*pts[0]) else 1.0
    mid = 0.5 * (pts[:-1] + pts[1:])
    res = grid.resolution
    ix = np.floor(mid[:, 0] / res).astype(int)
    iy = np.floor(mid[:, 1] / res).astype(int)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    blocked = ~inside
    blocked[inside] = ~grid.cells[iy[inside], ix[inside]]
    return float(seg_len[blocked].sum() / total)
