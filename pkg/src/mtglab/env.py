"""Procedural 2D worlds, a planar range sensor, and robot observations.

World frame: origin at the grid's lower-left corner, x right, y up.
Cell (ix, iy) covers the square [ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)
and is stored at cells[iy, ix]; True marks traversable ground.

Grids are immutable once built, so everything downstream (raycasts,
planning, metrics) can share them freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import ndimage

__all__ = [
    "TraversabilityGrid",
    "RobotPose",
    "Observation",
    "SceneSpec",
    "SceneGenerationError",
    "SCENE_KINDS",
    "generate_scene",
    "raycast",
    "observe",
    "simulate_history",
    "occluder_frames",
    "grid_with_discs",
    "bilinear_sample",
    "rle_encode",
    "rle_decode",
    "save_scene",
    "load_scene",
    "DEFAULT_RESOLUTION",
    "DEFAULT_FOV",
    "DEFAULT_BEAMS",
    "DEFAULT_RANGE_MAX",
    "DEFAULT_N_SCANS",
    "DEFAULT_N_VELOCITIES",
]

DEFAULT_RESOLUTION = 0.1  # meters per cell
DEFAULT_FOV = math.radians(120.0)
DEFAULT_BEAMS = 64
DEFAULT_RANGE_MAX = 20.0
DEFAULT_N_SCANS = 3
DEFAULT_N_VELOCITIES = 10

SCENE_KINDS = ("corridor", "junction", "open-with-obstacles", "cul-de-sac")


class SceneGenerationError(RuntimeError):
    """Scene parameters admit no valid robot placement."""


class TraversabilityGrid:
    """Binary traversability labels on a regular grid."""

    def __init__(self, cells: np.ndarray, resolution: float):
        if resolution <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        cells = np.array(cells, dtype=bool)
        cells.setflags(write=False)
        self.cells = cells
        self.height, self.width = cells.shape
        self.resolution = float(resolution)
        self._clearance = None

    @property
    def extent(self):
        """(width_m, height_m) of the covered area."""
        return self.width * self.resolution, self.height * self.resolution

    def cell_at(self, x: float, y: float):
        ix = int(math.floor(x / self.resolution))
        iy = int(math.floor(y / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int):
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def contains_point(self, x: float, y: float) -> bool:
        return self.in_bounds(*self.cell_at(x, y))

    def traversable_at(self, x: float, y: float) -> bool:
        ix, iy = self.cell_at(x, y)
        return self.in_bounds(ix, iy) and bool(self.cells[iy, ix])

    def clearance_field(self) -> np.ndarray:
        """Meters from each cell center to the nearest non-traversable cell.

        Euclidean distance transform of the traversable mask; zero on
        blocked cells. Cached; the grid never changes after construction.
        """
        if self._clearance is None:
            d = ndimage.distance_transform_edt(self.cells) * self.resolution
            d.setflags(write=False)
            self._clearance = d
        return self._clearance


@dataclass
class RobotPose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        h = math.remainder(self.heading, 2.0 * math.pi)  # -> [-pi, pi]
        if h <= -math.pi:
            h += 2.0 * math.pi
        self.heading = h


@dataclass
class Observation:
    """Sensor history: scans [n_scans, beams] meters, oldest first;
    velocities [n_velocities, 2] as (linear m/s, angular rad/s), oldest first."""

    scans: np.ndarray
    velocities: np.ndarray
    range_max: float = DEFAULT_RANGE_MAX


@dataclass
class SceneSpec:
    kind: str
    seed: int
    size_m: float = 28.0
    resolution: float = DEFAULT_RESOLUTION
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}, want one of {SCENE_KINDS}")


def _spec_rng(spec: SceneSpec) -> np.random.Generator:
    return np.random.default_rng([int(spec.seed), SCENE_KINDS.index(spec.kind)])


# -- generators ----------------------------------------------------------


def _blank(spec: SceneSpec, fill: bool) -> np.ndarray:
    n = int(round(spec.size_m / spec.resolution))
    return np.full((n, n), fill, dtype=bool)


def _carve_band(cells, res, axis: str, center_m: float, width_m: float):
    lo = int(round((center_m - width_m / 2.0) / res))
    hi = int(round((center_m + width_m / 2.0) / res))
    if axis == "x":  # band of constant y, running along x
        cells[max(lo, 0) : hi, :] = True
    else:
        cells[:, max(lo, 0) : hi] = True


def _block_disc(cells, res, cx_m, cy_m, r_m):
    h, w = cells.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy, r = cx_m / res, cy_m / res, r_m / res
    mask = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
    cells[mask] = False


def _block_rect(cells, res, x0, y0, x1, y1):
    ix0, iy0 = int(round(x0 / res)), int(round(y0 / res))
    ix1, iy1 = int(round(x1 / res)), int(round(y1 / res))
    cells[max(iy0, 0) : iy1, max(ix0, 0) : ix1] = False


def _gen_corridor(spec, rng):
    cells = _blank(spec, False)
    width = rng.uniform(2.8, 4.5)
    center = spec.size_m / 2.0 + rng.uniform(-3.0, 3.0)
    _carve_band(cells, spec.resolution, "x", center, width)
    pose = RobotPose(rng.uniform(3.0, 6.0), center, 0.0)
    return cells, pose


def _gen_junction(spec, rng):
    cells = _blank(spec, False)
    half = spec.size_m / 2.0
    cx = half + rng.uniform(-1.5, 1.5)
    cy = half + rng.uniform(-1.5, 1.5)
    w_ns = rng.uniform(2.4, 2.8)
    w_ew = rng.uniform(2.4, 2.8)
    _carve_band(cells, spec.resolution, "y", cx, w_ns)
    _carve_band(cells, spec.resolution, "x", cy, w_ew)
    pose = RobotPose(cx, cy - rng.uniform(8.3, 9.3), math.pi / 2.0)
    return cells, pose


def _gen_open(spec, rng):
    cells = _blank(spec, True)
    res = spec.resolution
    border = int(round(0.3 / res))
    cells[:border, :] = cells[-border:, :] = False
    cells[:, :border] = cells[:, -border:] = False
    count = int(spec.params.get("obstacles", 12))
    for _ in range(count):
        x, y = rng.uniform(2.0, spec.size_m - 2.0, size=2)
        if rng.uniform() < 0.5:
            _block_disc(cells, res, x, y, rng.uniform(0.4, 1.2))
        else:
            w, h = rng.uniform(0.8, 2.4, size=2)
            _block_rect(cells, res, x - w / 2, y - h / 2, x + w / 2, y + h / 2)
    return cells, None  # pose picked by rejection sampling


def _carve_rect(cells, res, x0, y0, x1, y1):
    ix0, iy0 = int(round(x0 / res)), int(round(y0 / res))
    ix1, iy1 = int(round(x1 / res)), int(round(y1 / res))
    cells[max(iy0, 0) : iy1, max(ix0, 0) : ix1] = True


def _gen_cul_de_sac(spec, rng):
    """Dead-end room whose only exit feeds a perpendicular corridor."""
    cells = _blank(spec, False)
    res = spec.resolution
    half = spec.size_m / 2.0
    rx = half + rng.uniform(-0.5, 0.5)
    ry = half - rng.uniform(2.5, 4.0)
    room_w = rng.uniform(5.0, 7.0)
    room_top = ry + rng.uniform(3.0, 3.8)
    _carve_rect(cells, res, rx - room_w / 2, ry - 2.5, rx + room_w / 2, room_top)
    corr_c = ry + 7.5  # the fov-edge targets on the 15 m arc land mid-corridor
    corr_w = rng.uniform(2.6, 3.2)
    _carve_band(cells, res, "x", corr_c, corr_w)
    gap_w = rng.uniform(1.9, 2.5)
    gx = rx + rng.uniform(-0.6, 0.6)
    _carve_rect(cells, res, gx - gap_w / 2, room_top - 0.2,
                gx + gap_w / 2, corr_c - corr_w / 2 + 0.2)
    pose = RobotPose(rx, ry, math.pi / 2.0)  # facing the exit
    return cells, pose


_GENERATORS = {
    "corridor": _gen_corridor,
    "junction": _gen_junction,
    "open-with-obstacles": _gen_open,
    "cul-de-sac": _gen_cul_de_sac,
}


def _place_robot(grid: TraversabilityGrid, rng, min_clearance=1.0, min_reach=15.0):
    """Random traversable cell with clearance and a distant connected cell."""
    clear = grid.clearance_field()
    labels, _ = ndimage.label(grid.cells)
    candidates = np.argwhere(clear >= min_clearance)
    if candidates.size == 0:
        return None
    for _ in range(64):
        iy, ix = candidates[rng.integers(len(candidates))]
        lab = labels[iy, ix]
        same = np.argwhere(labels == lab)
        d = np.hypot(same[:, 1] - ix, same[:, 0] - iy) * grid.resolution
        if d.max() >= min_reach:
            x, y = grid.cell_center(ix, iy)
            # face roughly toward the farthest connected ground so the
            # sensor fov fronts onto actual scene, not the nearest wall
            fy, fx = same[int(np.argmax(d))]
            heading = math.atan2(fy - iy, fx - ix) + rng.uniform(-0.6, 0.6)
            return RobotPose(x, y, heading)
    return None


def _placement_ok(grid, pose, min_clearance=1.0, min_reach=15.0):
    ix, iy = grid.cell_at(pose.x, pose.y)
    if not grid.in_bounds(ix, iy) or not grid.cells[iy, ix]:
        return False
    if grid.clearance_field()[iy, ix] < min_clearance:
        return False
    labels, _ = ndimage.label(grid.cells)
    same = np.argwhere(labels == labels[iy, ix])
    d = np.hypot(same[:, 1] - ix, same[:, 0] - iy) * grid.resolution
    return bool(d.max() >= min_reach)


def generate_scene(spec: SceneSpec):
    """Build the grid for `spec` and place the robot.

    The same spec always reproduces the same grid and pose. Placement
    must leave >= 1 m obstacle clearance and reach >= 15 m of connected
    ground; specs that cannot satisfy that within bounded retries fail.
    """
    rng = _spec_rng(spec)
    gen = _GENERATORS[spec.kind]
    for _ in range(32):
        cells, pose = gen(spec, rng)
        grid = TraversabilityGrid(cells, spec.resolution)
        if pose is None:
            pose = _place_robot(grid, rng)
            if pose is None:
                continue
        if _placement_ok(grid, pose):
            return grid, pose
    raise SceneGenerationError(
        f"no valid robot placement for kind={spec.kind} seed={spec.seed}"
    )


# -- range sensor ----------------------------------------------------------


def raycast(grid: TraversabilityGrid, pose: RobotPose, fov=DEFAULT_FOV,
            beams=DEFAULT_BEAMS, r_max=DEFAULT_RANGE_MAX) -> np.ndarray:
    """Ranges to the first non-traversable cell for `beams` rays.

    Beam k leaves at heading - fov/2 + k*fov/(beams-1). Cells are walked
    exactly (no sampling), so ranges are resolution-exact; rays that leave
    the grid or exceed r_max report r_max.
    """
    if beams < 2:
        raise ValueError(f"beams must be >= 2, got {beams}")
    if not 0.0 < fov <= 2.0 * math.pi:
        raise ValueError(f"fov must lie in (0, 2*pi], got {fov}")
    res = grid.resolution
    ix0, iy0 = grid.cell_at(pose.x, pose.y)
    if not grid.in_bounds(ix0, iy0):
        raise ValueError(
            f"pose ({pose.x:.2f}, {pose.y:.2f}) outside grid extent {grid.extent}"
        )
    n = int(beams)
    if not grid.cells[iy0, ix0]:
        return np.zeros(n)

    k = np.arange(n)
    ang = pose.heading - fov / 2.0 + k * (fov / (n - 1))
    dx, dy = np.cos(ang), np.sin(ang)
    sx = np.where(dx > 0, 1, -1)
    sy = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tdx = np.where(dx != 0, res / np.abs(dx), np.inf)
        tdy = np.where(dy != 0, res / np.abs(dy), np.inf)
        bx = (ix0 + (dx > 0)) * res
        by = (iy0 + (dy > 0)) * res
        tx = np.where(dx != 0, (bx - pose.x) / dx, np.inf)
        ty = np.where(dy != 0, (by - pose.y) / dy, np.inf)
    tx = np.nan_to_num(tx, nan=np.inf)
    ty = np.nan_to_num(ty, nan=np.inf)

    ix = np.full(n, ix0)
    iy = np.full(n, iy0)
    ranges = np.full(n, float(r_max))
    active = np.ones(n, dtype=bool)
    while active.any():
        step_x = active & (tx <= ty)
        step_y = active & ~step_x
        t = np.where(step_x, tx, ty)
        ix = ix + np.where(step_x, sx, 0)
        iy = iy + np.where(step_y, sy, 0)
        tx = tx + np.where(step_x, tdx, 0.0)
        ty = ty + np.where(step_y, tdy, 0.0)
        over = active & (t > r_max)
        active &= ~over
        gone = active & ~((ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height))
        active &= ~gone
        hit = active & ~grid.cells[np.clip(iy, 0, grid.height - 1),
                                   np.clip(ix, 0, grid.width - 1)]
        ranges[hit] = np.minimum(t[hit], r_max)
        active &= ~hit
    return ranges


def eroded_grid(grid: TraversabilityGrid, margin: float) -> TraversabilityGrid:
    """Grid whose traversable set shrinks to cells with >= margin clearance.

    Planning on the eroded mask keeps paths far enough from walls that
    straight chords between sparse waypoints stay on traversable ground.
    """
    if margin <= 0:
        return grid
    return TraversabilityGrid(grid.clearance_field() >= margin, grid.resolution)


def grid_with_discs(grid: TraversabilityGrid, discs) -> TraversabilityGrid:
    """Copy of `grid` with extra non-traversable discs [(x, y, r), ...]."""
    if not discs:
        return grid
    cells = np.array(grid.cells)
    for x, y, r in discs:
        _block_disc(cells, grid.resolution, x, y, r)
    return TraversabilityGrid(cells, grid.resolution)


def observe(grid: TraversabilityGrid, pose_history, velocity_history,
            fov=DEFAULT_FOV, beams=DEFAULT_BEAMS, r_max=DEFAULT_RANGE_MAX,
            n_scans=DEFAULT_N_SCANS, n_velocities=DEFAULT_N_VELOCITIES,
            frame_discs=None) -> Observation:
    """Scan the last n_scans poses and collect the last n_velocities pairs.

    `frame_discs`, when given, holds one disc list per scan frame; discs
    block the sensor for that frame only and never touch `grid` itself.
    """
    if len(pose_history) < n_scans:
        raise ValueError(
            f"need {n_scans} poses, got {len(pose_history)}"
        )
    if len(velocity_history) < n_velocities:
        raise ValueError(
            f"need {n_velocities} velocity pairs, got {len(velocity_history)}"
        )
    poses = list(pose_history)[-n_scans:]
    if frame_discs is None:
        frame_discs = [None] * n_scans
    scans = np.stack([
        raycast(grid_with_discs(grid, discs), p, fov, beams, r_max)
        for p, discs in zip(poses, frame_discs)
    ])
    vel = np.asarray(list(velocity_history)[-n_velocities:], dtype=np.float64)
    return Observation(scans=scans, velocities=vel.reshape(n_velocities, 2),
                       range_max=float(r_max))


def simulate_history(grid: TraversabilityGrid, pose: RobotPose, rng,
                     n_scans=DEFAULT_N_SCANS, n_velocities=DEFAULT_N_VELOCITIES,
                     rate_hz=3.0, speed=1.0):
    """Back-cast a straight constant-speed approach ending at `pose`.

    Falls back to a stationary history when the trail behind the robot is
    blocked (e.g. the robot spawned against a wall).
    """
    dt = 1.0 / rate_hz
    back = [
        RobotPose(pose.x - k * speed * dt * math.cos(pose.heading),
                  pose.y - k * speed * dt * math.sin(pose.heading),
                  pose.heading)
        for k in range(n_scans - 1, 0, -1)
    ]
    moving = all(grid.traversable_at(p.x, p.y) for p in back)
    poses = back + [pose] if moving else [pose] * n_scans
    v = speed if moving else 0.0
    vel = np.stack([
        rng.normal(v, 0.05, size=n_velocities),
        rng.normal(0.0, 0.02, size=n_velocities),
    ], axis=1)
    return poses, vel


def occluder_frames(rng, pose: RobotPose, n_frames=DEFAULT_N_SCANS, count=2,
                    rate_hz=3.0):
    """Walking-disc occluders: one disc list per frame, oldest first."""
    frames = [[] for _ in range(n_frames)]
    dt = 1.0 / rate_hz
    for _ in range(count):
        d = rng.uniform(2.0, 8.0)
        bearing = pose.heading + rng.uniform(-0.9, 0.9)
        x = pose.x + d * math.cos(bearing)
        y = pose.y + d * math.sin(bearing)
        walk = rng.uniform(-math.pi, math.pi)
        vx, vy = math.cos(walk), math.sin(walk)  # ~1 m/s pedestrian
        for j in range(n_frames):
            back = (n_frames - 1 - j) * dt
            frames[j].append((x - vx * back, y - vy * back, 0.3))
    return frames


# -- interpolation helper ----------------------------------------------------


def bilinear_sample(fieldarr: np.ndarray, resolution: float, x, y):
    """Sample a cell-centered scalar field at world points (numpy only).

    Points are clamped to the field's valid interpolation box, so queries
    just outside the border read the border value.
    """
    h, w = fieldarr.shape
    u = np.clip(np.asarray(x) / resolution - 0.5, 0.0, w - 1.000001)
    v = np.clip(np.asarray(y) / resolution - 0.5, 0.0, h - 1.000001)
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu = u - i0
    fv = v - j0
    f00 = fieldarr[j0, i0]
    f10 = fieldarr[j0, i0 + 1]
    f01 = fieldarr[j0 + 1, i0]
    f11 = fieldarr[j0 + 1, i0 + 1]
    return (f00 * (1 - fu) * (1 - fv) + f10 * fu * (1 - fv)
            + f01 * (1 - fu) * fv + f11 * fu * fv)


# -- scene text format --------------------------------------------------------
#
# Line-delimited: "scene/1" magic, key=value header, "cells", then one
# run-length-encoded line per grid row (bottom row first), tokens like
# "12t 268n" with t traversable / n not.


def rle_encode(cells: np.ndarray):
    lines = []
    for row in cells:
        toks = []
        run_val = bool(row[0])
        run_len = 0
        for v in row:
            if bool(v) == run_val:
                run_len += 1
            else:
                toks.append(f"{run_len}{'t' if run_val else 'n'}")
                run_val, run_len = bool(v), 1
        toks.append(f"{run_len}{'t' if run_val else 'n'}")
        lines.append(" ".join(toks))
    return lines


def rle_decode(lines, width: int, height: int) -> np.ndarray:
    if len(lines) != height:
        raise ValueError(f"expected {height} encoded rows, got {len(lines)}")
    cells = np.zeros((height, width), dtype=bool)
    for iy, line in enumerate(lines):
        ix = 0
        for tok in line.split():
            n, lab = int(tok[:-1]), tok[-1]
            if lab not in "tn":
                raise ValueError(f"bad run token {tok!r}")
            cells[iy, ix : ix + n] = lab == "t"
            ix += n
        if ix != width:
            raise ValueError(f"row {iy} decodes to {ix} cells, want {width}")
    return cells


def save_scene(path, grid: TraversabilityGrid, pose: RobotPose, spec: SceneSpec):
    with open(path, "w") as f:
        f.write("scene/1\n")
        f.write(f"width={grid.width}\n")
        f.write(f"height={grid.height}\n")
        f.write(f"resolution={grid.resolution!r}\n")
        f.write(f"seed={spec.seed}\n")
        f.write(f"kind={spec.kind}\n")
        f.write(f"pose={pose.x!r},{pose.y!r},{pose.heading!r}\n")
        f.write("cells\n")
        for line in rle_encode(grid.cells):
            f.write(line + "\n")


def load_scene(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "scene/1":
        raise ValueError(f"{path}: not a scene file")
    header = {}
    i = 1
    while i < len(lines) and lines[i] != "cells":
        k, _, v = lines[i].partition("=")
        header[k] = v
        i += 1
    if i == len(lines):
        raise ValueError(f"{path}: missing cells section")
    w, h = int(header["width"]), int(header["height"])
    cells = rle_decode(lines[i + 1 : i + 1 + h], w, h)
    grid = TraversabilityGrid(cells, float(header["resolution"]))
    px, py, ph = (float(s) for s in header["pose"].split(","))
    spec = SceneSpec(header["kind"], int(header["seed"]),
                     size_m=w * grid.resolution, resolution=grid.resolution)
    return grid, RobotPose(px, py, ph), spec
