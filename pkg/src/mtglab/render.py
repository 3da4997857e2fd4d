"""Standalone SVG scene plots: dark traversable ground on white blocked
cells, yellow supervision fans, purple generated trajectories whose
opacity tracks per-trajectory confidence, optional sensor rays.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import quoteattr

import numpy as np

from . import geom
from .env import TraversabilityGrid, RobotPose, DEFAULT_FOV

__all__ = ["PlotSpec", "LAYERS", "render"]

LAYERS = ("grid", "gt", "generated", "beams", "confidence")

GROUND_COLOR = "#3a3f46"
GT_COLOR = "#f2c230"
GEN_COLOR = "#8436c9"
BEAM_COLOR = "#5aa0d0"
ROBOT_COLOR = "#d94343"
MIN_OPACITY = 0.08  # keep near-zero-confidence strokes visible


@dataclass(frozen=True)
class PlotSpec:
    path: str
    layers: tuple = LAYERS
    scale: float = 20.0  # pixels per meter

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("need at least one layer")
        unknown = set(self.layers) - set(LAYERS)
        if unknown:
            raise ValueError(f"unknown layers {sorted(unknown)}, want {LAYERS}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _path_d(points_px) -> str:
    head = f"M {points_px[0][0]:.2f} {points_px[0][1]:.2f}"
    rest = " ".join(f"L {x:.2f} {y:.2f}" for x, y in points_px[1:])
    return f"{head} {rest}" if rest else head


def _polyline(out, world_pts, height_px, scale, color, width, opacity, css):
    px = [(x * scale, height_px - y * scale) for x, y in world_pts]
    out.append(
        f'<path class={quoteattr(css)} d={quoteattr(_path_d(px))} '
        f'fill="none" stroke="{color}" stroke-width="{width:.2f}" '
        f'stroke-opacity="{opacity:.3f}" stroke-linejoin="round" '
        f'stroke-linecap="round"/>')


def _grid_rects(out, grid: TraversabilityGrid, height_px, scale):
    res = grid.resolution
    cell_px = res * scale
    for iy, row in enumerate(grid.cells):
        ix = 0
        n = row.size
        while ix < n:
            if not row[ix]:
                ix += 1
                continue
            run = ix
            while run < n and row[run]:
                run += 1
            x = ix * res * scale
            y = height_px - (iy + 1) * res * scale
            w = (run - ix) * cell_px
            out.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" '
                f'height="{cell_px + 0.2:.2f}" fill="{GROUND_COLOR}"/>')
            ix = run


def _beam_lines(out, grid, pose, observation, height_px, scale, fov):
    ranges = observation.scans[-1]
    n = ranges.size
    angles = pose.heading + (np.arange(n) / max(n - 1, 1) - 0.5) * fov
    x0, y0 = pose.x * scale, height_px - pose.y * scale
    for a, r in zip(angles, ranges):
        x1 = (pose.x + r * np.cos(a)) * scale
        y1 = height_px - (pose.y + r * np.sin(a)) * scale
        out.append(
            f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
            f'stroke="{BEAM_COLOR}" stroke-width="0.6" stroke-opacity="0.35"/>')


def render(grid: TraversabilityGrid, pose: RobotPose, spec: PlotSpec,
           gt=None, generated=None, confidence=None, observation=None,
           fov=DEFAULT_FOV) -> str:
    """Write the plot to spec.path and return the SVG text.

    gt and generated hold robot-frame trajectory sets; confidence, when
    given with the confidence layer on, dims each generated stroke by its
    score. Beams need the observation they came from.
    """
    w_m, h_m = grid.extent
    width_px = w_m * spec.scale
    height_px = h_m * spec.scale
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px:.0f}" '
        f'height="{height_px:.0f}" viewBox="0 0 {width_px:.2f} '
        f'{height_px:.2f}">',
        f'<rect width="{width_px:.2f}" height="{height_px:.2f}" fill="#ffffff"/>',
    ]
    if "grid" in spec.layers:
        _grid_rects(out, grid, height_px, spec.scale)
    if "beams" in spec.layers and observation is not None:
        _beam_lines(out, grid, pose, observation, height_px, spec.scale, fov)
    if "gt" in spec.layers and gt is not None:
        for t in gt.trajectories:
            world = geom.robot_to_world(t.waypoints, pose)
            _polyline(out, world, height_px, spec.scale, GT_COLOR,
                      spec.scale * 0.09, 1.0, "gt")
    if "generated" in spec.layers and generated is not None:
        confs = None
        if "confidence" in spec.layers and confidence is not None:
            confs = confidence.confidences
        for k, t in enumerate(generated.trajectories):
            opacity = 1.0 if confs is None else max(float(confs[k]), MIN_OPACITY)
            world = geom.robot_to_world(t.waypoints, pose)
            _polyline(out, world, height_px, spec.scale, GEN_COLOR,
                      spec.scale * 0.07, opacity, "gen")
    r = spec.scale * 0.18
    cx, cy = pose.x * spec.scale, height_px - pose.y * spec.scale
    out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" '
               f'fill="{ROBOT_COLOR}"/>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    with open(spec.path, "w") as f:
        f.write(text)
    return text
