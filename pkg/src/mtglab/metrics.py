"""Evaluation suite: incursion rate, ground-truth coverage, sample
diversity, and mean inference latency, aggregated over scene sets.

All three quality metrics work on robot-frame waypoint sets; only the
incursion rate needs the grid and pose to look at the world. Diversity
keeps the printed 1/N^2 normalization over ordered distinct pairs even
though it undercounts by N/(N-1), so numbers stay comparable across
variants evaluated the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from . import geom
from .env import TraversabilityGrid, RobotPose

__all__ = [
    "MetricsReport",
    "non_traversable_rate",
    "coverage_rate",
    "diversity_rate",
    "evaluate",
    "report_lines",
    "save_report",
    "load_report",
    "comparison_table",
]


@dataclass(frozen=True)
class MetricsReport:
    r_n: float  # mean fraction of arclength on non-traversable cells
    r_c: float  # mean exp(-nearest Hausdorff) over ground truths
    r_d: float | None  # mean pairwise Hausdorff, 1/N^2 form; None if K < 2
    t_ms: float  # mean forward latency, milliseconds
    n_scenes: int

    def __post_init__(self):
        if not 0.0 <= self.r_n <= 1.0:
            raise ValueError(f"r_n {self.r_n} outside [0, 1]")
        if not 0.0 < self.r_c <= 1.0:
            raise ValueError(f"r_c {self.r_c} outside (0, 1]")
        if self.r_d is not None and self.r_d < 0.0:
            raise ValueError(f"r_d {self.r_d} negative")


def _waypoint_arrays(generated):
    """Accept a generated/ground-truth set or a plain list of [S,2] arrays."""
    trajs = getattr(generated, "trajectories", generated)
    out = []
    for t in trajs:
        w = getattr(t, "waypoints", t)
        out.append(np.asarray(w, dtype=np.float64))
    return out


def non_traversable_rate(generated, grid: TraversabilityGrid,
                         pose: RobotPose) -> float:
    """Mean arclength fraction spent on blocked or out-of-bounds cells."""
    wps = _waypoint_arrays(generated)
    if not wps:
        raise ValueError("need at least one generated trajectory")
    total = 0.0
    for w in wps:
        total += geom.nontraversable_fraction(grid, geom.robot_to_world(w, pose))
    return total / len(wps)


def coverage_rate(generated, gt) -> float:
    """Mean over ground truths of exp(-distance to the nearest sample)."""
    gen = _waypoint_arrays(generated)
    gts = _waypoint_arrays(gt)
    if not gen:
        raise ValueError("need at least one generated trajectory")
    if not gts:
        raise ValueError("need at least one ground-truth trajectory")
    acc = 0.0
    for t in gts:
        acc += np.exp(-min(geom.avg_hausdorff(g, t) for g in gen))
    return acc / len(gts)


def diversity_rate(generated) -> float | None:
    """Pairwise spread; None for a single trajectory (undefined)."""
    gen = _waypoint_arrays(generated)
    n = len(gen)
    if n < 2:
        return None
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += geom.avg_hausdorff(gen[i], gen[j])
    return acc / (n * n)


def evaluate(model, scenes, seed: int = 0, mode: str = "sample") -> MetricsReport:
    """Run the model over scene records and average per-scene metrics.

    Each record needs .grid, .pose, .observation, and .gt attributes.
    Timing wraps only the forward pass. Deterministic for a given seed:
    scene i always sees generator stream [seed, i].
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")
    rn, rc, rd, elapsed = [], [], [], 0.0
    rd_defined = True
    for i, rec in enumerate(scenes):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        gen = model.forward(rec.observation, mode=mode, rng=rng)
        elapsed += time.perf_counter() - t0
        rn.append(non_traversable_rate(gen, rec.grid, rec.pose))
        rc.append(coverage_rate(gen, rec.gt))
        d = diversity_rate(gen)
        if d is None:
            rd_defined = False
        else:
            rd.append(d)
    return MetricsReport(
        r_n=float(np.mean(rn)),
        r_c=float(np.mean(rc)),
        r_d=float(np.mean(rd)) if rd_defined and rd else None,
        t_ms=elapsed / len(scenes) * 1000.0,
        n_scenes=len(scenes),
    )


# -- report files ---------------------------------------------------------
#
# Line-delimited key=value, one file per variant. The t_ms line is
# wall-clock and excluded from any byte-level rerun comparison.

_MAGIC = "metrics/1"


def report_lines(name: str, report: MetricsReport):
    return [
        _MAGIC,
        f"name={name}",
        f"n_scenes={report.n_scenes}",
        f"r_n={report.r_n!r}",
        f"r_c={report.r_c!r}",
        f"r_d={'' if report.r_d is None else repr(report.r_d)}",
        f"t_ms={report.t_ms!r}",
    ]


def save_report(path, name: str, report: MetricsReport):
    with open(path, "w") as f:
        f.write("\n".join(report_lines(name, report)) + "\n")


def load_report(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a metrics report")
    kv = dict(line.partition("=")[::2] for line in lines[1:] if line)
    report = MetricsReport(
        r_n=float(kv["r_n"]),
        r_c=float(kv["r_c"]),
        r_d=float(kv["r_d"]) if kv.get("r_d") else None,
        t_ms=float(kv["t_ms"]),
        n_scenes=int(kv["n_scenes"]),
    )
    return kv["name"], report


def comparison_table(reports: dict) -> str:
    """Plain-text table, one row per named report."""
    headers = ["variant", "r_n", "r_c", "r_d", "t_ms", "scenes"]
    rows = [headers]
    for name, rep in reports.items():
        rows.append([
            name,
            f"{rep.r_n:.4f}",
            f"{rep.r_c:.4f}",
            "-" if rep.r_d is None else f"{rep.r_d:.3f}",
            f"{rep.t_ms:.1f}",
            str(rep.n_scenes),
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    out = []
    for i, row in enumerate(rows):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
