"""Training objective: latent KL, coverage of the ground-truth fan,
diversity shaping, and a clearance penalty, combined per variant kind.

The coverage/diversity split hinges on an assignment step: each ground
truth trajectory claims its nearest generated one (the effective set);
whatever is left is redundant. Coverage gradients flow only through
effective trajectories; diversity pushes effective ones apart and pulls
redundant ones toward their nearest effective neighbor with a bounded
1 - exp(-d) term so far-away stragglers don't blow up gradients.

Clearance penalty: exp(1 - clamp(m, 0, 1)) - 1 with m the mean waypoint
clearance in meters, so a trajectory at least 1 m clear everywhere costs
exactly zero and one fully on blocked cells costs e - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from . import tensor as T
from .tensor import Tensor
from .env import TraversabilityGrid, RobotPose
from .oracle import GroundTruthSet

__all__ = [
    "LossWeights",
    "Assignment",
    "kl_term",
    "hausdorff_graph",
    "aligned_distance",
    "assign",
    "coverage_loss",
    "diversity_loss",
    "all_pairs_diversity",
    "reconstruction_loss",
    "clearance_at",
    "traversability_loss",
    "total_loss",
]

BREAKDOWN_KEYS = ("total", "kl", "coverage", "diversity", "traversability")


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 0.1  # KL
    beta2: float = 1.0  # coverage + diversity
    beta3: float = 1.0  # clearance penalty
    lambda_end: float = 1.0  # endpoint term inside coverage

    def __post_init__(self):
        for nm in ("beta1", "beta2", "beta3", "lambda_end"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be nonnegative")


@dataclass(frozen=True)
class Assignment:
    """effective maps ground-truth index -> generated index; redundant
    lists every generated index that serves no ground truth."""

    effective: dict
    redundant: tuple

    def effective_indices(self):
        return sorted(set(self.effective.values()))


def _wp(t):
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


# -- individual terms --------------------------------------------------------


def kl_term(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL of the diagonal Gaussian N(mu, sigma^2) from N(0, I)."""
    if np.any(sigma.data <= 0):
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    return ((s2 + mu * mu - s2.log()).sum() - float(mu.size)) * 0.5


def hausdorff_graph(a: Tensor, b) -> Tensor:
    """Differentiable average Hausdorff distance; b may be a constant."""
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=np.float64))
    na, nb = a.shape[0], b.shape[0]
    if na == 0 or nb == 0:
        raise ValueError("empty trajectory")
    am = a.reshape(na, 1, 2).repeat(nb, axis=1)
    bm = b.reshape(1, nb, 2).repeat(na, axis=0)
    diff = am - bm
    d = (diff * diff).sum(axis=2).sqrt()
    return (d.min(axis=1).mean() + d.min(axis=0).mean()) * 0.5


def aligned_distance(a: Tensor, b) -> Tensor:
    """Mean pointwise Euclidean distance between same-length trajectories."""
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=np.float64))
    diff = a - b
    return (diff * diff).sum(axis=1).sqrt().mean()


def _aligned_np(a, b) -> float:
    return float(np.sqrt(((a - b) ** 2).sum(axis=1)).mean())


def assign(waypoints, gt: GroundTruthSet) -> Assignment:
    """Nearest generated trajectory per ground truth, ties to the lowest
    generated index; assignment itself is not differentiated."""
    gen = [_wp(w) for w in waypoints]
    if not gen or len(gt) == 0:
        raise ValueError("need at least one generated and one ground truth")
    effective = {}
    for k, t in enumerate(gt.trajectories):
        dists = [geom.avg_hausdorff(g, t.waypoints) for g in gen]
        effective[k] = int(np.argmin(dists))
    used = set(effective.values())
    redundant = tuple(i for i in range(len(gen)) if i not in used)
    return Assignment(effective=effective, redundant=redundant)


def coverage_loss(waypoints, assignment: Assignment, gt: GroundTruthSet,
                  lambda_end: float = 1.0) -> Tensor:
    """Sum over ground truths of d_h to the assigned trajectory plus a
    weighted endpoint gap; only assigned trajectories get gradients."""
    total = None
    for k, t in enumerate(gt.trajectories):
        w = waypoints[assignment.effective[k]]
        term = hausdorff_graph(w, t.waypoints)
        if lambda_end > 0:
            last = w[w.shape[0] - 1]
            gap = last - Tensor(t.waypoints[-1])
            term = term + (gap * gap).sum().sqrt() * lambda_end
        total = term if total is None else total + term
    return total


def diversity_loss(waypoints, assignment: Assignment) -> Tensor:
    eff = assignment.effective_indices()
    total = Tensor(0.0)
    for i in range(len(eff)):
        for j in range(i + 1, len(eff)):
            d = aligned_distance(waypoints[eff[i]], waypoints[eff[j]])
            total = total + (-d).exp()
    for o in assignment.redundant:
        wo = _wp(waypoints[o])
        nearest = min(eff, key=lambda e: _aligned_np(wo, _wp(waypoints[e])))
        d = aligned_distance(waypoints[o], waypoints[nearest])
        total = total + (1.0 - (-d).exp())
    return total


def all_pairs_diversity(waypoints) -> Tensor:
    """Every distinct pair pushed apart; the diversity-only baseline."""
    total = Tensor(0.0)
    for i in range(len(waypoints)):
        for j in range(i + 1, len(waypoints)):
            d = aligned_distance(waypoints[i], waypoints[j])
            total = total + (-d).exp()
    return total


def reconstruction_loss(waypoints, gt: GroundTruthSet,
                        lambda_end: float = 1.0) -> Tensor:
    """Plain reconstruction: mean fit of every sample to every ground
    truth. No assignment, so multimodal scenes average across modes."""
    total = None
    n = 0
    for w in waypoints:
        for t in gt.trajectories:
            term = hausdorff_graph(w, t.waypoints)
            if lambda_end > 0:
                gap = w[w.shape[0] - 1] - Tensor(t.waypoints[-1])
                term = term + (gap * gap).sum().sqrt() * lambda_end
            total = term if total is None else total + term
            n += 1
    return total / float(n)


def clearance_at(points: Tensor, grid: TraversabilityGrid) -> Tensor:
    """Bilinear clearance (meters) at world points, differentiable in the
    points. Matches env.bilinear_sample values; gradient is zero where a
    query clamps to the field border."""
    field = grid.clearance_field()
    res = grid.resolution
    h, w = field.shape
    x = points.data[:, 0]
    y = points.data[:, 1]
    u_raw = x / res - 0.5
    v_raw = y / res - 0.5
    u = np.clip(u_raw, 0.0, w - 1.000001)
    v = np.clip(v_raw, 0.0, h - 1.000001)
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu = u - i0
    fv = v - j0
    f00 = field[j0, i0]
    f10 = field[j0, i0 + 1]
    f01 = field[j0 + 1, i0]
    f11 = field[j0 + 1, i0 + 1]
    vals = (f00 * (1 - fu) * (1 - fv) + f10 * fu * (1 - fv)
            + f01 * (1 - fu) * fv + f11 * fu * fv)
    du = ((f10 - f00) * (1 - fv) + (f11 - f01) * fv) / res
    dv = ((f01 - f00) * (1 - fu) + (f11 - f10) * fu) / res
    du = np.where(u_raw == u, du, 0.0)
    dv = np.where(v_raw == v, dv, 0.0)

    def grad_fn(g):
        return [np.stack([g * du, g * dv], axis=1)]

    return T.custom(vals, [points], grad_fn)


def traversability_loss(waypoints, grid: TraversabilityGrid,
                        pose: RobotPose) -> Tensor:
    """Penalty for skimming obstacles; zero once the mean waypoint
    clearance reaches 1 m."""
    c, s = np.cos(pose.heading), np.sin(pose.heading)
    rot_t = Tensor(np.array([[c, s], [-s, c]]))  # right-multiply form
    total = None
    for w in waypoints:
        n = w.shape[0]
        shift = Tensor(np.tile([pose.x, pose.y], (n, 1)))
        world = T.matmul(w, rot_t) + shift
        m = clearance_at(world, grid).mean().clamp(0.0, 1.0)
        term = (1.0 - m).exp() - 1.0
        total = term if total is None else total + term
    return total


# -- combined objective --------------------------------------------------------


def total_loss(out: dict, gt: GroundTruthSet, grid: TraversabilityGrid,
               pose: RobotPose, weights: LossWeights = LossWeights(),
               kind: str = "mtg"):
    """Variant-appropriate objective from a model's forward graph.

    Returns (scalar graph tensor, float breakdown dict). The breakdown
    reports the reconstruction term of the resampling baseline in the
    coverage column, since it plays the same data-fit role.
    """
    wps = out["waypoints"]
    kl = kl_term(out["mu"], out["sigma"])
    zero = Tensor(0.0)
    if kind == "cvae":
        cov = reconstruction_loss(wps, gt, weights.lambda_end)
        div = zero
        trav = zero
        total = kl * weights.beta1 + cov * weights.beta2
    elif kind == "dlow":
        asn = assign(wps, gt)
        cov = coverage_loss(wps, asn, gt, weights.lambda_end)
        div = all_pairs_diversity(wps)
        trav = zero
        total = kl * weights.beta1 + (cov + div) * weights.beta2
    elif kind in ("mtg", "mtg1"):
        asn = assign(wps, gt)
        cov = coverage_loss(wps, asn, gt, weights.lambda_end)
        div = diversity_loss(wps, asn)
        trav = traversability_loss(wps, grid, pose)
        total = kl * weights.beta1 + (cov + div) * weights.beta2 + trav * weights.beta3
    else:
        raise ValueError(f"unknown variant kind {kind!r}")
    breakdown = {
        "total": float(total.data),
        "kl": float(kl.data),
        "coverage": float(cov.data),
        "diversity": float(div.data),
        "traversability": float(trav.data),
    }
    return total, breakdown
