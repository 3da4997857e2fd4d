"""Dataset assembly, seeded mini-batch training with adaptive-moment
gradient descent, per-epoch checkpointing, and variant comparison.

Datasets are line-delimited text: a header per record (scene kind, seed,
split), the pose, the raw scans and velocity history, the supervision
fan, and the run-length-encoded grid. Train and test records draw from
disjoint scene-seed ranges so the splits never share a world.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import datetime
import logging
import math
import os

import numpy as np

from . import env, metrics
from .env import (
    TraversabilityGrid,
    RobotPose,
    Observation,
    SceneSpec,
    SceneGenerationError,
    SCENE_KINDS,
)
from .oracle import (
    Trajectory,
    GroundTruthSet,
    NoViableTargetsError,
    build_ground_truth,
    DEFAULT_TARGET_DISTANCE,
    DEFAULT_WAYPOINTS,
    DEFAULT_MAX_TARGETS,
)
from .losses import LossWeights, total_loss
from .model import ModelConfig, TrajectoryModel, save_manifest

__all__ = [
    "TrainConfig",
    "DatasetRecord",
    "TrainingError",
    "Adam",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "split_records",
    "train",
    "compare_variants",
    "TEST_SEED_OFFSET",
]

log = logging.getLogger("mtglab")

TEST_SEED_OFFSET = 1_000_000  # test scene seeds start this far above train


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "mtg"
    n_trajectories: int = 6
    n_waypoints: int = DEFAULT_WAYPOINTS
    target_distance: float = DEFAULT_TARGET_DISTANCE
    fov: float = env.DEFAULT_FOV
    beams: int = env.DEFAULT_BEAMS
    n_scans: int = env.DEFAULT_N_SCANS
    n_velocities: int = env.DEFAULT_N_VELOCITIES
    range_max: float = env.DEFAULT_RANGE_MAX
    d_c: int = 128
    d_z: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 16
    latent_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        for nm in ("n_trajectories", "n_waypoints", "beams", "n_scans",
                   "n_velocities", "d_c", "d_z", "epochs", "batch_size",
                   "latent_samples"):
            if getattr(self, nm) < 1:
                raise ValueError(f"{nm} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            kind=self.kind,
            n_trajectories=self.n_trajectories,
            n_waypoints=self.n_waypoints,
            d_c=self.d_c,
            d_z=self.d_z,
            beams=self.beams,
            n_scans=self.n_scans,
            n_velocities=self.n_velocities,
            range_max=self.range_max,
            seed=self.seed,
        )


@dataclass
class DatasetRecord:
    kind: str
    scene_seed: int
    split: str  # train | test
    grid: TraversabilityGrid
    pose: RobotPose
    observation: Observation
    gt: GroundTruthSet


# -- dataset construction ------------------------------------------------------


def _make_record(kind: str, scene_seed: int, split: str, size_m: float,
                 resolution: float, config: TrainConfig) -> DatasetRecord:
    grid, pose = env.generate_scene(
        SceneSpec(kind, scene_seed, size_m=size_m, resolution=resolution))
    gt = build_ground_truth(
        grid, pose, distance=config.target_distance, fov=config.fov,
        n_waypoints=config.n_waypoints)
    hist_rng = np.random.default_rng([scene_seed, 1])
    poses, vels = env.simulate_history(
        grid, pose, hist_rng, n_scans=config.n_scans,
        n_velocities=config.n_velocities)
    obs = env.observe(
        grid, poses, vels, fov=config.fov, beams=config.beams,
        r_max=config.range_max, n_scans=config.n_scans,
        n_velocities=config.n_velocities)
    return DatasetRecord(kind=kind, scene_seed=scene_seed, split=split,
                         grid=grid, pose=pose, observation=obs, gt=gt)


def _fill_quota(n_target: int, seed_start: int, split: str, size_m: float,
                resolution: float, config: TrainConfig, kinds) -> list:
    records = []
    dropped = 0
    attempts = 0
    limit = max(40, 8 * n_target)
    while len(records) < n_target and attempts < limit:
        scene_seed = seed_start + attempts
        kind = kinds[attempts % len(kinds)]
        attempts += 1
        try:
            records.append(_make_record(kind, scene_seed, split, size_m,
                                        resolution, config))
        except (NoViableTargetsError, SceneGenerationError) as e:
            dropped += 1
            log.info("dropped %s scene seed=%d: %s", kind, scene_seed, e)
    if len(records) < n_target:
        raise TrainingError(
            f"could not assemble {n_target} {split} scenes after "
            f"{attempts} attempts ({dropped} dropped)")
    return records


def build_dataset(path, n_scenes: int = 500, split_ratio: float = 0.8,
                  seed: int = 0, size_m: float = 28.0,
                  resolution: float = env.DEFAULT_RESOLUTION,
                  config: TrainConfig = None, kinds=SCENE_KINDS):
    """Generate scenes, keep the ones with viable supervision, write the
    dataset file. Returns the records. Same arguments, same bytes."""
    if n_scenes < 2:
        raise ValueError("need at least 2 scenes")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must be in (0, 1)")
    config = config or TrainConfig()
    n_train = int(round(n_scenes * split_ratio))
    n_test = n_scenes - n_train
    train_start = seed
    test_start = seed + TEST_SEED_OFFSET
    assert train_start + 8 * n_train <= test_start, "seed ranges collide"
    records = _fill_quota(n_train, train_start, "train", size_m, resolution,
                          config, kinds)
    records += _fill_quota(n_test, test_start, "test", size_m, resolution,
                           config, kinds)
    save_dataset(path, records)
    return records


def split_records(records, split: str):
    return [r for r in records if r.split == split]


# -- dataset file format ---------------------------------------------------------

_DS_MAGIC = "dataset/1"


def _floats(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr).reshape(-1))


def save_dataset(path, records):
    lines = [_DS_MAGIC, f"n_records={len(records)}"]
    for r in records:
        h, w = r.grid.cells.shape
        lines.append(f"record kind={r.kind} scene_seed={r.scene_seed} "
                     f"split={r.split}")
        lines.append(f"resolution={r.grid.resolution!r}")
        lines.append(f"pose={_floats([r.pose.x, r.pose.y, r.pose.heading])}")
        lines.append(f"range_max={r.observation.range_max!r}")
        n_l, b = r.observation.scans.shape
        lines.append(f"scans {n_l} {b}")
        for row in r.observation.scans:
            lines.append(_floats(row))
        lines.append(f"velocities {r.observation.velocities.shape[0]}")
        for row in r.observation.velocities:
            lines.append(_floats(row))
        s = r.gt.trajectories[0].waypoints.shape[0]
        lines.append(f"gt {len(r.gt)} {s}")
        lines.append("angles " + _floats(r.gt.target_angles))
        for t in r.gt.trajectories:
            lines.append(_floats(t.waypoints))
        lines.append(f"grid {h} {w}")
        lines.extend(env.rle_encode(r.grid.cells))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _DS_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    n = int(lines[1].partition("=")[2])
    records = []
    i = 2
    for _ in range(n):
        head = lines[i].split()
        if head[0] != "record":
            raise ValueError(f"{path}: bad record header at line {i + 1}")
        kv = dict(tok.partition("=")[::2] for tok in head[1:])
        i += 1
        resolution = float(lines[i].partition("=")[2]); i += 1
        px, py, ph = map(float, lines[i].partition("=")[2].split()); i += 1
        range_max = float(lines[i].partition("=")[2]); i += 1
        n_l, b = map(int, lines[i].split()[1:]); i += 1
        scans = np.array([[float(v) for v in lines[i + j].split()]
                          for j in range(n_l)])
        i += n_l
        n_v = int(lines[i].split()[1]); i += 1
        vels = np.array([[float(v) for v in lines[i + j].split()]
                         for j in range(n_v)])
        i += n_v
        g, s = map(int, lines[i].split()[1:]); i += 1
        angles = np.array([float(v) for v in lines[i].split()[1:]]); i += 1
        trajs = []
        for j in range(g):
            w = np.array([float(v) for v in lines[i + j].split()])
            trajs.append(Trajectory(w.reshape(s, 2)))
        i += g
        h, w_ = map(int, lines[i].split()[1:]); i += 1
        cells = env.rle_decode(lines[i:i + h], w_, h)
        i += h
        records.append(DatasetRecord(
            kind=kv["kind"],
            scene_seed=int(kv["scene_seed"]),
            split=kv["split"],
            grid=TraversabilityGrid(cells, resolution),
            pose=RobotPose(px, py, ph),
            observation=Observation(scans, vels, range_max),
            gt=GroundTruthSet(trajs, angles),
        ))
    return records


# -- optimization -----------------------------------------------------------------


class Adam:
    """Adaptive-moment gradient descent over a parameter store."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _draw_eps(rng, config: TrainConfig):
    if config.kind == "cvae":
        return rng.standard_normal((config.n_trajectories, config.d_z))
    return rng.standard_normal(config.d_z)


def train(config: TrainConfig, records, out_dir, name: str = None):
    """Optimize one variant; writes checkpoint, manifest, and a per-step
    loss log under out_dir. Returns (model, step history)."""
    train_recs = split_records(records, "train") or list(records)
    if not train_recs:
        raise TrainingError("no training records")
    name = name or config.kind
    os.makedirs(out_dir, exist_ok=True)
    model = TrajectoryModel(config.model_config())
    opt = Adam(model.params, lr=config.lr, beta1=config.adam_beta1,
               beta2=config.adam_beta2, eps=config.adam_eps)
    rng = np.random.default_rng(config.seed)
    ckpt_path = os.path.join(out_dir, f"{name}.ckpt")
    save_manifest(os.path.join(out_dir, f"{name}.manifest"), model.config)
    log_path = os.path.join(out_dir, f"{name}.trainlog")
    history = []
    step = 0
    with open(log_path, "w") as logf:
        logf.write("trainlog/1\n")
        # the only timestamp in any artifact; reruns compare ignoring '#'
        logf.write(f"# started {datetime.datetime.now().isoformat()} "
                   f"variant={name}\n")
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_recs))
            for lo in range(0, len(order), config.batch_size):
                batch = order[lo:lo + config.batch_size]
                model.params.zero_grad()
                acc = dict.fromkeys(
                    ("total", "kl", "coverage", "diversity", "traversability"),
                    0.0)
                scale = 1.0 / (len(batch) * config.latent_samples)
                for idx in batch:
                    rec = train_recs[idx]
                    for _ in range(config.latent_samples):
                        eps = _draw_eps(rng, config)
                        out = model.forward_tensors(
                            rec.observation.scans, rec.observation.velocities,
                            eps=eps)
                        total, bd = total_loss(
                            out, rec.gt, rec.grid, rec.pose, config.weights,
                            kind=config.kind)
                        (total * scale).backward()
                        for k in acc:
                            acc[k] += bd[k] * scale
                for term in ("kl", "coverage", "diversity",
                             "traversability", "total"):
                    if not math.isfinite(acc[term]):
                        raise TrainingError(
                            f"non-finite {term} term at step {step}")
                opt.step()
                step += 1
                acc["step"] = step
                acc["epoch"] = epoch
                history.append(acc)
                logf.write(
                    f"step={step} total={acc['total']!r} kl={acc['kl']!r} "
                    f"coverage={acc['coverage']!r} "
                    f"diversity={acc['diversity']!r} "
                    f"traversability={acc['traversability']!r}\n")
            model.save_params(ckpt_path)
    return model, history


# -- variant comparison --------------------------------------------------------------


class _GroundTruthEcho:
    """Replays each scene's supervision fan as if generated; gives the
    reference table row its honest timing and incursion numbers."""

    def __init__(self, scenes):
        self._it = iter(scenes)

    def forward(self, obs, mode="sample", rng=None):
        return next(self._it).gt


def compare_variants(records, configs: dict, out_dir, eval_seed: int = 0,
                     eval_mode: str = "sample"):
    """Train every config on the shared train split, evaluate all of them
    plus the ground-truth row on the test split. Returns (reports, table).
    """
    if len(configs) < 2:
        raise ValueError("need at least two variants to compare")
    test_recs = split_records(records, "test")
    if not test_recs:
        raise TrainingError("no test records to evaluate on")
    reports = {}
    reports["ground-truth"] = metrics.evaluate(
        _GroundTruthEcho(test_recs), test_recs, seed=eval_seed, mode=eval_mode)
    for name, cfg in configs.items():
        model, _ = train(cfg, records, out_dir, name=name)
        reports[name] = metrics.evaluate(model, test_recs, seed=eval_seed,
                                         mode=eval_mode)
    table = metrics.comparison_table(reports)
    return reports, table
