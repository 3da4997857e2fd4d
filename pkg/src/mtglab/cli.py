"""Command-line surface: dataset generation, training, evaluation,
single-scene inference, and SVG plots.

Every option resolves through four layers, weakest first: built-in
default, config file (--config, flat key=value lines), environment
variable MTGLAB_<KEY>, then the explicit command-line flag. All
randomness flows from --seed, so a rerun with the same inputs writes
the same bytes (wall-clock t_ms lines and '#' log headers aside).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import env, metrics, oracle, render, trainer
from .env import SceneSpec, SceneGenerationError
from .losses import LossWeights
from .model import TrajectoryModel, load_manifest, VARIANT_KINDS
from .oracle import NoViableTargetsError
from .trainer import TrainConfig, TrainingError

__all__ = ["main"]


def _parse_config_file(path):
    cfg = {}
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: bad config line {line!r}")
            cfg[key.strip()] = val.strip()
    return cfg


def _resolve(args, name, cast, default):
    """default < config file < MTGLAB_<NAME> env < explicit flag."""
    value = default
    file_cfg = getattr(args, "_file_cfg", {})
    if name in file_cfg:
        value = cast(file_cfg[name])
    env_key = "MTGLAB_" + name.upper().replace("-", "_")
    if env_key in os.environ:
        value = cast(os.environ[env_key])
    flag = getattr(args, name.replace("-", "_"), None)
    if flag is not None:
        value = flag
    return value


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)


def _build_parser():
    p = argparse.ArgumentParser(
        prog="mtglab",
        description="trajectory-fan generation toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a scene dataset file")
    _add_common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=None)
    g.add_argument("--split-ratio", type=float, default=None)
    g.add_argument("--size-m", type=float, default=None)
    g.add_argument("--resolution", type=float, default=None)

    t = sub.add_parser("train", help="train one variant on a dataset")
    _add_common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--kind", choices=VARIANT_KINDS, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--d-c", type=int, default=None)
    t.add_argument("--d-z", type=int, default=None)
    t.add_argument("--n-trajectories", type=int, default=None)
    t.add_argument("--n-waypoints", type=int, default=None)
    t.add_argument("--latent-samples", type=int, default=None)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(e)
    e.add_argument("--dataset", required=True)
    e.add_argument("--ckpt", default=None)
    e.add_argument("--manifest", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--split", choices=("train", "test"), default=None)
    e.add_argument("--mode", choices=("sample", "mean"), default=None)
    e.add_argument("--oracle-as-model", action="store_true",
                   help="score the planner's own ground truth (reference row)")

    i = sub.add_parser("infer", help="generate trajectories for one scene")
    _add_common(i)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--manifest", required=True)
    i.add_argument("--scene", required=True, help="scene file (env format)")
    i.add_argument("--mode", choices=("sample", "mean"), default=None)
    i.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="render a scene to SVG")
    _add_common(pl)
    pl.add_argument("--scene", help="scene file (env format)")
    pl.add_argument("--dataset", help="dataset file; use with --index")
    pl.add_argument("--index", type=int, default=None)
    pl.add_argument("--ckpt", default=None)
    pl.add_argument("--manifest", default=None)
    pl.add_argument("--out", required=True)
    pl.add_argument("--layers", default=None, help="comma list: grid,gt,generated,beams,confidence")
    pl.add_argument("--scale", type=float, default=None)
    pl.add_argument("--mode", choices=("sample", "mean"), default=None)
    return p


def _load_model(ckpt, manifest):
    model = TrajectoryModel(load_manifest(manifest))
    model.load_params(ckpt)
    return model


def _scene_record(args, seed):
    """Scene + derived observation/gt for infer and plot."""
    if getattr(args, "dataset", None) and getattr(args, "scene", None):
        raise ValueError("give --scene or --dataset, not both")
    if getattr(args, "dataset", None):
        records = trainer.load_dataset(args.dataset)
        idx = args.index if args.index is not None else 0
        if not 0 <= idx < len(records):
            raise ValueError(f"--index {idx} outside 0..{len(records) - 1}")
        return records[idx]
    if not getattr(args, "scene", None):
        raise ValueError("need --scene or --dataset")
    grid, pose, _ = env.load_scene(args.scene)
    gt = None
    try:
        gt = oracle.build_ground_truth(grid, pose)
    except NoViableTargetsError:
        pass
    poses, vels = env.simulate_history(grid, pose, np.random.default_rng([seed, 1]))
    obs = env.observe(grid, poses, vels)

    class _Rec:
        pass

    rec = _Rec()
    rec.grid, rec.pose, rec.gt, rec.observation = grid, pose, gt, obs
    return rec


# -- subcommands -----------------------------------------------------------


def _cmd_gen_data(args):
    seed = _resolve(args, "seed", int, 0)
    n = _resolve(args, "scenes", int, 500)
    ratio = _resolve(args, "split-ratio", float, 0.8)
    size_m = _resolve(args, "size-m", float, 28.0)
    resolution = _resolve(args, "resolution", float, env.DEFAULT_RESOLUTION)
    records = trainer.build_dataset(args.out, n_scenes=n, split_ratio=ratio,
                                    seed=seed, size_m=size_m,
                                    resolution=resolution)
    n_train = len(trainer.split_records(records, "train"))
    print(f"wrote {len(records)} records ({n_train} train / "
          f"{len(records) - n_train} test) to {args.out}")
    return 0


def _train_config(args, seed):
    return TrainConfig(
        kind=_resolve(args, "kind", str, "mtg"),
        n_trajectories=_resolve(args, "n-trajectories", int, 6),
        n_waypoints=_resolve(args, "n-waypoints", int, oracle.DEFAULT_WAYPOINTS),
        d_c=_resolve(args, "d-c", int, 128),
        d_z=_resolve(args, "d-z", int, 64),
        lr=_resolve(args, "lr", float, 1e-3),
        epochs=_resolve(args, "epochs", int, 50),
        batch_size=_resolve(args, "batch-size", int, 16),
        latent_samples=_resolve(args, "latent-samples", int, 1),
        seed=seed,
    )


def _cmd_train(args):
    seed = _resolve(args, "seed", int, 0)
    config = _train_config(args, seed)
    records = trainer.load_dataset(args.dataset)
    model, history = trainer.train(config, records, args.out_dir)
    final = history[-1]["total"] if history else float("nan")
    print(f"trained {config.kind}: {len(history)} steps, final loss "
          f"{final:.4f}; artifacts in {args.out_dir}")
    return 0


def _cmd_eval(args):
    seed = _resolve(args, "seed", int, 0)
    split = _resolve(args, "split", str, "test")
    mode = _resolve(args, "mode", str, "sample")
    records = trainer.load_dataset(args.dataset)
    subset = trainer.split_records(records, split) or records
    if args.oracle_as_model:
        name = "ground-truth"
        model = trainer._GroundTruthEcho(subset)
    else:
        if not args.ckpt or not args.manifest or args.ckpt == "none":
            raise ValueError("eval needs --ckpt and --manifest, or --oracle-as-model")
        model = _load_model(args.ckpt, args.manifest)
        name = model.config.kind
    report = metrics.evaluate(model, subset, seed=seed, mode=mode)
    metrics.save_report(args.out, name, report)
    print(metrics.comparison_table({name: report}))
    return 0


def _cmd_infer(args):
    seed = _resolve(args, "seed", int, 0)
    mode = _resolve(args, "mode", str, "mean")
    model = _load_model(args.ckpt, args.manifest)
    rec = _scene_record(args, seed)
    rng = np.random.default_rng(seed) if mode == "sample" else None
    generated = model.forward(rec.observation, mode=mode, rng=rng)
    conf = model.confidence(generated)
    lines = ["infer/1", f"mode={mode}", f"n={len(generated)}"]
    for k, t in enumerate(generated.trajectories):
        flat = " ".join(repr(float(v)) for v in t.waypoints.reshape(-1))
        lines.append(f"trajectory {k} confidence={float(conf.confidences[k])!r}")
        lines.append(flat)
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {len(generated)} trajectories to {args.out}")
    return 0


def _cmd_plot(args):
    seed = _resolve(args, "seed", int, 0)
    mode = _resolve(args, "mode", str, "mean")
    scale = _resolve(args, "scale", float, 20.0)
    layer_csv = _resolve(args, "layers", str, ",".join(render.LAYERS))
    layers = tuple(s.strip() for s in layer_csv.split(",") if s.strip())
    rec = _scene_record(args, seed)
    generated = conf = None
    if args.ckpt and args.manifest:
        model = _load_model(args.ckpt, args.manifest)
        rng = np.random.default_rng(seed) if mode == "sample" else None
        generated = model.forward(rec.observation, mode=mode, rng=rng)
        conf = model.confidence(generated)
    spec = render.PlotSpec(path=args.out, layers=layers, scale=scale)
    render.render(rec.grid, rec.pose, spec, gt=rec.gt, generated=generated,
                  confidence=conf, observation=rec.observation)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args._file_cfg = _parse_config_file(args.config) if args.config else {}
        return _COMMANDS[args.command](args)
    except (ValueError, TrainingError, SceneGenerationError,
            NoViableTargetsError, OSError) as e:
        print(f"mtglab {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
