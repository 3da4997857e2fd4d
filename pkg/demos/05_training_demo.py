"""A small end-to-end training run, with before and after pictures.

Builds a 30-scene dataset, trains the full variant for a few epochs, and
writes SVGs of the same held-out scene before and after training.
"""

import os

import numpy as np

from mtglab import render
from mtglab.model import TrajectoryModel
from mtglab.trainer import TrainConfig, build_dataset, split_records, train

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

config = TrainConfig(kind="mtg", d_c=48, d_z=24, n_trajectories=4,
                     epochs=6, batch_size=8, seed=0)
records = build_dataset(os.path.join(OUT, "demo.dataset"), n_scenes=30,
                        seed=1, config=config)
test = split_records(records, "test")
scene = test[0]
print(f"{len(records)} scenes, probing held-out {scene.kind} "
      f"seed={scene.scene_seed}")


def snapshot(model, tag):
    gen = model.forward(scene.observation, mode="mean")
    spec = render.PlotSpec(path=os.path.join(OUT, f"train_{tag}.svg"),
                           layers=("grid", "gt", "generated"))
    render.render(scene.grid, scene.pose, spec, gt=scene.gt, generated=gen)


snapshot(TrajectoryModel(config.model_config()), "before")

model, history = train(config, records, os.path.join(OUT, "demo_run"))
snapshot(model, "after")

steps = len(history)
for i in range(0, steps, max(steps // 8, 1)):
    h = history[i]
    print(f"step {i:3d}: total {h['total']:8.2f}  coverage {h['coverage']:8.2f}  "
          f"traversability {h['traversability']:6.2f}")
print(f"step {steps - 1:3d}: total {history[-1]['total']:8.2f}")
print(f"\nloss {history[0]['total']:.1f} -> {history[-1]['total']:.1f}; "
      f"see train_before.svg / train_after.svg in {OUT}")
