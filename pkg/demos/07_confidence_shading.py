"""Confidence-shaded plots: stroke opacity tracks per-trajectory certainty.

Uses an untrained generator (sampled mode) so the fan is visibly spread,
then renders the same scene at several injected latent-variance scales.
Higher variance means lower confidence means fainter strokes.
"""

import os

import numpy as np

from mtglab import env, render
from mtglab.model import ModelConfig, TrajectoryModel

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

grid, pose = env.generate_scene(env.SceneSpec("open-with-obstacles", seed=8))
poses, vels = env.simulate_history(grid, pose, np.random.default_rng(8))
obs = env.observe(grid, poses, vels)

model = TrajectoryModel(ModelConfig(kind="mtg", n_trajectories=5,
                                    d_c=32, d_z=16, seed=3))
gen = model.forward(obs, mode="sample", rng=np.random.default_rng(0))

for scale in (0.25, 1.0, 16.0):
    rep = model.confidence(gen, variance_scale=scale)
    spec = render.PlotSpec(
        path=os.path.join(OUT, f"confidence_x{scale:g}.svg"),
        layers=("grid", "gt", "generated", "confidence"))
    render.render(grid, pose, spec, generated=gen, confidence=rep)
    print(f"variance x{scale:<5g} confidences "
          f"{np.round(rep.confidences, 3).tolist()}")

print(f"\nSVGs in {OUT}; strokes fade as injected variance grows")
