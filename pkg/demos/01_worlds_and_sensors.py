"""Tour of the procedural worlds and the simulated sensor stack.

Generates one scene of each kind, runs the lidar-style raycaster from the
robot pose, and writes an SVG per scene showing the traversable ground and
the latest scan's beams.
"""

import os

import numpy as np

from mtglab import env, render

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

for kind in env.SCENE_KINDS:
    grid, pose = env.generate_scene(env.SceneSpec(kind, seed=4))
    # a short drive history feeds the observation: n_scans frames of ranges
    # plus n_velocities of (v, w) pairs, newest last
    poses, vels = env.simulate_history(grid, pose, np.random.default_rng(4))
    obs = env.observe(grid, poses, vels)

    w, h = grid.extent
    free = grid.cells.mean()
    hit = (obs.scans[-1] < env.DEFAULT_RANGE_MAX).mean()
    print(f"{kind:20s} {w:.0f}x{h:.0f} m, {free:4.0%} traversable, "
          f"{hit:4.0%} of beams hit something")

    spec = render.PlotSpec(path=os.path.join(OUT, f"world_{kind}.svg"),
                           layers=("grid", "beams"))
    render.render(grid, pose, spec, observation=obs)

print(f"\nSVGs in {OUT}")
