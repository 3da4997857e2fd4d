"""Supervision fans: optimal routes to targets spread along a forward arc.

For each scene kind this plans grid-optimal paths from the robot to targets
sampled on the 15 m arc inside the field of view, deduplicates near-identical
routes, and resamples each survivor to a fixed waypoint count. The fan is
what the generator trains against.
"""

import os

import numpy as np

from mtglab import env, oracle, render

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

for kind in env.SCENE_KINDS:
    grid, pose = env.generate_scene(env.SceneSpec(kind, seed=4))
    gt = oracle.build_ground_truth(grid, pose)

    lengths = [np.linalg.norm(np.diff(t.waypoints, axis=0), axis=1).sum()
               for t in gt.trajectories]
    print(f"{kind:20s} {len(gt.trajectories):2d} routes, "
          f"lengths {min(lengths):.1f}..{max(lengths):.1f} m, "
          f"target bearings "
          f"{np.degrees(gt.target_angles).round(0).astype(int).tolist()} deg")

    spec = render.PlotSpec(path=os.path.join(OUT, f"fan_{kind}.svg"),
                           layers=("grid", "gt"))
    render.render(grid, pose, spec, gt=gt)

print(f"\nSVGs in {OUT}")
