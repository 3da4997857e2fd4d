"""Walk one observation through an untrained generator, stage by stage.

Shows the fused context encoding, the latent posterior, the per-trajectory
affine transforms, the cross-trajectory attention mix, and how the latent
covariance turns into a per-trajectory confidence score.
"""

import numpy as np

from mtglab import env
from mtglab.model import ModelConfig, TrajectoryModel

grid, pose = env.generate_scene(env.SceneSpec("junction", seed=4))
poses, vels = env.simulate_history(grid, pose, np.random.default_rng(4))
obs = env.observe(grid, poses, vels)

cfg = ModelConfig(kind="mtg", n_trajectories=4, d_c=32, d_z=16, seed=1)
model = TrajectoryModel(cfg)
print(f"variant={cfg.kind}  K={cfg.n_trajectories} trajectories, "
      f"S={cfg.n_waypoints} waypoints, {model.params.n_values()} parameters")

out = model.forward_tensors(obs.scans, obs.velocities)
print(f"\ncontext c:        shape {out['c'].shape}")
print(f"posterior mu:     {np.round(out['mu'].data[:5], 3)} ...")
print(f"posterior sigma:  {np.round(out['sigma'].data[:5], 3)} ...")

# each trajectory k owns an affine map of the shared latent draw
for k, (a, b) in enumerate(zip(out["a_k"], out["b_k"])):
    dev = np.abs(a.data - np.eye(cfg.d_z)).max()
    print(f"transform {k}: max deviation from identity {dev:.3f}, "
          f"offset norm {np.linalg.norm(b.data):.3f}")

print(f"\nattention calls so far: {model.attend_calls}")

gen = model.forward(obs, mode="mean")
rep = model.confidence(gen)
print("\nper-trajectory confidence (mean mode, untrained):")
for k, c in enumerate(rep.confidences):
    end = gen.trajectories[k].waypoints[-1]
    print(f"  trajectory {k}: confidence {c:.3f}, "
          f"endpoint ({end[0]:+.1f}, {end[1]:+.1f}) m")

# scaling up the latent variance must push every confidence down
for scale in (0.5, 1.0, 2.0, 4.0):
    r = model.confidence(gen, variance_scale=scale)
    print(f"variance x{scale:<3} -> mean confidence {r.confidences.mean():.4f}")
