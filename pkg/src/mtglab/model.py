"""Latent-transform trajectory generator and its baseline variants.

Pipeline: sensor encoder -> diagonal-Gaussian latent -> K learned affine
maps fanning one latent into K -> self-attention mixing the K latents ->
K recurrent decoders emitting per-step (dx, dy) that accumulate into
waypoints from (0, 0) in the robot frame.

Variant kinds strip stages for comparison: `cvae` resamples the latent K
times through one shared decoder (no maps, no attention), `dlow` keeps
the affine maps but drops attention, `mtg1` is the full model without
attention, `mtg` is the full model.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor, ParamStore
from .env import Observation
from .oracle import Trajectory

__all__ = [
    "ModelConfig",
    "TrajectoryModel",
    "GeneratedSet",
    "ConfidenceReport",
    "VARIANT_KINDS",
    "baseline_variant",
    "save_manifest",
    "load_manifest",
    "manifest_lines",
]

VARIANT_KINDS = ("cvae", "dlow", "mtg1", "mtg")

DET_GUARD = 1e-6  # |det| below this triggers the diagonal ridge
DET_RIDGE = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mtg"
    n_trajectories: int = 6  # latents fanned out per observation
    n_waypoints: int = 16
    d_c: int = 128  # condition embedding width
    d_z: int = 64  # latent width
    beams: int = 64
    n_scans: int = 3
    n_velocities: int = 10
    range_max: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"unknown variant kind {self.kind!r}, want {VARIANT_KINDS}")

    @property
    def uses_transforms(self) -> bool:
        return self.kind != "cvae"

    @property
    def uses_attention(self) -> bool:
        return self.kind == "mtg"

    @property
    def shared_decoder(self) -> bool:
        return self.kind in ("cvae", "dlow")


@dataclass
class GeneratedSet:
    """K generated robot-frame trajectories plus the latent statistics
    needed to reason about how confident each one is."""

    trajectories: list
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray  # [K, d_z] latent actually decoded (post-transform)
    transforms: np.ndarray  # [K, d_z, d_z]
    offsets: np.ndarray  # [K, d_z]
    kind: str

    def __len__(self):
        return len(self.trajectories)

    def stacked(self) -> np.ndarray:
        return np.stack([t.waypoints for t in self.trajectories])


@dataclass
class ConfidenceReport:
    variance: np.ndarray  # latent diagonal variance [d_z]
    covariances: np.ndarray  # per-trajectory propagated covariance [K, d_z, d_z]
    confidences: np.ndarray  # exp(-trace/d_z), one scalar per trajectory


def _linear(ps, rng, name, d_out, d_in):
    w = ps.add(f"{name}.w", T.glorot_uniform(rng, (d_out, d_in)))
    b = ps.add(f"{name}.b", np.zeros(d_out))
    return w, b


class TrajectoryModel:
    """See the module docstring; one instance holds one variant's weights."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamStore()
        self.attend_calls = 0  # instrumentation: ablations must never attend
        self.det_guard_hits = 0
        rng = np.random.default_rng(config.seed)
        c = config
        d_vel = max(8, c.d_c // 2)
        d_scan_in = c.n_scans * c.beams
        d_vel_in = c.n_velocities * 2
        ps = self.params
        _linear(ps, rng, "scan.l0", c.d_c, d_scan_in)
        _linear(ps, rng, "scan.l1", c.d_c, c.d_c)
        _linear(ps, rng, "vel.l0", d_vel, d_vel_in)
        _linear(ps, rng, "vel.l1", d_vel, d_vel)
        _linear(ps, rng, "vel.l2", d_vel, d_vel)
        _linear(ps, rng, "fuse.l0", c.d_c, c.d_c + d_vel)
        _linear(ps, rng, "fuse.l1", c.d_c, c.d_c)
        _linear(ps, rng, "head.mu.l0", c.d_z, c.d_c)
        _linear(ps, rng, "head.mu.l1", c.d_z, c.d_z)
        _linear(ps, rng, "head.logvar.l0", c.d_z, c.d_c)
        _linear(ps, rng, "head.logvar.l1", c.d_z, c.d_z)
        if c.uses_transforms:
            _linear(ps, rng, "map.a", c.n_trajectories * c.d_z * c.d_z, c.d_c)
            _linear(ps, rng, "map.b", c.n_trajectories * c.d_z, c.d_c)
        if c.kind in ("mtg", "mtg1"):
            # mtg1 carries the attention weights so the two variants differ
            # by exactly one pipeline stage, not by parameter inventory
            ps.add("attn.q", T.glorot_uniform(rng, (c.d_z, c.d_z)))
            ps.add("attn.k", T.glorot_uniform(rng, (c.d_z, c.d_z)))
            ps.add("attn.v", T.glorot_uniform(rng, (c.d_z, c.d_z)))
        d_cond = c.d_z + c.d_c  # per-trajectory decoder conditioning
        n_dec = 1 if c.shared_decoder else c.n_trajectories
        for k in range(n_dec):
            _linear(ps, rng, f"dec{k}.init", c.d_c, c.d_z + d_cond)
            for nm, shape in T.gru_param_shapes(2, c.d_c).items():
                if nm.startswith("w"):
                    ps.add(f"dec{k}.gru.{nm}", T.glorot_uniform(rng, shape))
                else:
                    ps.add(f"dec{k}.gru.{nm}", np.zeros(shape))
            _linear(ps, rng, f"dec{k}.out", 2, c.d_c)

    # -- stages ---------------------------------------------------------

    def _mlp(self, x, names, final_linear=False):
        for i, nm in enumerate(names):
            x = T.linear(self.params[f"{nm}.w"], x, self.params[f"{nm}.b"])
            if not (final_linear and i == len(names) - 1):
                x = x.tanh()
        return x

    def encode_tensors(self, scans: np.ndarray, velocities: np.ndarray):
        """Condition embedding and latent stats as graph tensors.

        Returns (c, mu, logvar). Ranges are normalized by range_max so the
        scan branch sees inputs in [0, 1].
        """
        cfg = self.config
        scans = np.asarray(scans, dtype=np.float64)
        velocities = np.asarray(velocities, dtype=np.float64)
        if scans.shape != (cfg.n_scans, cfg.beams):
            raise ValueError(
                f"scans shape {scans.shape}, configured ({cfg.n_scans}, {cfg.beams})"
            )
        if velocities.shape != (cfg.n_velocities, 2):
            raise ValueError(
                f"velocities shape {velocities.shape}, configured "
                f"({cfg.n_velocities}, 2)"
            )
        s = Tensor((scans / cfg.range_max).reshape(-1))
        v = Tensor(velocities.reshape(-1))
        se = self._mlp(s, ["scan.l0", "scan.l1"])
        ve = self._mlp(v, ["vel.l0", "vel.l1", "vel.l2"])
        c = self._mlp(T.concat([se, ve]), ["fuse.l0", "fuse.l1"], final_linear=True)
        mu = self._mlp(c, ["head.mu.l0", "head.mu.l1"], final_linear=True)
        logvar = self._mlp(c, ["head.logvar.l0", "head.logvar.l1"], final_linear=True)
        return c, mu, logvar

    def encode(self, obs: Observation):
        c, mu, logvar = self.encode_tensors(obs.scans, obs.velocities)
        return c.data.copy(), mu.data.copy(), np.exp(0.5 * logvar.data)

    def transform_latents(self, z: Tensor, c: Tensor):
        """K affine maps of one latent: z_k = (I + W_k(c)) z + b_k(c).

        W_k and b_k come from single linear layers of c, sliced per k.
        Maps whose determinant collapses get a diagonal ridge (counted in
        det_guard_hits) so every map stays invertible.
        """
        cfg = self.config
        kk, dz = cfg.n_trajectories, cfg.d_z
        raw_a = T.linear(self.params["map.a.w"], c, self.params["map.a.b"])
        raw_b = T.linear(self.params["map.b.w"], c, self.params["map.b.b"])
        eye = Tensor(np.eye(dz))
        ridge = Tensor(DET_RIDGE * np.eye(dz))
        a_list, b_list, zk_list = [], [], []
        for k in range(kk):
            a_k = eye + raw_a[k * dz * dz : (k + 1) * dz * dz].reshape(dz, dz)
            if abs(np.linalg.det(a_k.data)) < DET_GUARD:
                self.det_guard_hits += 1
                a_k = a_k + ridge
            b_k = raw_b[k * dz : (k + 1) * dz]
            a_list.append(a_k)
            b_list.append(b_k)
            zk_list.append(T.matmul(a_k, z) + b_k)
        return zk_list, a_list, b_list

    def attend(self, zk_list):
        """Single-head scaled dot-product self-attention over K latents."""
        self.attend_calls += 1
        dz = self.config.d_z
        zmat = T.stack(zk_list, axis=0)  # [K, d_z]
        q = T.matmul(zmat, self.params["attn.q"])
        k = T.matmul(zmat, self.params["attn.k"])
        v = T.matmul(zmat, self.params["attn.v"])
        scores = T.matmul(q, k.transpose()) / math.sqrt(dz)
        return T.matmul(scores.softmax(axis=1), v)

    def decode(self, z_k: Tensor, c_i: Tensor, decoder: int = 0,
               return_deltas: bool = False):
        """Unroll one recurrent decoder; waypoints [S, 2] from the origin.

        Waypoint j is the running sum of the first j+1 step deltas, added
        sequentially so it matches a cumulative sum bit for bit.
        """
        cfg = self.config
        name = f"dec{decoder}"
        h = T.linear(
            self.params[f"{name}.init.w"], T.concat([z_k, c_i]),
            self.params[f"{name}.init.b"],
        ).tanh()
        gru = {nm: self.params[f"{name}.gru.{nm}"] for nm in
               ("w_ih", "w_hh", "b_ih", "b_hh")}
        prev = Tensor(np.zeros(2))
        deltas, points = [], []
        run = None
        for _ in range(cfg.n_waypoints):
            h = T.gru_cell(prev, h, gru)
            d = T.linear(self.params[f"{name}.out.w"], h, self.params[f"{name}.out.b"])
            deltas.append(d)
            prev = d
            run = d if run is None else run + d
            points.append(run)
        wp = T.stack(points, axis=0)
        if return_deltas:
            return wp, T.stack(deltas, axis=0)
        return wp

    # -- full passes ------------------------------------------------------

    def forward_tensors(self, scans, velocities, eps=None):
        """Whole-pipeline graph for one observation.

        eps: None decodes the latent mean; otherwise standard-normal draws,
        shape [d_z] (one shared latent) or [K, d_z] for the resampling
        variant. Returns a dict of graph tensors keyed by stage.
        """
        cfg = self.config
        kk = cfg.n_trajectories
        c, mu, logvar = self.encode_tensors(scans, velocities)
        sigma = (logvar * 0.5).exp()
        if cfg.kind == "cvae":
            if eps is None:
                zs = [mu for _ in range(kk)]
            else:
                eps = np.asarray(eps, dtype=np.float64).reshape(kk, cfg.d_z)
                zs = [mu + sigma * Tensor(eps[k]) for k in range(kk)]
            zk_list = zs
            a_list = b_list = None
        else:
            if eps is None:
                z = mu
            else:
                eps = np.asarray(eps, dtype=np.float64).reshape(cfg.d_z)
                z = mu + sigma * Tensor(eps)
            zk_list, a_list, b_list = self.transform_latents(z, c)
        if cfg.uses_attention:
            cs_mat = self.attend(zk_list)
            cs_list = [cs_mat[k] for k in range(kk)]
        else:
            # no cross-trajectory mixing: each decoder conditions on its
            # own latent in the slot attention would have filled
            cs_list = zk_list
        waypoints = []
        for k in range(kk):
            c_i = T.concat([cs_list[k], c])
            dec = 0 if cfg.shared_decoder else k
            waypoints.append(self.decode(zk_list[k], c_i, decoder=dec))
        return {
            "c": c,
            "mu": mu,
            "logvar": logvar,
            "sigma": sigma,
            "z_k": zk_list,
            "a_k": a_list,
            "b_k": b_list,
            "c_s": cs_list,
            "waypoints": waypoints,
        }

    def forward(self, obs: Observation, mode: str = "sample", rng=None) -> GeneratedSet:
        """Generate K trajectories; `mean` mode is deterministic, `sample`
        mode draws the latent with the caller's generator."""
        cfg = self.config
        if mode == "mean":
            eps = None
        elif mode == "sample":
            if rng is None:
                raise ValueError("sample mode needs a random generator")
            n = cfg.n_trajectories if cfg.kind == "cvae" else 1
            eps = rng.standard_normal((n, cfg.d_z)).squeeze()
        else:
            raise ValueError(f"unknown forward mode {mode!r}")
        out = self.forward_tensors(obs.scans, obs.velocities, eps=eps)
        kk, dz = cfg.n_trajectories, cfg.d_z
        if out["a_k"] is None:
            transforms = np.repeat(np.eye(dz)[None], kk, axis=0)
            offsets = np.zeros((kk, dz))
        else:
            transforms = np.stack([a.data for a in out["a_k"]])
            offsets = np.stack([b.data for b in out["b_k"]])
        return GeneratedSet(
            trajectories=[Trajectory(w.data.copy()) for w in out["waypoints"]],
            mu=out["mu"].data.copy(),
            sigma=out["sigma"].data.copy(),
            z=np.stack([z.data for z in out["z_k"]]),
            transforms=transforms,
            offsets=offsets,
            kind=cfg.kind,
        )

    def confidence(self, generated: GeneratedSet, variance_scale: float = 1.0
                   ) -> ConfidenceReport:
        """Propagate latent variance through each trajectory's affine map.

        cov_k = A_k diag(v) A_k^T with v the (optionally scaled) latent
        variance; the scalar score exp(-trace(cov_k)/d_z) shrinks as the
        propagated variance grows.
        """
        v = (generated.sigma ** 2) * float(variance_scale)
        covs = np.einsum("kij,j,klj->kil", generated.transforms, v,
                         generated.transforms)
        conf = np.exp(-np.trace(covs, axis1=1, axis2=2) / self.config.d_z)
        return ConfidenceReport(variance=v, covariances=covs, confidences=conf)

    # -- persistence -------------------------------------------------------

    def save_params(self, path):
        T.save_checkpoint(path, self.params.state_arrays())

    def load_params(self, path):
        self.params.load_arrays(T.load_checkpoint(path))


def baseline_variant(kind: str, **overrides) -> TrajectoryModel:
    """Model instance for one of the comparison rows."""
    cfg = ModelConfig(kind=kind, **overrides)
    return TrajectoryModel(cfg)


# -- manifest -----------------------------------------------------------------

_MANIFEST_KEYS = (
    "kind", "n_trajectories", "n_waypoints", "d_c", "d_z", "beams",
    "n_scans", "n_velocities", "range_max", "attention", "seed",
)


def manifest_lines(config: ModelConfig):
    vals = {
        "kind": config.kind,
        "n_trajectories": config.n_trajectories,
        "n_waypoints": config.n_waypoints,
        "d_c": config.d_c,
        "d_z": config.d_z,
        "beams": config.beams,
        "n_scans": config.n_scans,
        "n_velocities": config.n_velocities,
        "range_max": repr(config.range_max),
        "attention": "on" if config.uses_attention else "off",
        "seed": config.seed,
    }
    return ["model/1"] + [f"{k}={vals[k]}" for k in _MANIFEST_KEYS]


def save_manifest(path, config: ModelConfig):
    with open(path, "w") as f:
        f.write("\n".join(manifest_lines(config)) + "\n")


def load_manifest(path) -> ModelConfig:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "model/1":
        raise ValueError(f"{path}: not a model manifest")
    kv = {}
    for line in lines[1:]:
        if not line:
            continue
        key, _, val = line.partition("=")
        kv[key] = val
    unknown = set(kv) - set(_MANIFEST_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown manifest keys {sorted(unknown)}")
    return ModelConfig(
        kind=kv["kind"],
        n_trajectories=int(kv["n_trajectories"]),
        n_waypoints=int(kv["n_waypoints"]),
        d_c=int(kv["d_c"]),
        d_z=int(kv["d_z"]),
        beams=int(kv["beams"]),
        n_scans=int(kv["n_scans"]),
        n_velocities=int(kv["n_velocities"]),
        range_max=float(kv["range_max"]),
        seed=int(kv["seed"]),
    )
