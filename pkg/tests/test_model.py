"""Model-stage contracts: encoder heads, affine latent maps, attention,
decoder prefix sums, forward determinism, confidence propagation, variant
wiring, and manifest round trips."""

import numpy as np
import pytest

from mtglab import tensor as T
from mtglab.tensor import Tensor
from mtglab.env import Observation
from mtglab.model import (
    ModelConfig,
    TrajectoryModel,
    baseline_variant,
    manifest_lines,
    save_manifest,
    load_manifest,
    DET_GUARD,
    DET_RIDGE,
)

TINY = dict(n_trajectories=2, n_waypoints=4, d_c=8, d_z=4, beams=8)


def tiny_model(kind="mtg", seed=3, **kw):
    cfg = ModelConfig(kind=kind, seed=seed, **{**TINY, **kw})
    return TrajectoryModel(cfg)


def tiny_obs(seed=0, beams=8):
    rng = np.random.default_rng(seed)
    return Observation(
        scans=rng.uniform(0.5, 19.5, (3, beams)),
        velocities=rng.normal(0.8, 0.2, (10, 2)),
        range_max=20.0,
    )


# -- encoder ---------------------------------------------------------------


def test_encode_zeroed_heads_give_standard_normal_stats():
    m = tiny_model()
    for nm in ("head.mu.l0", "head.mu.l1", "head.logvar.l0", "head.logvar.l1"):
        m.params[f"{nm}.w"].data[:] = 0.0
        m.params[f"{nm}.b"].data[:] = 0.0
    _, mu, sigma = m.encode(tiny_obs())
    assert np.array_equal(mu, np.zeros(4))
    assert np.array_equal(sigma, np.ones(4))


def test_encode_deterministic_for_identical_observations():
    m = tiny_model()
    obs = tiny_obs()
    c1, mu1, s1 = m.encode(obs)
    c2, mu2, s2 = m.encode(obs)
    assert np.array_equal(c1, c2)
    assert np.array_equal(mu1, mu2)
    assert np.array_equal(s1, s2)


def test_encode_beam_perturbation_changes_embedding_and_has_gradient():
    m = tiny_model()
    obs = tiny_obs()
    c1, _, _ = m.encode(obs)
    bumped = obs.scans.copy()
    bumped[1, 3] += 0.5
    c2, _, _ = m.encode(Observation(bumped, obs.velocities, obs.range_max))
    assert not np.array_equal(c1, c2)
    # gradient probe: d sum(c) / d scan-layer weights is nonzero
    c, _, _ = m.encode_tensors(obs.scans, obs.velocities)
    m.params.zero_grad()
    c.sum().backward()
    assert np.abs(m.params["scan.l0.w"].grad).max() > 0


def test_encode_rejects_wrong_shapes():
    m = tiny_model()
    obs = tiny_obs()
    with pytest.raises(ValueError, match="scans"):
        m.encode(Observation(np.zeros((3, 5)), obs.velocities, 20.0))
    with pytest.raises(ValueError, match="velocities"):
        m.encode(Observation(obs.scans, np.zeros((4, 2)), 20.0))


# -- latent maps -------------------------------------------------------------


def test_transform_latents_matches_manual_affine():
    m = tiny_model()
    obs = tiny_obs()
    c, mu, _ = m.encode_tensors(obs.scans, obs.velocities)
    z = mu
    zk, a_list, b_list = m.transform_latents(z, c)
    dz = 4
    raw_a = m.params["map.a.w"].data @ c.data + m.params["map.a.b"].data
    raw_b = m.params["map.b.w"].data @ c.data + m.params["map.b.b"].data
    for k in range(2):
        a = np.eye(dz) + raw_a[k * dz * dz:(k + 1) * dz * dz].reshape(dz, dz)
        b = raw_b[k * dz:(k + 1) * dz]
        np.testing.assert_allclose(a_list[k].data, a, rtol=0, atol=0)
        np.testing.assert_allclose(zk[k].data, a @ z.data + b, rtol=0, atol=1e-15)


def test_transform_latents_det_guard_adds_ridge():
    m = tiny_model()
    dz = 4
    # craft map output so A_0 = I - I = 0 (singular) while A_1 stays clean
    m.params["map.a.w"].data[:] = 0.0
    bias = np.zeros(2 * dz * dz)
    bias[:dz * dz] = (-np.eye(dz)).reshape(-1)
    m.params["map.a.b"].data[:] = bias
    obs = tiny_obs()
    c, mu, _ = m.encode_tensors(obs.scans, obs.velocities)
    before = m.det_guard_hits
    _, a_list, _ = m.transform_latents(mu, c)
    assert m.det_guard_hits == before + 1
    np.testing.assert_array_equal(a_list[0].data, DET_RIDGE * np.eye(dz))
    assert abs(np.linalg.det(a_list[0].data)) > 0
    assert abs(np.linalg.det(a_list[1].data)) > DET_GUARD


def test_transformed_covariance_against_monte_carlo():
    # empirical covariance of A (mu + sigma*eps) + b over 10^4 draws should
    # match the propagated form A diag(sigma^2) A^T within 5% Frobenius
    m = tiny_model(seed=11)
    obs = tiny_obs(seed=2)
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(5))
    rep = m.confidence(gs)
    rng = np.random.default_rng(99)
    eps = rng.standard_normal((10_000, 4))
    zs = gs.mu + gs.sigma * eps
    for k in range(2):
        mapped = zs @ gs.transforms[k].T + gs.offsets[k]
        emp = np.cov(mapped, rowvar=False)
        ana = rep.covariances[k]
        rel = np.linalg.norm(emp - ana) / np.linalg.norm(ana)
        assert rel < 0.05, f"map {k}: rel Frobenius err {rel}"


# -- attention ---------------------------------------------------------------


def test_attend_single_latent_equals_value_projection():
    m = tiny_model(n_trajectories=1)
    z = Tensor(np.array([0.3, -1.2, 0.7, 0.05]))
    out = m.attend([z])
    expect = z.data @ m.params["attn.v"].data
    np.testing.assert_allclose(out.data[0], expect, rtol=0, atol=1e-15)


def test_attend_permutation_equivariant():
    m = tiny_model(n_trajectories=3)
    rng = np.random.default_rng(4)
    zs = [Tensor(rng.normal(size=4)) for _ in range(3)]
    out = m.attend(zs).data
    perm = [2, 0, 1]
    out_p = m.attend([zs[i] for i in perm]).data
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-12)


def test_attend_identical_latents_give_identical_rows():
    m = tiny_model(n_trajectories=3)
    z = Tensor(np.array([0.5, 0.1, -0.4, 1.0]))
    out = m.attend([z, z, z]).data
    assert np.array_equal(out[0], out[1])
    assert np.array_equal(out[1], out[2])


# -- decoder -----------------------------------------------------------------


def test_decode_waypoints_are_exact_prefix_sums():
    m = tiny_model()
    rng = np.random.default_rng(8)
    z = Tensor(rng.normal(size=4))
    c_i = Tensor(rng.normal(size=4 + 8))
    wp, deltas = m.decode(z, c_i, decoder=0, return_deltas=True)
    assert wp.data.shape == (4, 2)
    np.testing.assert_array_equal(wp.data, np.cumsum(deltas.data, axis=0))


def test_decode_distinct_latents_distinct_paths():
    m = tiny_model()
    rng = np.random.default_rng(8)
    c_i = Tensor(rng.normal(size=12))
    w1 = m.decode(Tensor(rng.normal(size=4)), c_i).data
    w2 = m.decode(Tensor(rng.normal(size=4)), c_i).data
    assert not np.allclose(w1, w2)


# -- forward -----------------------------------------------------------------


def test_forward_mean_mode_bit_exact_repeatable():
    m = tiny_model()
    obs = tiny_obs()
    a = m.forward(obs, mode="mean")
    b = m.forward(obs, mode="mean")
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.waypoints, tb.waypoints)


def test_forward_sample_mode_seeded_reproducible():
    m = tiny_model()
    obs = tiny_obs()
    a = m.forward(obs, mode="sample", rng=np.random.default_rng(21))
    b = m.forward(obs, mode="sample", rng=np.random.default_rng(21))
    c = m.forward(obs, mode="sample", rng=np.random.default_rng(22))
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.waypoints, tb.waypoints)
    assert not np.array_equal(a.trajectories[0].waypoints, c.trajectories[0].waypoints)


def test_forward_shapes_and_mode_errors():
    m = tiny_model()
    obs = tiny_obs()
    gs = m.forward(obs, mode="mean")
    assert len(gs) == 2
    assert gs.stacked().shape == (2, 4, 2)
    with pytest.raises(ValueError, match="mode"):
        m.forward(obs, mode="decode")
    with pytest.raises(ValueError, match="generator"):
        m.forward(obs, mode="sample")


# -- confidence ---------------------------------------------------------------


def test_confidence_identity_maps_reduce_to_diagonal():
    m = tiny_model(kind="cvae")
    obs = tiny_obs()
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(2))
    rep = m.confidence(gs)
    for k in range(2):
        np.testing.assert_array_equal(rep.covariances[k], np.diag(gs.sigma ** 2))


def test_confidence_psd_and_limits():
    m = tiny_model(seed=17)
    obs = tiny_obs(seed=5)
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(3))
    rep = m.confidence(gs)
    for cov in rep.covariances:
        np.testing.assert_allclose(cov, cov.T, rtol=0, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10
    near_zero = m.confidence(gs, variance_scale=1e-14)
    np.testing.assert_allclose(near_zero.confidences, 1.0, atol=1e-9)


def test_confidence_monotone_in_variance_scale():
    m = tiny_model(seed=17)
    obs = tiny_obs(seed=5)
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(3))
    scales = [0.1, 0.3, 1.0, 3.0, 10.0]
    confs = np.array([m.confidence(gs, variance_scale=s).confidences for s in scales])
    assert np.all(np.diff(confs, axis=0) < 0)


# -- variants -----------------------------------------------------------------


def test_unknown_variant_kind_rejected():
    with pytest.raises(ValueError, match="kind"):
        baseline_variant("vae", **TINY)


def test_ablation_never_attends_full_model_does():
    obs = tiny_obs()
    m1 = tiny_model(kind="mtg1")
    m1.forward(obs, mode="mean")
    m1.forward(obs, mode="sample", rng=np.random.default_rng(0))
    assert m1.attend_calls == 0
    m = tiny_model(kind="mtg")
    m.forward(obs, mode="mean")
    assert m.attend_calls == 1


def test_ablation_parameter_inventory_matches_full_model():
    a = tiny_model(kind="mtg").params.state_arrays()
    b = tiny_model(kind="mtg1").params.state_arrays()
    assert sorted(a) == sorted(b)


def test_resampling_variant_draws_distinct_latents():
    m = tiny_model(kind="cvae")
    obs = tiny_obs()
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(9))
    assert not np.array_equal(gs.z[0], gs.z[1])
    np.testing.assert_array_equal(gs.transforms[0], np.eye(4))
    # mean mode collapses every sample onto the latent mean
    gm = m.forward(obs, mode="mean")
    assert np.array_equal(gm.z[0], gm.z[1])


def test_diversity_variant_no_attention_but_transforms():
    m = tiny_model(kind="dlow")
    obs = tiny_obs()
    gs = m.forward(obs, mode="sample", rng=np.random.default_rng(9))
    assert m.attend_calls == 0
    assert not np.array_equal(gs.transforms[0], np.eye(4))


# -- persistence ----------------------------------------------------------------


def test_params_checkpoint_round_trip_bitwise(tmp_path):
    m = tiny_model(seed=5)
    obs = tiny_obs()
    want = m.forward(obs, mode="mean").stacked()
    p = tmp_path / "weights.tnsr"
    m.save_params(p)
    other = tiny_model(seed=99)
    assert not np.array_equal(other.forward(obs, mode="mean").stacked(), want)
    other.load_params(p)
    np.testing.assert_array_equal(other.forward(obs, mode="mean").stacked(), want)


def test_manifest_round_trip(tmp_path):
    cfg = ModelConfig(kind="dlow", seed=7, **TINY)
    p = tmp_path / "model.manifest"
    save_manifest(p, cfg)
    assert load_manifest(p) == cfg


def test_manifest_rejects_garbage(tmp_path):
    p = tmp_path / "bad.manifest"
    p.write_text("nonsense\nkind=mtg\n")
    with pytest.raises(ValueError, match="manifest"):
        load_manifest(p)
    p.write_text("model/1\nkind=mtg\nwhat=ever\n")
    with pytest.raises(ValueError, match="unknown"):
        load_manifest(p)


def test_manifests_of_full_and_ablation_differ_only_in_stage_keys():
    full = manifest_lines(ModelConfig(kind="mtg", **TINY))
    abl = manifest_lines(ModelConfig(kind="mtg1", **TINY))
    assert len(full) == len(abl)
    diff_keys = set()
    for la, lb in zip(full, abl):
        if la != lb:
            diff_keys.add(la.partition("=")[0])
    assert diff_keys == {"kind", "attention"}
