import dataclasses

import numpy as np
import pytest
import torch

from conftest import constant_velocity_track, make_straight_scenario
from lhpf.encoder import (
    AgentHistoryEncoder,
    EgoStateEncoder,
    EncoderConfig,
    ObstacleEncoder,
    PolylineEncoder,
    SceneEncoder,
    bundle_to_tensors,
)
from lhpf.features import to_ego_frame
from lhpf.generate import generate_scenario
from lhpf.scenario import slice_window


def small_cfg(**kw):
    base = dict(hidden_dim=32, num_encoder_layers=2, num_heads=4, dropout=0.0,
                sde_dropout=0.5, fourier_bands=8)
    base.update(kw)
    return EncoderConfig(**base)


def scene_bundle(kind="dense_traffic", seed=5, t_now=40):
    return to_ego_frame(slice_window(generate_scenario(kind, seed), t_now))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(hidden_dim=30, num_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(dropout=1.0)


def test_agent_encoder_shape():
    enc = AgentHistoryEncoder(8, 128, 8)
    feats = torch.randn(2, 19, 8)
    valid = torch.ones(2, 20, dtype=torch.bool)
    out, tok_valid = enc(feats, valid)
    assert out.shape == (2, 128)
    assert tok_valid.all()


def test_all_invalid_agent_maps_to_null_embedding():
    enc = AgentHistoryEncoder(8, 32, 4)
    enc.eval()
    feats = torch.randn(3, 19, 8)
    valid = torch.ones(3, 20, dtype=torch.bool)
    valid[1] = False
    feats[1] = 0.0
    out, tok_valid = enc(feats, valid)
    assert not tok_valid[1]
    torch.testing.assert_close(out[1], enc.null_embedding, rtol=0, atol=0)


def test_duplicated_tracks_encode_identically():
    enc = AgentHistoryEncoder(8, 32, 4)
    enc.eval()
    feats = torch.randn(3, 19, 8)
    feats[2] = feats[0]
    valid = torch.ones(3, 20, dtype=torch.bool)
    out, _ = enc(feats, valid)
    torch.testing.assert_close(out[0], out[2])


def test_sde_eval_deterministic():
    enc = EgoStateEncoder(32, 4, sde_dropout=0.5)
    enc.eval()
    hist = torch.randn(20, 5)
    torch.testing.assert_close(enc(hist), enc(hist))


def test_sde_zero_dropout_matches_eval():
    enc = EgoStateEncoder(32, 4, sde_dropout=0.0)
    hist = torch.randn(20, 5)
    enc.train()
    out_train = enc(hist, train_mode=True)
    enc.eval()
    torch.testing.assert_close(out_train, enc(hist))


def test_sde_full_dropout_hides_kinematics():
    enc = EgoStateEncoder(32, 4, sde_dropout=1.0)
    enc.train()
    hist_a = torch.randn(20, 5)
    hist_b = torch.randn(20, 5)
    # same position frame: current pose pinned at the origin
    hist_a[-1, 0:3] = 0.0
    hist_b[-1, 0:3] = 0.0
    torch.testing.assert_close(enc(hist_a, train_mode=True), enc(hist_b, train_mode=True))


def test_pointnet_permutation_invariance():
    enc = PolylineEncoder(8, 32)
    enc.eval()
    feats = torch.randn(3, 20, 8)
    perm = torch.randperm(20)
    torch.testing.assert_close(enc(feats), enc(feats[:, perm, :]))


def test_empty_obstacles_and_polylines():
    assert ObstacleEncoder(32)(torch.zeros(0, 5)).shape == (0, 32)
    assert PolylineEncoder(8, 32)(torch.zeros(0, 20, 8)).shape == (0, 32)


def test_map_embedding_shape():
    enc = PolylineEncoder(8, 128)
    assert enc(torch.randn(64, 20, 8)).shape == (64, 128)


def test_scene_token_order_and_shapes():
    bundle = scene_bundle()
    model = SceneEncoder(small_cfg())
    model.eval()
    enc = model(bundle_to_tensors(bundle, torch.float32))
    n_tok = 1 + bundle.num_agents + bundle.num_obstacles + bundle.num_polylines
    assert enc.tokens.shape == (n_tok, 32)
    # concat order: ego, agents, obstacles, map
    attrs = enc.token_attrs.numpy()
    assert attrs[0] == 0
    assert (attrs[1 : 1 + bundle.num_agents] == 1).all()
    assert (attrs[1 + bundle.num_agents : 1 + bundle.num_agents + bundle.num_obstacles] == 2).all()
    assert (attrs[1 + bundle.num_agents + bundle.num_obstacles :] == 3).all()
    assert torch.isfinite(enc.tokens).all()


def _permute_agents(bundle, perm):
    n_a = bundle.num_agents
    idx = np.concatenate([[0], 1 + np.asarray(perm)])
    token_idx = np.concatenate(
        [idx, np.arange(1 + n_a, len(bundle.token_attrs))]
    )
    return dataclasses.replace(
        bundle,
        agent_features=bundle.agent_features[idx],
        agent_valid=bundle.agent_valid[idx],
        token_positions=bundle.token_positions[token_idx],
        token_attrs=bundle.token_attrs[token_idx],
    )


def test_agent_block_permutation_equivariance():
    bundle = scene_bundle("dense_traffic", 3)
    assert bundle.num_agents >= 3
    model = SceneEncoder(small_cfg())
    model.eval()
    out = model(bundle_to_tensors(bundle, torch.float32)).tokens
    perm = np.array([2, 0, 1] + list(range(3, bundle.num_agents)))
    out_p = model(bundle_to_tensors(_permute_agents(bundle, perm), torch.float32)).tokens
    n_a = bundle.num_agents
    torch.testing.assert_close(out_p[0], out[0], rtol=0, atol=1e-5)
    torch.testing.assert_close(out_p[1 : 1 + n_a], out[1:1 + n_a][perm], rtol=0, atol=1e-5)
    torch.testing.assert_close(out_p[1 + n_a :], out[1 + n_a :], rtol=0, atol=1e-5)


def test_masked_token_equals_absent_token():
    agent_far = constant_velocity_track((30.0, 1.0), (5.0, 0.0))
    agent_near = constant_velocity_track((12.0, -1.0), (8.0, 0.0))
    s_two = make_straight_scenario(agents=[agent_near, agent_far])
    s_one = make_straight_scenario(agents=[agent_near])
    b_two = to_ego_frame(slice_window(s_two, 40))
    b_one = to_ego_frame(slice_window(s_one, 40))
    assert b_two.num_agents == 2 and b_one.num_agents == 1

    # invalidate the far agent rather than deleting it
    b_two.agent_valid[2] = False
    b_two.agent_features[2] = 0.0

    model = SceneEncoder(small_cfg())
    model.eval()
    out_masked = model(bundle_to_tensors(b_two, torch.float32)).tokens
    out_absent = model(bundle_to_tensors(b_one, torch.float32)).tokens
    keep = np.concatenate([[0, 1], np.arange(3, len(b_two.token_attrs))])
    torch.testing.assert_close(out_masked[keep], out_absent, rtol=0, atol=1e-5)


def test_gradients_match_finite_differences():
    bundle = scene_bundle("lane_change", 2, 60)
    cfg = small_cfg(hidden_dim=16, num_encoder_layers=1, num_heads=2, fourier_bands=4)
    model = SceneEncoder(cfg).double()
    model.eval()

    tensors = bundle_to_tensors(bundle, torch.float64)
    probe = torch.randn(
        1 + bundle.num_agents + bundle.num_obstacles + bundle.num_polylines, 16,
        dtype=torch.float64,
    )

    def scalar(agent_feats):
        t = dict(tensors)
        t["agent_features"] = agent_feats
        return (model(t).tokens * probe).sum()

    # jitter off max-pool ties (bbox channels repeat along time, so the exact
    # input sits on a kink of the temporal max)
    x = tensors["agent_features"].clone()
    x += 0.001 * torch.randn_like(x)
    x.requires_grad_(True)
    scalar(x).backward()
    grad = x.grad.clone()

    rng = np.random.default_rng(1)
    eps = 1e-6
    for _ in range(8):
        i = tuple(rng.integers(0, s) for s in x.shape)
        xp = x.detach().clone()
        xm = x.detach().clone()
        xp[i] += eps
        xm[i] -= eps
        fd = (scalar(xp) - scalar(xm)).item() / (2 * eps)
        if abs(fd) < 1e-10 and abs(grad[i].item()) < 1e-10:
            continue
        rel = abs(fd - grad[i].item()) / max(abs(fd), abs(grad[i].item()))
        assert rel <= 1e-3, (i, fd, grad[i].item())
