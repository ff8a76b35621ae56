import numpy as np
import pytest

from labfew import nnops
from labfew.labnet import (GroupedEmbedding, LabNetConfig, embed_last,
                           embed_penultimate, encoder_forward, init_labnet_params,
                           lab_block_forward)
from labfew.optim import ParamStore
from labfew.tensor import Tensor

import oracles


def _model(h=4, d=16, seed=0, dtype=np.float32):
    cfg = LabNetConfig(hidden_h=h, embed_dim=d)
    store = ParamStore()
    init_labnet_params(cfg, store, np.random.default_rng(seed), dtype)
    return cfg, store


def test_parameter_names_match_contract():
    cfg, store = _model()
    names = set(store.names())
    for i in (1, 2, 3, 4):
        for leaf in ("conv.w", "conv.b", "bn.gamma", "bn.beta"):
            assert f"labnet.lb{i}.{leaf}" in names
    for tier in ("pe", "ls"):
        for branch in ("light", "color"):
            assert f"labnet.fc_{tier}_{branch}.w" in names
            assert f"labnet.fc_{tier}_{branch}.b" in names
    assert len(names) == 4 * 4 + 8


def test_block1_shape_with_default_width():
    # H=96: 4 input channels -> 192 at half resolution
    cfg, store = _model(h=96, d=8, seed=1)
    x = Tensor(np.random.default_rng(0).random((4, 4, 84, 84)).astype(np.float32))
    out = lab_block_forward(x, 1, store, cfg)
    assert out.data.shape == (4, 192, 42, 42)


def test_block_channel_plan_enforced():
    cfg, store = _model()
    with pytest.raises(ValueError, match="lb2 expects"):
        lab_block_forward(Tensor(np.zeros((2, 4, 16, 16), np.float32)), 2, store, cfg)


def test_zero_input_zero_beta_gives_zero():
    cfg, store = _model()
    x = Tensor(np.zeros((4, 4, 16, 16), np.float32))
    out = lab_block_forward(x, 1, store, cfg)
    assert np.array_equal(out.data, np.zeros_like(out.data))


def test_embedding_shapes():
    cfg, store = _model(h=2, d=12)
    llab = np.random.default_rng(1).random((2, 5, 4, 32, 32)).astype(np.float32)
    emb = encoder_forward(llab, store, cfg)
    for arr in (emb.e_pe_light, emb.e_pe_color, emb.e_ls_light, emb.e_ls_color):
        assert arr.data.shape == (2, 5, 12)
        assert np.isfinite(arr.data).all()


def test_embedding_shapes_default_dims():
    # full-size contract: [2,10,4,84,84] -> four [2,10,128] arrays at H=96
    from labfew.tensor import no_grad

    cfg, store = _model(h=96, d=128, seed=8)
    llab = np.random.default_rng(9).random((2, 10, 4, 84, 84)).astype(np.float32)
    with no_grad():
        emb = encoder_forward(llab, store, cfg)
    for arr in (emb.e_pe_light, emb.e_pe_color, emb.e_ls_light, emb.e_ls_color):
        assert arr.data.shape == (2, 10, 128)


def test_embed_tiers_match_encoder_forward():
    cfg, store = _model(h=2, d=6)
    llab = np.random.default_rng(2).random((1, 4, 4, 16, 16)).astype(np.float32)
    emb = encoder_forward(llab, store, cfg)
    pe_l, pe_c = embed_penultimate(llab, store, cfg)
    ls_l, ls_c = embed_last(llab, store, cfg)
    assert np.array_equal(pe_l.data, emb.e_pe_light.data)
    assert np.array_equal(pe_c.data, emb.e_pe_color.data)
    assert np.array_equal(ls_l.data, emb.e_ls_light.data)
    assert np.array_equal(ls_c.data, emb.e_ls_color.data)


def test_duplicate_images_embed_identically():
    cfg, store = _model(h=2, d=8)
    rng = np.random.default_rng(3)
    llab = rng.random((1, 6, 4, 16, 16)).astype(np.float32)
    llab[0, 4] = llab[0, 1]
    emb = encoder_forward(llab, store, cfg)
    for arr in (emb.e_pe_light, emb.e_pe_color, emb.e_ls_light, emb.e_ls_color):
        assert np.array_equal(arr.data[0, 4], arr.data[0, 1])


def test_group_isolation_bitwise():
    cfg, store = _model(h=2, d=8)
    rng = np.random.default_rng(4)
    llab = rng.random((1, 4, 4, 16, 16)).astype(np.float32)
    base = encoder_forward(llab, store, cfg)
    perturbed = llab.copy()
    perturbed[:, :, 2:] += rng.random((1, 4, 2, 16, 16)).astype(np.float32) * 0.1
    after = encoder_forward(perturbed, store, cfg)
    assert np.array_equal(base.e_pe_light.data, after.e_pe_light.data)
    assert np.array_equal(base.e_ls_light.data, after.e_ls_light.data)
    assert not np.array_equal(base.e_pe_color.data, after.e_pe_color.data)

    perturbed_l = llab.copy()
    perturbed_l[:, :, :2] += rng.random((1, 4, 2, 16, 16)).astype(np.float32) * 0.1
    after_l = encoder_forward(perturbed_l, store, cfg)
    assert np.array_equal(base.e_pe_color.data, after_l.e_pe_color.data)
    assert np.array_equal(base.e_ls_color.data, after_l.e_ls_color.data)


def test_group_isolation_autodiff_zero():
    cfg, store = _model(h=2, d=4)
    rng = np.random.default_rng(5)
    llab = rng.random((1, 4, 4, 16, 16)).astype(np.float32)
    x = Tensor(llab.reshape(4, 4, 16, 16), requires_grad=True)
    h = x
    for i in (1, 2, 3):
        h = lab_block_forward(h, i, store, cfg)
    pooled = nnops.global_max_pool(h)
    light = nnops.linear(pooled[:, : cfg.plan[-1]], store["labnet.fc_pe_light.w"],
                         store["labnet.fc_pe_light.b"])
    light.sum().backward()
    assert np.array_equal(x.grad[:, 2:], np.zeros_like(x.grad[:, 2:]))
    assert np.abs(x.grad[:, :2]).sum() > 0


def _encoder_loops(llab, store, cfg):
    """Scalar-path oracle: compose the per-op loop oracles for both tiers."""
    arrays = {k: v.data.astype(np.float64) for k, v in store.items()}
    bt = llab.shape[0] * llab.shape[1]
    x = llab.reshape((bt,) + llab.shape[2:]).astype(np.float64)
    for i in (1, 2, 3):
        x = _block_loops(x, arrays, i, cfg)
    pe = _tier_loops(x, arrays, "pe", cfg)
    x = _block_loops(x, arrays, 4, cfg)
    ls = _tier_loops(x, arrays, "ls", cfg)
    return pe, ls


def _block_loops(x, arrays, i, cfg):
    out = oracles.conv2d_loops(x, arrays[f"labnet.lb{i}.conv.w"],
                               arrays[f"labnet.lb{i}.conv.b"], groups=2,
                               stride=1, padding=1)
    out = oracles.batchnorm_loops(out, arrays[f"labnet.lb{i}.bn.gamma"],
                                  arrays[f"labnet.lb{i}.bn.beta"], cfg.bn_eps)
    out = np.maximum(out, 0.0)
    return oracles.maxpool_loops(out, 2, 2)


def _tier_loops(x, arrays, tier, cfg):
    n, c = x.shape[0], x.shape[1]
    pooled = np.array([[x[ni, ci].max() for ci in range(c)] for ni in range(n)])
    half = cfg.plan[-1]
    light = oracles.linear_loops(pooled[:, :half], arrays[f"labnet.fc_{tier}_light.w"],
                                 arrays[f"labnet.fc_{tier}_light.b"])
    color = oracles.linear_loops(pooled[:, half:], arrays[f"labnet.fc_{tier}_color.w"],
                                 arrays[f"labnet.fc_{tier}_color.b"])
    return light, color


def test_encoder_matches_scalar_pipeline_oracle():
    cfg = LabNetConfig(hidden_h=2, embed_dim=5)
    store = ParamStore()
    init_labnet_params(cfg, store, np.random.default_rng(6), np.float64)
    llab = np.random.default_rng(7).random((1, 3, 4, 16, 16))
    emb = encoder_forward(llab, store, cfg)
    (pe_l, pe_c), (ls_l, ls_c) = _encoder_loops(llab, store, cfg)
    assert np.max(np.abs(emb.e_pe_light.data[0] - pe_l)) < 1e-5
    assert np.max(np.abs(emb.e_pe_color.data[0] - pe_c)) < 1e-5
    assert np.max(np.abs(emb.e_ls_light.data[0] - ls_l)) < 1e-5
    assert np.max(np.abs(emb.e_ls_color.data[0] - ls_c)) < 1e-5
