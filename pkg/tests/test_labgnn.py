import numpy as np
import pytest

from labfew import labgnn
from labfew.labgnn import (DualGraphState, GnnConfig, color_layering, init_edges,
                           init_gnn_params, init_nodes, light_gradient, predict,
                           run_generations, similarity, update_color_edges,
                           update_light_edges)
from labfew.labnet import GroupedEmbedding
from labfew.optim import ParamStore
from labfew.tensor import Tensor

import oracles


def _gnn(d=4, g=2, seed=0, dtype=np.float64, randomize_heads=True):
    cfg = GnnConfig(embed_dim=d, generations=g)
    store = ParamStore()
    init_gnn_params(cfg, store, np.random.default_rng(seed), dtype)
    if randomize_heads:
        # the zero-init similarity heads make untrained edges uniform; give
        # them weights so structural tests see non-trivial similarities
        rng = np.random.default_rng(seed + 1)
        for name, t in store.items():
            if ".fc2." in name:
                t.data = rng.normal(0, 0.7, t.data.shape).astype(dtype)
    return cfg, store


def _emb(b, t, d, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    mk = lambda: Tensor(rng.normal(size=(b, t, d)).astype(dtype))  # noqa: E731
    return GroupedEmbedding(e_pe_light=mk(), e_pe_color=mk(),
                            e_ls_light=mk(), e_ls_color=mk())


def test_init_nodes_is_identity():
    emb = _emb(2, 5, 3)
    v_l, v_c = init_nodes(emb)
    assert v_l is emb.e_ls_light and v_c is emb.e_ls_color
    assert np.array_equal(v_l.data, emb.e_ls_light.data)


def test_similarity_identical_rows():
    cfg, store = _gnn(d=3)
    v = Tensor(np.ones((4, 3)))
    s = similarity(v, "labgnn.init.light_sim", store, cfg).data
    off = s[~np.eye(4, dtype=bool)]
    assert np.allclose(off, off[0])
    assert np.array_equal(np.diag(s), np.ones(4))


def test_similarity_symmetric_and_bounded():
    cfg, store = _gnn(d=4)
    v = Tensor(np.random.default_rng(1).normal(size=(6, 4)))
    s = similarity(v, "labgnn.init.color_sim", store, cfg).data
    assert np.max(np.abs(s - s.T)) < 1e-9
    assert s.min() >= 0.0 and s.max() <= 1.0


def test_similarity_matches_loop_oracle():
    cfg, store = _gnn(d=3)
    v = np.random.default_rng(2).normal(size=(1, 4, 3))
    s = similarity(Tensor(v), "labgnn.init.light_sim", store, cfg).data
    expect = oracles.similarity_loops(v, {k: t.data for k, t in store.items()},
                                      "labgnn.init.light_sim", cfg.bn_eps)
    assert np.max(np.abs(s - expect)) < 1e-6


def test_init_edges_shapes_and_diag():
    cfg, store = _gnn(d=4)
    emb = _emb(2, 10, 4, seed=3)
    e_l, e_c = init_edges(emb, store, cfg)
    assert e_l.data.shape == (2, 10, 10) and e_c.data.shape == (2, 10, 10)
    for e in (e_l.data, e_c.data):
        assert np.allclose(e[:, np.eye(10, dtype=bool)], 1.0)


def test_edge_update_multiplicative_identity():
    cfg, store = _gnn(d=3, randomize_heads=False)
    # saturate the head bias: sigmoid(40) rounds to exactly 1.0 in float64
    store["labgnn.gen1.light_sim.fc2.b"].data = np.array([40.0])
    e_prev = Tensor(np.random.default_rng(4).uniform(0.2, 0.9, (1, 4, 4)))
    e_prev.data[:, np.eye(4, dtype=bool)] = 1.0
    v = Tensor(np.random.default_rng(5).normal(size=(1, 4, 3)))
    out = update_light_edges(e_prev, v, 1, store, cfg).data
    assert np.array_equal(out, e_prev.data)


def test_edge_update_absorbing_zero():
    cfg, store = _gnn(d=3)
    e_prev = Tensor(np.eye(4)[None])  # off-diagonal all zero
    v = Tensor(np.random.default_rng(6).normal(size=(1, 4, 3)))
    out = update_color_edges(e_prev, v, 1, store, cfg).data
    assert np.array_equal(out, np.eye(4)[None])


def test_edge_update_matches_scalar_oracle():
    cfg, store = _gnn(d=3)
    rng = np.random.default_rng(7)
    e_prev = rng.uniform(0.1, 1.0, (1, 4, 4))
    e_prev = (e_prev + e_prev.transpose(0, 2, 1)) / 2
    e_prev[:, np.eye(4, dtype=bool)] = 1.0
    v = rng.normal(size=(1, 4, 3))
    out = update_light_edges(Tensor(e_prev), Tensor(v), 2, store, cfg).data
    arrays = {k: t.data for k, t in store.items()}
    expect = oracles._edge_update_loops(e_prev, v, arrays, "labgnn.gen2.light_sim",
                                        cfg.bn_eps)
    assert np.max(np.abs(out - expect)) < 1e-6


def test_color_layering_isolated_nodes():
    cfg, store = _gnn(d=3)
    e = Tensor(np.eye(5)[None])
    v = Tensor(np.random.default_rng(8).normal(size=(1, 5, 3)))
    out = color_layering(e, v, 1, store, cfg).data
    # row-normalized edges collapse to I, so aggregation returns each node
    arrays = {k: t.data for k, t in store.items()}
    expect = oracles._aggregate_loops(np.eye(5)[None], v.data, arrays,
                                      "labgnn.gen1.color_layering")
    assert np.max(np.abs(out - expect)) < 1e-6


def test_aggregator_permutation_equivariance():
    cfg, store = _gnn(d=4)
    rng = np.random.default_rng(9)
    t = 6
    e = rng.uniform(0.1, 1.0, (1, t, t))
    e = (e + e.transpose(0, 2, 1)) / 2
    e[:, np.eye(t, dtype=bool)] = 1.0
    v = rng.normal(size=(1, t, 4))
    perm = rng.permutation(t)
    out = light_gradient(Tensor(e), Tensor(v), 1, store, cfg).data
    out_p = light_gradient(Tensor(e[:, perm][:, :, perm]), Tensor(v[:, perm]),
                           1, store, cfg).data
    assert np.max(np.abs(out[:, perm] - out_p)) < 1e-10


def test_run_generations_history_and_invariants():
    cfg, store = _gnn(d=4, g=3, seed=10)
    emb = _emb(2, 5, 4, seed=11)
    history = run_generations(emb, 3, store, cfg)
    assert len(history) == 4
    prev = None
    for gen, state in enumerate(history):
        assert state.generation == gen
        for e in (state.e_light.data, state.e_color.data):
            assert np.max(np.abs(e - e.transpose(0, 2, 1))) < 1e-9
            assert np.allclose(e[:, np.eye(5, dtype=bool)], 1.0)
            assert e.min() >= 0.0 and e.max() <= 1.0
        if prev is not None:
            assert np.all(state.e_light.data <= prev.e_light.data + 1e-12)
            assert np.all(state.e_color.data <= prev.e_color.data + 1e-12)
        prev = state


def test_trajectory_matches_scalar_oracle():
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        b = int(rng.integers(1, 3))
        t = int(rng.integers(2, 6))
        d = int(rng.integers(2, 5))
        g = int(rng.integers(1, 4))
        cfg, store = _gnn(d=d, g=g, seed=200 + seed)
        emb = _emb(b, t, d, seed=300 + seed)
        history = run_generations(emb, g, store, cfg)
        arrays = {k: t_.data for k, t_ in store.items()}
        expect = oracles.dual_graph_loops(emb.e_pe_light.data, emb.e_pe_color.data,
                                          emb.e_ls_light.data, emb.e_ls_color.data,
                                          arrays, g, cfg.bn_eps)
        for state, (v_l, v_c, e_l, e_c) in zip(history, expect):
            assert np.max(np.abs(state.v_light.data - v_l)) < 1e-6
            assert np.max(np.abs(state.v_color.data - v_c)) < 1e-6
            assert np.max(np.abs(state.e_light.data - e_l)) < 1e-6
            assert np.max(np.abs(state.e_color.data - e_c)) < 1e-6


def test_predict_perfect_edges():
    k, n = 3, 2
    nk = k * n
    labels = np.array([[0, 0, 1, 1, 2, 2]])
    e = np.zeros((1, nk + 3, nk + 3))
    for q, cls in enumerate([2, 0, 1]):
        for j in range(nk):
            e[0, nk + q, j] = 1.0 if labels[0, j] == cls else 0.0
    scores, preds = predict(e, labels, k)
    assert np.array_equal(preds[0], [2, 0, 1])
    assert np.allclose(scores[0].max(axis=1), n)


def test_predict_tie_goes_to_class_zero():
    labels = np.array([[0, 1, 2]])
    e = np.full((1, 5, 5), 0.5)
    _, preds = predict(e, labels, 3)
    assert np.array_equal(preds[0], [0, 0])


def test_predict_matches_loop_oracle():
    rng = np.random.default_rng(12)
    k, n, q = 5, 1, 3
    nk, t = k * n, k * (n + q)
    labels = np.tile(np.arange(k), 1 + q).reshape(1, t)
    e = rng.uniform(0, 1, (1, t, t))
    scores, preds = predict(e, labels[:, :nk], k)
    escores, epreds = oracles.predict_loops(e, labels, nk, k)
    assert np.allclose(scores, escores)
    assert np.array_equal(preds, epreds)


def test_dump_trace_json_lines(tmp_path):
    import io
    import json

    cfg, store = _gnn(d=3, g=2, seed=13)
    emb = _emb(1, 4, 3, seed=14)
    history = run_generations(emb, 2, store, cfg)
    buf = io.StringIO()
    labgnn.dump_trace(history, buf)
    lines = [json.loads(l) for l in buf.getvalue().splitlines()]
    assert [l["generation"] for l in lines] == [0, 1, 2]
    for l in lines:
        assert np.asarray(l["e_light"]).shape == (1, 4, 4)
        assert np.asarray(l["e_color"]).shape == (1, 4, 4)
    big = _emb(1, 11, 3, seed=15)
    hist_big = run_generations(big, 1, _gnn(d=3, g=1, seed=16)[1], GnnConfig(embed_dim=3, generations=1))
    with pytest.raises(ValueError, match="T <= 10"):
        labgnn.dump_trace(hist_big, io.StringIO())


def test_run_generations_needs_positive_g():
    cfg, store = _gnn()
    with pytest.raises(ValueError, match="generation"):
        run_generations(_emb(1, 3, 4), 0, store, cfg)
