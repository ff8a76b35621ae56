"""Coupled light/color graph classifier.

Both subgraphs hold one node per image (initialized from the last encoder
tier) and dense edge matrices in [0,1] with unit diagonal (initialized by a
pairwise similarity net over the penultimate tier).  Each generation runs the
cycle light edges -> color nodes -> color edges -> light nodes:

  * edge updates multiply a fresh similarity of the current nodes onto the
    previous edges (then reset the diagonal to 1);
  * node updates row-normalize the cross edges with the self-loop restored
    (mask by J - I, add I), aggregate the other graph's previous nodes, and
    mix through a two-layer MLP on [aggregated ; previous].

Every generation owns its own similarity and aggregator parameters, so the
loss gate can cut late generations out of training entirely.  Predictions
read the final light edges against support labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnops
from .optim import ParamStore
from .tensor import Tensor, concatenate, relu, reshape, sigmoid, tabs

_SIM_KEYS = ("fc1.w", "fc1.b", "bn.gamma", "bn.beta", "fc2.w", "fc2.b")
_AGG_KEYS = ("fc1.w", "fc1.b", "fc2.w", "fc2.b")


@dataclass
class GnnConfig:
    embed_dim: int = 128
    generations: int = 5
    bn_eps: float = 1e-5


@dataclass
class DualGraphState:
    """Nodes [B,T,d] and edges [B,T,T] of both subgraphs at one generation."""

    v_light: Tensor
    v_color: Tensor
    e_light: Tensor
    e_color: Tensor
    generation: int


def _init_similarity(prefix: str, d: int, store: ParamStore,
                     rng: np.random.Generator, dtype) -> None:
    lim = 1.0 / np.sqrt(d)
    store.add(f"{prefix}.fc1.w", rng.uniform(-lim, lim, size=(d, d)).astype(dtype))
    store.add(f"{prefix}.fc1.b", np.zeros(d, dtype=dtype))
    store.add(f"{prefix}.bn.gamma", np.ones(d, dtype=dtype))
    store.add(f"{prefix}.bn.beta", np.zeros(d, dtype=dtype))
    # zero head: every similarity starts at sigmoid(0)=0.5, so an untrained
    # model scores all supports equally and predicts at chance
    store.add(f"{prefix}.fc2.w", np.zeros((1, d), dtype=dtype))
    store.add(f"{prefix}.fc2.b", np.zeros(1, dtype=dtype))


def _init_aggregator(prefix: str, d: int, store: ParamStore,
                     rng: np.random.Generator, dtype) -> None:
    lim1 = 1.0 / np.sqrt(2 * d)
    lim2 = 1.0 / np.sqrt(d)
    store.add(f"{prefix}.fc1.w", rng.uniform(-lim1, lim1, size=(d, 2 * d)).astype(dtype))
    store.add(f"{prefix}.fc1.b", np.zeros(d, dtype=dtype))
    store.add(f"{prefix}.fc2.w", rng.uniform(-lim2, lim2, size=(d, d)).astype(dtype))
    store.add(f"{prefix}.fc2.b", np.zeros(d, dtype=dtype))


def init_gnn_params(cfg: GnnConfig, store: ParamStore,
                    rng: np.random.Generator, dtype=np.float32) -> None:
    d = cfg.embed_dim
    _init_similarity("labgnn.init.light_sim", d, store, rng, dtype)
    _init_similarity("labgnn.init.color_sim", d, store, rng, dtype)
    for g in range(1, cfg.generations + 1):
        _init_similarity(f"labgnn.gen{g}.light_sim", d, store, rng, dtype)
        _init_similarity(f"labgnn.gen{g}.color_sim", d, store, rng, dtype)
        _init_aggregator(f"labgnn.gen{g}.color_layering", d, store, rng, dtype)
        _init_aggregator(f"labgnn.gen{g}.light_gradient", d, store, rng, dtype)


def similarity(v: Tensor, prefix: str, store: ParamStore, cfg: GnnConfig) -> Tensor:
    """Pairwise similarity matrix with unit diagonal.

    S[i,j] = sigmoid(mlp(|v_i - v_j|)) off-diagonal; the interaction net is
    affine d->d, batchnorm over all pairs, ReLU, affine d->1.
    """
    squeeze = v.data.ndim == 2
    if squeeze:
        v = reshape(v, (1,) + v.data.shape)
    b, t, d = v.data.shape
    eye = np.eye(t, dtype=v.data.dtype)
    if t == 1:
        ones = np.ones((b, 1, 1), dtype=v.data.dtype)
        return Tensor(ones[0]) if squeeze else Tensor(ones)
    vi = reshape(v, (b, t, 1, d))
    vj = reshape(v, (b, 1, t, d))
    pairs = reshape(tabs(vi - vj), (b * t * t, d))
    h = nnops.linear(pairs, store[f"{prefix}.fc1.w"], store[f"{prefix}.fc1.b"])
    h = nnops.batchnorm2d(h, store[f"{prefix}.bn.gamma"], store[f"{prefix}.bn.beta"],
                          cfg.bn_eps)
    h = relu(h)
    s = sigmoid(nnops.linear(h, store[f"{prefix}.fc2.w"], store[f"{prefix}.fc2.b"]))
    s = reshape(s, (b, t, t))
    s = s * Tensor(1.0 - eye) + Tensor(eye)
    if squeeze:
        s = reshape(s, (t, t))
    return s


def init_nodes(emb) -> tuple[Tensor, Tensor]:
    """Generation-0 nodes are the last-tier embeddings, verbatim."""
    return emb.e_ls_light, emb.e_ls_color


def init_edges(emb, store: ParamStore, cfg: GnnConfig) -> tuple[Tensor, Tensor]:
    """Generation-0 edges from the penultimate tier, one net per branch."""
    e_light = similarity(emb.e_pe_light, "labgnn.init.light_sim", store, cfg)
    e_color = similarity(emb.e_pe_color, "labgnn.init.color_sim", store, cfg)
    return e_light, e_color


def _edge_update(e_prev: Tensor, v: Tensor, prefix: str, store: ParamStore,
                 cfg: GnnConfig) -> Tensor:
    s = similarity(v, prefix, store, cfg)
    t = e_prev.data.shape[-1]
    eye = np.eye(t, dtype=e_prev.data.dtype)
    e = s * e_prev
    return e * Tensor(1.0 - eye) + Tensor(eye)


def update_light_edges(e_prev: Tensor, v_light: Tensor, generation: int,
                       store: ParamStore, cfg: GnnConfig) -> Tensor:
    return _edge_update(e_prev, v_light, f"labgnn.gen{generation}.light_sim", store, cfg)


def update_color_edges(e_prev: Tensor, v_color: Tensor, generation: int,
                       store: ParamStore, cfg: GnnConfig) -> Tensor:
    return _edge_update(e_prev, v_color, f"labgnn.gen{generation}.color_sim", store, cfg)


def _aggregate(e: Tensor, v_prev: Tensor, prefix: str, store: ParamStore) -> Tensor:
    """Row-normalized aggregation then a two-layer MLP on [agg ; previous]."""
    b, t, d = v_prev.data.shape
    eye = np.eye(t, dtype=e.data.dtype)
    a = e * Tensor(1.0 - eye) + Tensor(eye)
    a = a / a.sum(axis=-1, keepdims=True)
    agg = a @ v_prev
    h = reshape(concatenate([agg, v_prev], axis=-1), (b * t, 2 * d))
    h = relu(nnops.linear(h, store[f"{prefix}.fc1.w"], store[f"{prefix}.fc1.b"]))
    out = nnops.linear(h, store[f"{prefix}.fc2.w"], store[f"{prefix}.fc2.b"])
    return reshape(out, (b, t, d))


def color_layering(e_light: Tensor, v_color_prev: Tensor, generation: int,
                   store: ParamStore, cfg: GnnConfig) -> Tensor:
    """New color nodes from light edges and previous color nodes."""
    return _aggregate(e_light, v_color_prev, f"labgnn.gen{generation}.color_layering", store)


def light_gradient(e_color: Tensor, v_light_prev: Tensor, generation: int,
                   store: ParamStore, cfg: GnnConfig) -> Tensor:
    """New light nodes from color edges and previous light nodes."""
    return _aggregate(e_color, v_light_prev, f"labgnn.gen{generation}.light_gradient", store)


def run_generations(emb, g: int, store: ParamStore, cfg: GnnConfig) -> list[DualGraphState]:
    """Full trajectory, generation 0 through g (history length g+1)."""
    if g < 1:
        raise ValueError("need at least one generation")
    v_light, v_color = init_nodes(emb)
    e_light, e_color = init_edges(emb, store, cfg)
    history = [DualGraphState(v_light, v_color, e_light, e_color, 0)]
    for gen in range(1, g + 1):
        prev = history[-1]
        e_light = update_light_edges(prev.e_light, prev.v_light, gen, store, cfg)
        v_color = color_layering(e_light, prev.v_color, gen, store, cfg)
        e_color = update_color_edges(prev.e_color, v_color, gen, store, cfg)
        v_light = light_gradient(e_color, prev.v_light, gen, store, cfg)
        history.append(DualGraphState(v_light, v_color, e_light, e_color, gen))
    return history


def dump_trace(history, fileobj) -> None:
    """Write one JSON line per generation with both edge matrices (T <= 10).

    Debug aid for comparing a vectorized trajectory against external oracles.
    """
    import json

    t = history[0].e_light.data.shape[-1]
    if t > 10:
        raise ValueError(f"trace dump only supported for T <= 10, got T={t}")
    for state in history:
        fileobj.write(json.dumps({
            "generation": state.generation,
            "e_light": np.asarray(state.e_light.data, dtype=float).tolist(),
            "e_color": np.asarray(state.e_color.data, dtype=float).tolist(),
        }) + "\n")


def predict(e_light_final, support_labels: np.ndarray, k: int):
    """Class scores and argmax labels for queries from final light edges.

    e_light_final: [B,T,T] array or Tensor; support_labels: [B, NK] episode-
    local ids.  Score of query i for class c sums its edges to supports of c;
    ties go to the lowest class index.
    """
    e = e_light_final.data if isinstance(e_light_final, Tensor) else np.asarray(e_light_final)
    support_labels = np.asarray(support_labels)
    b, t, _ = e.shape
    nk = support_labels.shape[1]
    h = np.zeros((b, nk, k), dtype=e.dtype)
    np.put_along_axis(h, support_labels[..., None], 1.0, axis=-1)
    scores = np.matmul(e[:, nk:, :nk], h)
    preds = scores.argmax(axis=-1)
    return scores, preds
