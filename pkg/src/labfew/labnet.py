"""Two-group convolutional encoder over LLAB input.

Four blocks of grouped 3x3 conv -> batchnorm -> ReLU -> 2x2 maxpool, with a
lightness group (the two cloned L channels) and a color group (a, b) kept
separate end to end.  Per-group widths follow the plan [H, 2H, 4H, 4H], so a
global max-pool after block 3 or 4 leaves a 4H vector per group, mapped by a
per-group, per-tier fully connected layer to the embedding dimension.  The
block-3 tier feeds edge initialization, the block-4 tier feeds graph nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnops
from .optim import ParamStore
from .tensor import Tensor, relu


@dataclass
class LabNetConfig:
    hidden_h: int = 96
    embed_dim: int = 128
    in_channels: int = 4
    groups: int = 2
    bn_eps: float = 1e-5
    # per-group output channels of the four blocks
    plan: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if self.in_channels % self.groups != 0:
            raise ValueError("in_channels must divide by groups")
        h = self.hidden_h
        self.plan = (h, 2 * h, 4 * h, 4 * h)


@dataclass
class GroupedEmbedding:
    """Two-tiered per-image features, each [B, T, embed_dim]."""

    e_pe_light: Tensor
    e_pe_color: Tensor
    e_ls_light: Tensor
    e_ls_color: Tensor


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def init_labnet_params(cfg: LabNetConfig, store: ParamStore,
                       rng: np.random.Generator, dtype=np.float32) -> None:
    g = cfg.groups
    in_per_group = cfg.in_channels // g
    prev = in_per_group
    for i, width in enumerate(cfg.plan, start=1):
        fan_in = prev * 9
        store.add(f"labnet.lb{i}.conv.w", _uniform(rng, (g * width, prev, 3, 3), fan_in, dtype))
        store.add(f"labnet.lb{i}.conv.b", np.zeros(g * width, dtype=dtype))
        store.add(f"labnet.lb{i}.bn.gamma", np.ones(g * width, dtype=dtype))
        store.add(f"labnet.lb{i}.bn.beta", np.zeros(g * width, dtype=dtype))
        prev = width
    fc_in = cfg.plan[-1]
    for tier in ("pe", "ls"):
        for branch in ("light", "color"):
            store.add(f"labnet.fc_{tier}_{branch}.w",
                      _uniform(rng, (cfg.embed_dim, fc_in), fc_in, dtype))
            store.add(f"labnet.fc_{tier}_{branch}.b", np.zeros(cfg.embed_dim, dtype=dtype))


def lab_block_forward(x: Tensor, block_index: int, store: ParamStore,
                      cfg: LabNetConfig) -> Tensor:
    """One GroupConv-BN-ReLU-maxpool block; block_index in 1..4."""
    expected = cfg.groups * (cfg.in_channels // cfg.groups if block_index == 1
                             else cfg.plan[block_index - 2])
    if x.data.shape[1] != expected:
        raise ValueError(
            f"lb{block_index} expects {expected} channels, got {x.data.shape[1]}"
        )
    p = f"labnet.lb{block_index}"
    out = nnops.grouped_conv2d(x, store[f"{p}.conv.w"], store[f"{p}.conv.b"],
                               groups=cfg.groups, stride=1, padding=1)
    out = nnops.batchnorm2d(out, store[f"{p}.bn.gamma"], store[f"{p}.bn.beta"], cfg.bn_eps)
    out = relu(out)
    return nnops.maxpool2d(out, 2, 2)


def _split_fc(h: Tensor, tier: str, store: ParamStore, cfg: LabNetConfig):
    """Global max-pool, split the two groups, apply the per-group FC."""
    pooled = nnops.global_max_pool(h)
    half = cfg.plan[-1]
    light = pooled[:, :half]
    color = pooled[:, half:]
    e_light = nnops.linear(light, store[f"labnet.fc_{tier}_light.w"],
                           store[f"labnet.fc_{tier}_light.b"])
    e_color = nnops.linear(color, store[f"labnet.fc_{tier}_color.w"],
                           store[f"labnet.fc_{tier}_color.b"])
    return e_light, e_color


def encoder_forward(llab: np.ndarray, store: ParamStore, cfg: LabNetConfig) -> GroupedEmbedding:
    """Run all four blocks once, returning both tiers, shapes [B, T, embed_dim].

    llab: [B, T, 4, H, W]; batchnorm statistics span the flattened B*T batch.
    """
    b, t = llab.shape[0], llab.shape[1]
    x = Tensor(llab.reshape((b * t,) + llab.shape[2:]))
    h = x
    for i in (1, 2, 3):
        h = lab_block_forward(h, i, store, cfg)
    pe_light, pe_color = _split_fc(h, "pe", store, cfg)
    h = lab_block_forward(h, 4, store, cfg)
    ls_light, ls_color = _split_fc(h, "ls", store, cfg)
    d = cfg.embed_dim
    return GroupedEmbedding(
        e_pe_light=pe_light.reshape(b, t, d),
        e_pe_color=pe_color.reshape(b, t, d),
        e_ls_light=ls_light.reshape(b, t, d),
        e_ls_color=ls_color.reshape(b, t, d),
    )


def embed_penultimate(llab: np.ndarray, store: ParamStore, cfg: LabNetConfig):
    """Blocks 1-3, global max-pool, per-group FC: the edge-init tier."""
    emb = encoder_forward(llab, store, cfg)
    return emb.e_pe_light, emb.e_pe_color


def embed_last(llab: np.ndarray, store: ParamStore, cfg: LabNetConfig):
    """Blocks 1-4, global max-pool, per-group FC: the node-init tier."""
    emb = encoder_forward(llab, store, cfg)
    return emb.e_ls_light, emb.e_ls_color
