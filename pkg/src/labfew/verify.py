"""Randomized gradient-check drivers for every differentiable primitive.

Each case builds an op and float64 inputs; non-scalar outputs are reduced by
a fixed random weighting so transposition mistakes cannot cancel out.  Inputs
for kinked ops (relu, max pooling, pairwise L1) are drawn on a coarse grid
plus a distinct per-element offset, which keeps every pairwise gap well above
the finite-difference step so no check straddles a kink.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import nnops, tensor
from .episodic import EpisodeSpec, LossWeights, build_model, total_loss
from .gradcheck import check_gradients
from .labgnn import run_generations
from .labnet import encoder_forward
from .tensor import Tensor


def _smooth(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _kink_safe(rng, shape):
    """Values with all pairwise gaps >= ~7e-5: grid of 0.01 plus i*7.3e-4.

    The 0.5005 shift centers the range while staying >= 2e-4 away from zero
    for every lattice point, so |x| and relu kinks are never straddled.
    """
    n = int(np.prod(shape))
    vals = rng.integers(0, 100, size=n) / 100.0 + np.arange(n) * 7.3e-4
    return Tensor(rng.permutation(vals).reshape(shape) - 0.5005, requires_grad=True)


def _case_add(rng):
    return lambda a, b: a + b, [_smooth(rng, (3, 4)), _smooth(rng, (4,))]


def _case_sub(rng):
    return lambda a, b: a - b, [_smooth(rng, (2, 3, 2)), _smooth(rng, (3, 1))]


def _case_mul(rng):
    return lambda a, b: a * b, [_smooth(rng, (3, 5)), _smooth(rng, (3, 5))]


def _case_div(rng):
    a = _smooth(rng, (4, 3))
    b = Tensor(rng.uniform(0.5, 2.0, (4, 3)) * np.where(rng.random((4, 3)) < 0.5, -1, 1),
               requires_grad=True)
    return lambda a, b: a / b, [a, b]


def _case_matmul(rng):
    return lambda a, b: a @ b, [_smooth(rng, (2, 3, 4)), _smooth(rng, (2, 4, 2))]


def _case_relu(rng):
    return tensor.relu, [_kink_safe(rng, (4, 5))]


def _case_sigmoid(rng):
    return tensor.sigmoid, [_smooth(rng, (3, 4))]


def _case_abs(rng):
    return tensor.tabs, [_kink_safe(rng, (4, 4))]


def _case_sum_mean(rng):
    return (lambda x: tensor.tmean(x, axis=1) + tensor.tsum(x, axis=2, keepdims=False)[:, :2],
            [_smooth(rng, (3, 4, 2))])


def _case_reshape_transpose(rng):
    return lambda x: tensor.transpose(tensor.reshape(x, (6, 4)), (1, 0)), [_smooth(rng, (2, 3, 4))]


def _case_getitem(rng):
    return lambda x: x[1:3, ::2], [_smooth(rng, (4, 6))]


def _case_concatenate(rng):
    return (lambda a, b: tensor.concatenate([a, b], axis=1),
            [_smooth(rng, (2, 3)), _smooth(rng, (2, 2))])


def _case_grouped_conv2d(rng):
    groups = int(rng.integers(1, 3))
    cin = 2 * groups
    cout = 2 * groups
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    inputs = [_smooth(rng, (2, cin, 5, 5)),
              _smooth(rng, (cout, cin // groups, 3, 3)),
              _smooth(rng, (cout,))]
    return (lambda x, w, b: nnops.grouped_conv2d(x, w, b, groups=groups,
                                                 stride=stride, padding=padding),
            inputs)


def _case_batchnorm2d(rng):
    x = _smooth(rng, (4, 3, 3, 3)) if rng.random() < 0.5 else _smooth(rng, (8, 5))
    c = x.data.shape[1]
    gamma = Tensor(rng.uniform(0.5, 1.5, c), requires_grad=True)
    return lambda x, g, b: nnops.batchnorm2d(x, g, b), [x, gamma, _smooth(rng, (c,))]


def _case_maxpool2d(rng):
    k = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    return lambda x: nnops.maxpool2d(x, k, stride), [_kink_safe(rng, (1, 2, 6, 6))]


def _case_global_max_pool(rng):
    return nnops.global_max_pool, [_kink_safe(rng, (2, 3, 4, 4))]


def _case_linear(rng):
    return (lambda x, w, b: nnops.linear(x, w, b),
            [_smooth(rng, (4, 6)), _smooth(rng, (3, 6)), _smooth(rng, (3,))])


def _case_pairwise_l1(rng):
    shape = (5, 3) if rng.random() < 0.5 else (2, 4, 3)
    return nnops.pairwise_l1, [_kink_safe(rng, shape)]


def _case_softmax_cross_entropy(rng):
    labels = rng.integers(0, 4, size=6)
    return lambda l: nnops.softmax_cross_entropy(l, labels), [_smooth(rng, (6, 4))]


PRIMITIVE_CASES = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "div": _case_div,
    "matmul": _case_matmul,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "abs": _case_abs,
    "sum_mean": _case_sum_mean,
    "reshape_transpose": _case_reshape_transpose,
    "getitem": _case_getitem,
    "concatenate": _case_concatenate,
    "grouped_conv2d": _case_grouped_conv2d,
    "batchnorm2d": _case_batchnorm2d,
    "maxpool2d": _case_maxpool2d,
    "global_max_pool": _case_global_max_pool,
    "linear": _case_linear,
    "pairwise_l1": _case_pairwise_l1,
    "softmax_cross_entropy": _case_softmax_cross_entropy,
}


def check_case(name: str, seed: int, trial: int, h: float = 1e-5) -> float:
    """One randomized gradient check of a named primitive; returns max rel err."""
    tag = zlib.crc32(name.encode())
    rng = np.random.default_rng(np.random.SeedSequence([seed, tag, trial]))
    op, inputs = PRIMITIVE_CASES[name](rng)
    with tensor.no_grad():
        out = op(*inputs)
    if out.data.size == 1:
        scalar_op = op
    else:
        w = rng.standard_normal(out.data.shape)
        scalar_op = lambda *ts: tensor.tsum(op(*ts) * Tensor(w))  # noqa: E731
    return check_gradients(scalar_op, inputs, h=h)


def primitive_suite(trials: int = 100, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Max relative error per primitive over `trials` randomized instances."""
    return {
        name: max(check_case(name, seed, t, h) for t in range(trials))
        for name in PRIMITIVE_CASES
    }


def end_to_end_check(seed: int = 5, h: float = 2e-5) -> float:
    """Gradient-check the full gated loss of a tiny 2-way-1-shot model (f64).

    Covers the color transform input path, all four encoder blocks, both
    graph branches over two generations, and all three loss components.
    Episode pixels are iid uniform so pooling windows carry no near-ties for
    the +-h probe to straddle; h=2e-5 keeps the quotient of the loss's ulp
    quantization and the smallest parameter gradients below the tolerance.
    """
    from . import colorspace

    spec = EpisodeSpec(k_way=2, n_shot=1, q_query=1, batch=1)
    model = build_model(hidden_h=2, embed_dim=8, generations=2, seed=seed,
                        dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE2E]))
    images = rng.random((1, spec.t, 3, 16, 16))
    labels = np.array([[0, 1, 0, 1]])
    llab = colorspace.rgb_to_llab(images, dtype=np.float64).data
    weights = LossWeights(lam=0.1, beta=0.1, gamma=1.0, gate=2)

    def op(*_):
        emb = encoder_forward(llab, model.store, model.labnet_cfg)
        history = run_generations(emb, model.gnn_cfg.generations, model.store, model.gnn_cfg)
        loss, _ = total_loss(history, labels, spec, weights)
        return loss

    params = list(model.store.params.values())
    return check_gradients(op, params, h=h, wrt=params)
