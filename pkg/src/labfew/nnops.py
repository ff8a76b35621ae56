"""Network primitives on top of the autodiff core.

Grouped convolution runs as im2col + one GEMM per channel group; its backward
reuses the cached column matrix for the weight gradient and folds the column
gradient back with a small loop over kernel taps, so everything heavy stays
inside BLAS.  Batchnorm always standardizes with the statistics of the batch
it is given (episodic/transductive; no running averages).

The box has little memory bandwidth relative to BLAS throughput, so the hot
paths avoid gather-reshapes and large temporaries: im2col copies one slab per
kernel tap, 2x2 pooling compares four strided slabs instead of materializing
windows, and batchnorm updates buffers in place.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _accum_new, _make


def _conv_out_size(h: int, k: int, stride: int, padding: int) -> int:
    size = (h + 2 * padding - k) // stride + 1
    if size < 1:
        raise ValueError(f"kernel {k} (stride {stride}, pad {padding}) larger than input {h}")
    return size


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """[N,C,H,W] -> columns [N, C*kh*kw, Ho*Wo] plus output spatial dims.

    One contiguous slab copy per kernel tap instead of a strided 6-D gather.
    """
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            np.copyto(cols[:, :, ki, kj],
                      x[:, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride])
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _fold_cols(dcols: np.ndarray, dxp: np.ndarray, c0: int, c1: int,
               kh: int, kw: int, stride: int, ho: int, wo: int):
    """Scatter-add column gradients for channels [c0,c1) onto padded input."""
    n = dxp.shape[0]
    dc = dcols.reshape(n, c1 - c0, kh, kw, ho, wo)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, c0:c1, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride] += dc[
                :, :, ki, kj
            ]


def grouped_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    groups: int = 1,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation computed independently per channel group.

    x: [N, Cin, H, W]; weight: [Cout, Cin/groups, kh, kw]; output channels
    partition by group in order.
    """
    n, cin, h, w = x.data.shape
    cout, cing, kh, kw = weight.data.shape
    if cin % groups != 0:
        raise ValueError(f"in_channels {cin} not divisible by groups {groups}")
    if cout % groups != 0:
        raise ValueError(f"out_channels {cout} not divisible by groups {groups}")
    if cing != cin // groups:
        raise ValueError(
            f"weight expects {cing} in-channels per group, input gives {cin // groups}"
        )
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    cg = cin // groups
    og = cout // groups
    rows = cg * kh * kw
    out_flat = np.empty((n, cout, ho * wo), dtype=x.data.dtype)
    for g in range(groups):
        wg = weight.data[g * og : (g + 1) * og].reshape(og, rows)
        np.matmul(wg, cols[:, g * rows : (g + 1) * rows], out=out_flat[:, g * og : (g + 1) * og])
    out_data = out_flat.reshape(n, cout, ho, wo)
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(gout):
        gf = gout.reshape(n, cout, ho * wo)
        if bias is not None and bias.requires_grad:
            _accum_new(bias, gout.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            for g in range(groups):
                gg = gf[:, g * og : (g + 1) * og]
                colsg = cols[:, g * rows : (g + 1) * rows]
                np.matmul(gg, colsg.transpose(0, 2, 1)).sum(
                    axis=0, out=dw[g * og : (g + 1) * og].reshape(og, rows)
                )
            _accum_new(weight, dw)
        if x.requires_grad:
            dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
            for g in range(groups):
                wg = weight.data[g * og : (g + 1) * og].reshape(og, rows)
                dcg = np.matmul(wg.T, gf[:, g * og : (g + 1) * og])
                _fold_cols(dcg, dxp, g * cg, (g + 1) * cg, kh, kw, stride, ho, wo)
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + w]
            _accum_new(x, dxp)

    return _make(out_data, parents, bw)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization with current-batch statistics, then affine.

    Accepts [N, C, H, W] or [N, C].  Statistics always come from the batch at
    hand (meta-train and meta-test alike), so N must be at least 2.
    """
    d = x.data
    if d.ndim not in (2, 4):
        raise ValueError(f"batchnorm2d expects 2-D or 4-D input, got {d.shape}")
    if d.shape[0] < 2:
        raise ValueError(
            "batchnorm2d saw a batch of 1; flatten episodes (B*T) before the encoder"
        )
    shape = (1, -1) if d.ndim == 2 else (1, -1, 1, 1)
    n = d.size // d.shape[1]
    # fused single-pass channel reductions (einsum avoids big temporaries)
    red = "nc->c" if d.ndim == 2 else "nchw->c"
    red2 = "nc,nc->c" if d.ndim == 2 else "nchw,nchw->c"
    m = (np.einsum(red, d) / n).reshape(shape)
    xhat = d - m
    v = (np.einsum(red2, xhat, xhat) / n).reshape(shape)
    inv = 1.0 / np.sqrt(v + eps)
    np.multiply(xhat, inv, out=xhat)
    gr = gamma.data.reshape(shape)
    out_data = gr * xhat
    out_data += beta.data.reshape(shape)

    def bw(g):
        if gamma.requires_grad:
            _accum_new(gamma, np.einsum(red2, g, xhat))
        if beta.requires_grad:
            _accum_new(beta, np.einsum(red, g))
        if x.requires_grad:
            dxhat = g * gr
            s1 = np.einsum(red, dxhat).reshape(shape) / n
            s2 = np.einsum(red2, dxhat, xhat).reshape(shape) / n
            dxhat -= s1
            dxhat -= xhat * s2
            np.multiply(dxhat, inv, out=dxhat)
            _accum_new(x, dxhat)

    return _make(out_data, (x, gamma, beta), bw)


def _maxpool_slabs(x: np.ndarray, k: int, stride: int, ho: int, wo: int):
    return [
        x[:, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride]
        for ki in range(k)
        for kj in range(k)
    ]


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Windowed max; gradient routes to the first (row-major) argmax."""
    stride = k if stride is None else stride
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise ValueError(f"pool window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    slabs = _maxpool_slabs(x.data, k, stride, ho, wo)
    out_data = slabs[0].copy()
    for s in slabs[1:]:
        np.maximum(out_data, s, out=out_data)

    def bw(g):
        dx = np.zeros_like(x.data)
        dslabs = _maxpool_slabs(dx, k, stride, ho, wo)
        if stride >= k:
            # non-overlapping: each input cell sits in at most one window
            taken = np.zeros(out_data.shape, dtype=bool)
            for s, ds in zip(slabs, dslabs):
                hit = (s == out_data) & ~taken
                ds += g * hit
                taken |= hit
        else:
            # overlapping windows: route within each window independently
            win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
            flat = win.reshape(n, c, ho, wo, k * k)
            idx = flat.argmax(axis=-1)
            for t, ds in enumerate(dslabs):
                ds += g * (idx == t)
        _accum_new(x, dx)

    return _make(out_data, (x,), bw)


def global_max_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial max; first-index (row-major) tie-break."""
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        _accum_new(x, dflat.reshape(x.data.shape))

    return _make(out_data, (x,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x @ w.T + b with x [N, in] and w [out, in]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"linear expects 2-D x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"inner dims disagree: {x.data.shape} vs {w.data.shape}")
    out_data = x.data @ w.data.T
    if b is not None:
        out_data += b.data

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            _accum_new(x, g @ w.data)
        if w.requires_grad:
            _accum_new(w, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accum_new(b, g.sum(axis=0))

    return _make(out_data, parents, bw)


def pairwise_l1(v: Tensor) -> Tensor:
    """L1 distance matrix: D[i,j] = sum_k |v[i,k] - v[j,k]|.

    Accepts [n, d] or batched [B, n, d]; output [n, n] / [B, n, n].
    """
    if v.data.ndim not in (2, 3):
        raise ValueError(f"pairwise_l1 expects [n,d] or [B,n,d], got {v.data.shape}")
    diff = v.data[..., :, None, :] - v.data[..., None, :, :]
    out_data = np.abs(diff).sum(axis=-1)

    def bw(g):
        s = np.sign(diff)
        g2 = g + np.swapaxes(g, -1, -2)
        _accum_new(v, np.einsum("...ij,...ijk->...ik", g2, s))

    return _make(out_data, (v,), bw)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over rows of -log softmax(logits)[label], max-stabilized."""
    z = logits.data
    if z.ndim != 2:
        raise ValueError(f"logits must be [n, K], got {z.shape}")
    labels = np.asarray(labels)
    n, k = z.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must be [n]={n}, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0,{k}): {labels.min()}..{labels.max()}")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    out_data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=z.dtype)

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accum_new(logits, (g / n) * p)

    return _make(out_data, (logits,), bw)


def one_hot(labels: np.ndarray, k: int, dtype=np.float32) -> Tensor:
    """One-hot rows H[i, labels[i]] = 1; a constant (no gradient flows in)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0,{k})")
    h = np.zeros(labels.shape + (k,), dtype=dtype)
    np.put_along_axis(h, labels[..., None], 1.0, axis=-1)
    return Tensor(h)
