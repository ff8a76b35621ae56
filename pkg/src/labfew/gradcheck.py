"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def check_gradients(op, inputs, h: float = 1e-5, wrt=None) -> float:
    """Compare analytic gradients of a scalar-valued op against central differences.

    `op(*inputs)` must return a scalar Tensor (compose with sum if needed).
    Every entry of every checked tensor is perturbed by +-h in float64; the
    returned figure is the max relative error with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if wrt is None:
        wrt = [t for t in inputs if isinstance(t, Tensor) and t.requires_grad]
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ValueError("check_gradients requires float64 inputs")
        t.zero_grad()
    out = op(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("op must produce a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise FloatingPointError(f"non-finite forward output: {out.data!r}")
    out.backward()

    worst = 0.0
    with no_grad():
        for t in wrt:
            ga = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(op(*inputs).data.reshape(()))
                flat[i] = orig - h
                fm = float(op(*inputs).data.reshape(()))
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise FloatingPointError(
                        f"non-finite output while perturbing entry {i} of shape {t.shape}"
                    )
                gn = (fp - fm) / (2.0 * h)
                gai = ga.reshape(-1)[i]
                rel = abs(gai - gn) / max(abs(gai), abs(gn), 1e-8)
                if rel > worst:
                    worst = rel
    return worst
