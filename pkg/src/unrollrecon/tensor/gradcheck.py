"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .core import GraphError, Tensor, backward


def gradcheck(forward, inputs, eps=1e-6, atol=1e-8, kink_tol=None, max_entries=None, rng=None):
    """Worst relative error between backprop and central differences.

    ``forward`` maps the list of ``inputs`` (f64 leaf tensors) to a scalar
    tensor. Entries whose perturbation crosses a ReLU kink are skipped: a
    probe is dropped when the one-sided difference quotients disagree by more
    than ``kink_tol`` relative. ``max_entries`` subsamples large inputs.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck requires f64 inputs")
        t.requires_grad = True
        t.grad = None
    out = forward(inputs)
    if out.data.size != 1:
        raise GraphError("gradcheck forward must return a scalar")
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    f0 = float(out.data)
    rng = rng or np.random.default_rng(0)
    kink_tol = 1e-2 if kink_tol is None else kink_tol

    def value():
        return float(forward(inputs).data)

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        scale = max(np.abs(ga).max(), 1e-12)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            fwd = (fp - f0) / eps
            bwd = (f0 - fm) / eps
            if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1e-3 * scale):
                continue
            num = (fp - fm) / (2 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-3 * scale, atol)
            worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)
