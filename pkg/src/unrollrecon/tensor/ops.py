"""Differentiable operations: convolutions, activations, reductions, losses."""

from __future__ import annotations

import numpy as np

from .core import REAL_DTYPES, DtypeError, Function, ShapeError, Tensor, as_tensor


def _check_real(arr, op):
    if arr.dtype not in REAL_DTYPES:
        raise DtypeError(f"{op}: expected a real tensor, got {arr.dtype}")


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays


def _im2col(xp, k, stride, ho, wo):
    """Patches of a padded batch as ``[B, C*k*k, ho*wo]`` (one copy per tap)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * k * k, ho * wo)


def _corr(xp, w, stride):
    """Valid cross-correlation of an already padded batch."""
    k = w.shape[-1]
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    out = np.matmul(w.reshape(w.shape[0], -1), _im2col(xp, k, stride, ho, wo))
    return out.reshape(xp.shape[0], w.shape[0], ho, wo)


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv_out(n, k, stride, pad, axis):
    span = n + 2 * pad - k
    if span < 0:
        raise ShapeError(
            f"{axis} extent {n} incompatible with kernel {k}, stride {stride}, pad {pad}"
        )
    return span // stride + 1


def _conv_fwd(x, w, stride, pad):
    return _corr(_pad(x, pad), w, stride)


def _conv_grad_input(g, w, stride, pad, in_hw):
    """Adjoint of ``_conv_fwd`` w.r.t. its input; ``in_hw`` is the unpadded extent."""
    k = w.shape[-1]
    b, cout, ho, wo = g.shape
    if stride > 1:
        d = np.zeros((b, cout, (ho - 1) * stride + 1, (wo - 1) * stride + 1), g.dtype)
        d[:, :, ::stride, ::stride] = g
        g = d
    hp, wp = in_hw[0] + 2 * pad, in_hw[1] + 2 * pad
    extra_h = hp - (g.shape[2] + k - 1)
    extra_w = wp - (g.shape[3] + k - 1)
    gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1 + extra_h), (k - 1, k - 1 + extra_w)))
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = _corr(gp, wt, 1)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def _conv_grad_weight(x, g, k, stride, pad):
    b, cout, ho, wo = g.shape
    cols = _im2col(_pad(x, pad), k, stride, ho, wo)
    dw = np.matmul(g.reshape(b, cout, -1), cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(cout, x.shape[1], k, k)


def _check_conv(x, w, k_odd=True):
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-D [B,C,H,W], got {x.ndim}-D")
    if w.ndim != 4:
        raise ShapeError(f"weight must be 4-D, got {w.ndim}-D")
    k = w.shape[-1]
    if w.shape[-2] != k:
        raise ShapeError(f"kernel must be square, got {w.shape[-2]}x{k}")
    if k_odd and k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")


class Conv2d(Function):
    def forward(self, x, w, b, stride=1, pad=0):
        _check_real(x, "conv2d")
        _check_conv(x, w)
        if stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {stride}")
        if pad < 0:
            raise ShapeError(f"pad must be >= 0, got {pad}")
        if w.shape[1] != x.shape[1]:
            raise ShapeError(f"channel axis: input has {x.shape[1]}, weight expects {w.shape[1]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias axis: expected ({w.shape[0]},), got {b.shape}")
        k = w.shape[-1]
        _conv_out(x.shape[2], k, stride, pad, "height")
        _conv_out(x.shape[3], k, stride, pad, "width")
        self.x, self.w, self.stride, self.pad = x, w, stride, pad
        return _conv_fwd(x, w, stride, pad) + b[None, :, None, None]

    def backward(self, g):
        x, w, s, p = self.x, self.w, self.stride, self.pad
        dx = _conv_grad_input(g, w, s, p, x.shape[2:]) if self.needs[0] else None
        dw = _conv_grad_weight(x, g, w.shape[-1], s, p) if self.needs[1] else None
        db = g.sum(axis=(0, 2, 3)) if self.needs[2] else None
        return dx, dw, db


class ConvTranspose2d(Function):
    def forward(self, x, w, stride=1, pad=0):
        _check_real(x, "conv_transpose2d")
        _check_conv(x, w, k_odd=False)
        if stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {stride}")
        if w.shape[0] != x.shape[1]:
            raise ShapeError(f"channel axis: input has {x.shape[1]}, weight expects {w.shape[0]}")
        k = w.shape[-1]
        out_hw = ((x.shape[2] - 1) * stride - 2 * pad + k, (x.shape[3] - 1) * stride - 2 * pad + k)
        if min(out_hw) < 1:
            raise ShapeError(f"height/width: transposed output extent {out_hw} is empty")
        self.x, self.w, self.stride, self.pad = x, w, stride, pad
        return _conv_grad_input(x, w, stride, pad, out_hw)

    def backward(self, g):
        x, w, s, p = self.x, self.w, self.stride, self.pad
        dx = _conv_fwd(g, w, s, p) if self.needs[0] else None
        dw = _conv_grad_weight(g, x, w.shape[-1], s, p) if self.needs[1] else None
        return dx, dw


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation of ``x[B,Cin,H,W]`` with ``weight[Cout,Cin,k,k]``."""
    weight = as_tensor(weight)
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0], dtype=weight.dtype))
    return Conv2d.apply(x, weight, bias, stride=stride, pad=pad)


def conv_transpose2d(x, weight, stride=1, pad=0, bias=None):
    """Transposed convolution, ``weight[Cin,Cout,k,k]``; the adjoint of :func:`conv2d`."""
    out = ConvTranspose2d.apply(x, weight, stride=stride, pad=pad)
    if bias is not None:
        out = add_channel_bias(out, bias)
    return out


class ChannelBias(Function):
    def forward(self, x, b):
        return x + b[None, :, None, None]

    def backward(self, g):
        return g, g.sum(axis=(0, 2, 3))


def add_channel_bias(x, b):
    return ChannelBias.apply(x, b)


# ---------------------------------------------------------------------------
# elementwise and structural ops


class Relu(Function):
    def forward(self, x):
        _check_real(x, "relu")
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, g):
        return g * self.mask


def relu(x):
    return Relu.apply(x)


class Add(Function):
    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b

    def backward(self, g):
        return g, g


def add(a, b):
    return Add.apply(a, b)


class AddConst(Function):
    def forward(self, a, c=0.0):
        c = np.asarray(c)
        if c.ndim and c.shape != a.shape:
            raise ShapeError(f"add_const: shapes {a.shape} and {c.shape} differ")
        return (a + c).astype(a.dtype)

    def backward(self, g):
        return (g,)


def add_const(a, c):
    """``a + c`` for a constant array or scalar ``c`` (no gradient to ``c``)."""
    if isinstance(c, Tensor):
        c = c.data
    return AddConst.apply(a, c=c)


class Scale(Function):
    def forward(self, a, s=1.0):
        self.s = s
        return (a * s).astype(a.dtype)

    def backward(self, g):
        return (g * self.s,)


def scale(a, s):
    return Scale.apply(a, s=s)


class Exp(Function):
    def forward(self, a):
        _check_real(a, "exp")
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


def exp(a):
    return Exp.apply(a)


class Concat(Function):
    def forward(self, *arrays):
        b, hw = arrays[0].shape[0], arrays[0].shape[2:]
        for a in arrays:
            if a.ndim != 4 or a.shape[0] != b or a.shape[2:] != hw:
                raise ShapeError(f"concat: non-channel axes differ ({a.shape} vs {arrays[0].shape})")
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=1))


def concat(tensors):
    """Concatenate ``[B,C_i,H,W]`` tensors along the channel axis."""
    return Concat.apply(*tensors)


class Sum(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, g):
        return (np.broadcast_to(g, self.shape).astype(g.dtype),)


def sum(a):  # noqa: A001
    return Sum.apply(a)


class Mean(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.mean(), dtype=a.dtype)

    def backward(self, g):
        return (np.full(self.shape, g / np.prod(self.shape), dtype=g.dtype),)


def mean(a):
    return Mean.apply(a)


class L2Loss(Function):
    def forward(self, pred, target):
        _check_real(pred, "l2_loss")
        if pred.shape != target.shape:
            raise ShapeError(f"l2_loss: shapes {pred.shape} and {target.shape} differ")
        self.diff = pred - target
        self.norm = np.sqrt(np.sum(self.diff.astype(np.float64) ** 2))
        return np.asarray(self.norm, dtype=pred.dtype)

    def backward(self, g):
        if self.norm == 0:
            return np.zeros_like(self.diff), None
        gp = g * self.diff / self.norm
        return gp.astype(self.diff.dtype), -gp.astype(self.diff.dtype)


def l2_loss(pred, target):
    """Euclidean norm of ``pred - target`` (not squared, not averaged)."""
    return L2Loss.apply(pred, target)


class SumSquares(Function):
    def forward(self, pred, target):
        _check_real(pred, "sum_squares")
        if pred.shape != target.shape:
            raise ShapeError(f"sum_squares: shapes {pred.shape} and {target.shape} differ")
        self.diff = pred - target
        return np.asarray(np.sum(self.diff**2), dtype=pred.dtype)

    def backward(self, g):
        gp = 2 * g * self.diff
        return gp, -gp


def sum_squares(pred, target):
    """Squared Euclidean distance ``||pred - target||^2``."""
    return SumSquares.apply(pred, target)
