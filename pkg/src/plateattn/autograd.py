"""Minimal dense-tensor kernel with reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Operations executed while a Tape is active record
backward rules onto it (define-by-run); ``backward(loss, tape)`` replays the
tape in reverse and accumulates gradients into every reachable tensor with
``requires_grad=True``. Default precision is float32; gradient-check tests
switch to float64 via the ``precision`` context manager.
"""

from __future__ import annotations

import threading
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "ContractViolation",
    "Tensor",
    "Tape",
    "precision",
    "default_dtype",
    "add",
    "sub",
    "mul",
    "matmul",
    "affine",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "tsum",
    "tmean",
    "tabs",
    "square",
    "concat",
    "reshape",
    "gather_rows",
    "depthwise_conv2d",
    "pointwise_conv2d",
    "separable_conv2d",
    "max_pool2d",
    "upsample_nearest",
    "cross_entropy",
    "lstm_cell",
    "backward",
]


class ContractViolation(ValueError):
    """An operation was called outside its stated contract."""


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _dtype_stack():
    if not hasattr(_state, "dtypes"):
        _state.dtypes = [np.float32]
    return _state.dtypes


def default_dtype():
    return _dtype_stack()[-1]


class precision:
    """Context manager switching the default float dtype (e.g. float64)."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype).type

    def __enter__(self):
        _dtype_stack().append(self.dtype)
        return self

    def __exit__(self, *exc):
        _dtype_stack().pop()
        return False


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return _getitem(self, key)


class Tape:
    """Ordered record of operations for one forward pass.

    One backward pass per tape; replaying a consumed tape is an error.
    """

    def __init__(self):
        self.ops = []  # (output Tensor, backward fn taking grad ndarray)
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, out: Tensor, fn):
        self.ops.append((out, fn))


def _active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_array(x, dtype) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype)


def _record(out: Tensor, inputs: Sequence, fn):
    tape = _active_tape()
    if tape is None:
        return out
    if any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast input."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor, tape: Tape):
    """Reverse-replay the tape, populating grads of reachable tensors."""
    if loss.size != 1:
        raise ContractViolation(f"backward requires a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractViolation("tape already consumed by a previous backward pass")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.ops):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    ad = _as_array(a, default_dtype())
    bd = _as_array(b, ad.dtype)
    out = Tensor(ad + bd, dtype=(ad + bd).dtype)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g, a.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    ad = _as_array(a, default_dtype())
    bd = _as_array(b, ad.dtype)
    out = Tensor(ad - bd, dtype=(ad - bd).dtype)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g, a.shape))
        if isinstance(b, Tensor):
            b._accum(-_unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    ad = _as_array(a, default_dtype())
    bd = _as_array(b, ad.dtype)
    out = Tensor(ad * bd, dtype=(ad * bd).dtype)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g * bd, a.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(g * ad, b.shape))

    return _record(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    ad = _as_array(a, default_dtype())
    bd = _as_array(b, ad.dtype)
    if ad.ndim != 2 or bd.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    if ad.shape[1] != bd.shape[0]:
        raise ContractViolation(f"matmul inner dims differ: {ad.shape[1]} vs {bd.shape[0]}")
    out = Tensor(ad @ bd, dtype=ad.dtype)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(g @ bd.T)
        if isinstance(b, Tensor):
            b._accum(ad.T @ g)

    return _record(out, (a, b), bwd)


def affine(x, W, b) -> Tensor:
    """out = W @ x + b for vectors, or x @ W.T + b for a batch of rows."""
    xd = _as_array(x, default_dtype())
    Wd = _as_array(W, xd.dtype)
    bd = _as_array(b, xd.dtype)
    vector_in = xd.ndim == 1
    x2 = xd[None, :] if vector_in else xd
    if x2.ndim != 2:
        raise ContractViolation("affine input must be 1-D or 2-D")
    if Wd.ndim != 2 or Wd.shape[1] != x2.shape[1]:
        raise ContractViolation(
            f"affine weight shape {Wd.shape} incompatible with input dim {x2.shape[1]}"
        )
    if bd.shape != (Wd.shape[0],):
        raise ContractViolation(f"affine bias shape {bd.shape} != ({Wd.shape[0]},)")
    y = x2 @ Wd.T + bd
    out = Tensor(y[0] if vector_in else y, dtype=xd.dtype)

    def bwd(g):
        g2 = g[None, :] if vector_in else g
        if isinstance(x, Tensor):
            gx = g2 @ Wd
            x._accum(gx[0] if vector_in else gx)
        if isinstance(W, Tensor):
            W._accum(g2.T @ x2)
        if isinstance(b, Tensor):
            b._accum(g2.sum(axis=0))

    return _record(out, (x, W, b), bwd)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = Tensor(np.where(pos, x.data, 0), dtype=x.data.dtype)

    def bwd(g):
        x._accum(np.where(pos, g, 0))

    return _record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, dtype=x.data.dtype)

    def bwd(g):
        x._accum(g * (1.0 - y * y))

    return _record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y, dtype=x.data.dtype)

    def bwd(g):
        x._accum(g * y * (1.0 - y))

    return _record(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Numerically stable softmax; masked entries get exactly zero weight."""
    xd = x.data
    if xd.shape[axis] == 0:
        raise ContractViolation("softmax over an empty axis")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != xd.shape:
            raise ContractViolation(f"softmax mask shape {mask.shape} != input {xd.shape}")
        if not mask.any(axis=axis).all():
            raise ContractViolation("softmax row with no valid entries")
        xm = np.where(mask, xd, -np.inf)
    else:
        xm = xd
    z = xm - xm.max(axis=axis, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, dtype=xd.dtype)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        gx = y * (g - dot)
        x._accum(gx)

    return _record(out, (x,), bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def bwd(g):
        if axis is None:
            x._accum(np.broadcast_to(g, x.shape).astype(x.data.dtype))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x._accum(np.broadcast_to(ge, x.shape).astype(x.data.dtype))

    return _record(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def tabs(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data), dtype=x.data.dtype)

    def bwd(g):
        x._accum(g * np.sign(x.data))

    return _record(out, (x,), bwd)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    out = Tensor(np.concatenate(arrays, axis=axis), dtype=arrays[0].dtype)
    sizes = [a.shape[axis] for a in arrays]

    def bwd(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            t._accum(g[tuple(sl)])
            start += n

    return _record(out, tuple(tensors), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), dtype=x.data.dtype)

    def bwd(g):
        x._accum(g.reshape(x.shape))

    return _record(out, (x,), bwd)


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)


def _getitem(x: Tensor, key) -> Tensor:
    out = Tensor(x.data[key], dtype=x.data.dtype)
    basic = _is_basic_key(key)

    def bwd(g):
        gx = np.zeros_like(x.data)
        if basic:  # basic slices never alias, direct assignment is safe
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        x._accum(gx)

    return _record(out, (x,), bwd)


def gather_rows(W: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor by integer index (embedding lookup)."""
    idx = np.asarray(idx, dtype=np.int64)
    if W.data.ndim != 2:
        raise ContractViolation("gather_rows expects a 2-D table")
    if idx.size and (idx.min() < 0 or idx.max() >= W.shape[0]):
        raise ContractViolation(f"gather index out of range 0..{W.shape[0] - 1}")
    out = Tensor(W.data[idx], dtype=W.data.dtype)

    def bwd(g):
        gw = np.zeros_like(W.data)
        np.add.at(gw, idx, g)
        W._accum(gw)

    return _record(out, (W,), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling


def _as_nchw(x: Tensor):
    if x.data.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.data.ndim == 4:
        return x, False
    raise ContractViolation(f"expected CHW or NCHW input, got ndim {x.data.ndim}")


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel spatial convolution, NCHW input, weight (C, k, k)."""
    x4, squeeze = _as_nchw(x)
    xd, wd = x4.data, w.data
    N, C, H, W = xd.shape
    if wd.ndim != 3 or wd.shape[1] != wd.shape[2]:
        raise ContractViolation(f"depthwise weight must be (C, k, k), got {wd.shape}")
    Cw, k, _ = wd.shape
    if Cw != C:
        raise ContractViolation(f"depthwise channel mismatch: input {C} vs weight {Cw}")
    if k % 2 == 0:
        raise ContractViolation(f"kernel size must be odd, got {k}")
    if stride < 1 or padding < 0:
        raise ContractViolation("stride must be >= 1 and padding >= 0")
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ContractViolation(f"kernel {k} larger than padded input {H}x{W}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_d = np.zeros((N, C, Ho, Wo), dtype=xd.dtype)
    for u in range(k):
        for v in range(k):
            out_d += (
                xp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride]
                * wd[:, u, v][None, :, None, None]
            )
    out = Tensor(out_d, dtype=xd.dtype)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for u in range(k):
            for v in range(k):
                patch = xp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride]
                gw[:, u, v] += (g * patch).sum(axis=(0, 2, 3))
                gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += (
                    g * wd[:, u, v][None, :, None, None]
                )
        if isinstance(w, Tensor):
            w._accum(gw)
        if padding:
            gx = gxp[:, :, padding:-padding, padding:-padding]
        else:
            gx = gxp
        x4._accum(gx)

    res = _record(out, (x4, w), bwd)
    return reshape(res, res.shape[1:]) if squeeze else res


def pointwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """1x1 convolution mixing channels, weight (C_out, C_in)."""
    x4, squeeze = _as_nchw(x)
    xd, wd = x4.data, w.data
    N, C, H, W = xd.shape
    if wd.ndim != 2:
        raise ContractViolation(f"pointwise weight must be (C_out, C_in), got {wd.shape}")
    if wd.shape[1] != C:
        raise ContractViolation(f"pointwise channel mismatch: input {C} vs weight {wd.shape[1]}")
    xr = xd.transpose(0, 2, 3, 1).reshape(-1, C)
    yr = xr @ wd.T
    out = Tensor(yr.reshape(N, H, W, wd.shape[0]).transpose(0, 3, 1, 2), dtype=xd.dtype)

    def bwd(g):
        gr = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, wd.shape[0])
        if isinstance(w, Tensor):
            w._accum(gr.T @ xr)
        gx = (gr @ wd).reshape(N, H, W, C).transpose(0, 3, 1, 2)
        x4._accum(gx)

    res = _record(out, (x4, w), bwd)
    return reshape(res, res.shape[1:]) if squeeze else res


def separable_conv2d(x: Tensor, dw_weight: Tensor, pw_weight: Tensor,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Depthwise convolution followed by a 1x1 pointwise convolution."""
    return pointwise_conv2d(depthwise_conv2d(x, dw_weight, stride, padding), pw_weight)


def max_pool2d(x: Tensor, k, stride=None) -> Tensor:
    """Max pooling, no padding. Gradient goes to the argmax cell only
    (ties broken toward the lowest flat index)."""
    x4, squeeze = _as_nchw(x)
    kh, kw = (k, k) if isinstance(k, int) else k
    if stride is None:
        stride = (kh, kw)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    xd = x4.data
    N, C, H, W = xd.shape
    if H < kh or W < kw:
        raise ContractViolation(f"pool window {kh}x{kw} larger than input {H}x{W}")
    Ho = (H - kh) // sh + 1
    Wo = (W - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw].reshape(N, C, Ho, Wo, kh * kw)
    flat_idx = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, flat_idx[..., None], axis=-1)[..., 0], dtype=xd.dtype)

    def bwd(g):
        gx = np.zeros_like(xd)
        u, v = flat_idx // kw, flat_idx % kw
        n_i, c_i, i_i, j_i = np.indices((N, C, Ho, Wo), sparse=False)
        np.add.at(gx, (n_i, c_i, i_i * sh + u, j_i * sw + v), g)
        x4._accum(gx)

    res = _record(out, (x4,), bwd)
    return reshape(res, res.shape[1:]) if squeeze else res


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    x4, squeeze = _as_nchw(x)
    xd = x4.data
    N, C, H, W = xd.shape
    out = Tensor(xd.repeat(factor, axis=2).repeat(factor, axis=3), dtype=xd.dtype)

    def bwd(g):
        gr = g.reshape(N, C, H, factor, W, factor).sum(axis=(3, 5))
        x4._accum(gr)

    res = _record(out, (x4,), bwd)
    return reshape(res, res.shape[1:]) if squeeze else res


# ---------------------------------------------------------------------------
# loss / recurrent


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    targets = np.asarray(targets, dtype=np.int64)
    ld = logits.data
    if ld.ndim != 2:
        raise ContractViolation("cross_entropy expects (T, V) logits")
    T, V = ld.shape
    if T < 1:
        raise ContractViolation("cross_entropy needs at least one row")
    if targets.shape != (T,):
        raise ContractViolation(f"targets shape {targets.shape} != ({T},)")
    if targets.min() < 0 or targets.max() >= V:
        raise ContractViolation(f"target index out of range 0..{V - 1}")
    z = ld - ld.max(axis=1, keepdims=True)
    ez = np.exp(z)
    zsum = ez.sum(axis=1)
    nll = np.log(zsum) - z[np.arange(T), targets]
    out = Tensor(nll.mean(), dtype=ld.dtype)

    def bwd(g):
        p = ez / zsum[:, None]
        p[np.arange(T), targets] -= 1.0
        logits._accum(p * (g / T))

    return _record(out, (logits,), bwd)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor):
    """One LSTM step. Weight W has shape (4*H, d_in + H), bias (4*H,);
    gate order: input, forget, candidate, output. Accepts vectors or
    batched rows."""
    hd = h.shape[-1]
    if W.shape != (4 * hd, x.shape[-1] + hd):
        raise ContractViolation(
            f"lstm weight shape {W.shape} != ({4 * hd}, {x.shape[-1] + hd})"
        )
    xh = concat([x, h], axis=-1 if x.data.ndim == 1 else 1)
    gates = affine(xh, W, b)
    if gates.data.ndim == 1:
        gi, gf, gc, go = (gates[i * hd : (i + 1) * hd] for i in range(4))
    else:
        gi, gf, gc, go = (gates[:, i * hd : (i + 1) * hd] for i in range(4))
    i_g = sigmoid(gi)
    f_g = sigmoid(gf)
    c_hat = tanh(gc)
    o_g = sigmoid(go)
    c_new = add(mul(f_g, c), mul(i_g, c_hat))
    h_new = mul(o_g, tanh(c_new))
    return h_new, c_new
