"""Shared test utilities: finite-difference gradient checking and naive oracles."""

import numpy as np

from plateattn import autograd as ag
from plateattn.autograd import Tape, Tensor, backward


def fd_gradcheck(fn, tensors, eps=1e-6, tol=1e-4, sample=None, rng=None):
    """Compare analytic gradients of scalar fn(*tensors) to central differences.

    Runs at whatever precision the tensors carry (use float64). When ``sample``
    is given, only that many coordinates per tensor are checked (seeded).
    Returns the max relative error observed.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn(*tensors)
    backward(loss, tape)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    max_rel = 0.0
    for t, an in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if sample is None or sample >= n:
            coords = range(n)
        else:
            coords = (rng or np.random.default_rng(0)).choice(n, size=sample, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            lp = fn(*tensors).item()
            flat[i] = orig - eps
            lm = fn(*tensors).item()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            a = an.reshape(-1)[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-4)
            max_rel = max(max_rel, rel)
    assert max_rel < tol, f"max relative gradient error {max_rel:.3e} >= {tol}"
    return max_rel


def naive_conv2d(x, w, stride=1, padding=0):
    """Brute-force sliding-window standard convolution, x (C,H,W), w (O,C,k,k)."""
    C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((O, Ho, Wo), dtype=x.dtype)
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                win = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = (win * w[o]).sum()
    return out


def naive_separable_conv2d(x, dw, pw, stride=1, padding=0):
    """Independent naive depthwise-then-pointwise reference."""
    C = x.shape[0]
    dw_as_full = np.zeros((C, C) + dw.shape[1:], dtype=x.dtype)
    for c in range(C):
        dw_as_full[c, c] = dw[c]
    mid = naive_conv2d(x, dw_as_full, stride, padding)
    O = pw.shape[0]
    out = np.zeros((O,) + mid.shape[1:], dtype=x.dtype)
    for o in range(O):
        out[o] = (pw[o][:, None, None] * mid).sum(axis=0)
    return out


def naive_max_pool(x, k, stride):
    C, H, W = x.shape
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    out = np.zeros((C, Ho, Wo), dtype=x.dtype)
    for c in range(C):
        for i in range(Ho):
            for j in range(Wo):
                out[c, i, j] = x[c, i * stride : i * stride + k,
                                 j * stride : j * stride + k].max()
    return out


def rand_tensor(rng, shape, scale=1.0, dtype=np.float64, requires_grad=True):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad,
                  dtype=dtype)
