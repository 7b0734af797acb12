"""Shared test utilities: central finite differences and loop oracles."""

import numpy as np
from scipy import ndimage

from fonttrend.nn import Tensor

FD_STEP = 1e-6
FD_FLOOR = 1e-6  # absolute floor in the relative-error denominator


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), FD_FLOOR), initial=0.0))


def check_op_grads(op, arrays, rng, h: float = FD_STEP) -> float:
    """Max relative error between autodiff and FD for ``sum(op(*tensors) * R)``.

    A random projection R makes the scalar depend on every output entry.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    proj = rng.normal(size=out.shape)
    (out * Tensor(proj)).sum().backward()
    worst = 0.0
    for t in tensors:
        def f(t=t):
            return float((op(*[Tensor(s.data) for s in tensors]).data * proj).sum())

        worst = max(worst, rel_error(t.grad, numeric_grad(f, t.data, h)))
    return worst


def conv_loop(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Six-loop 3x3 same-padding cross-correlation for a (C,H,W) input."""
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for di in range(3):
                        for dj in range(3):
                            r, s = i + di - 1, j + dj - 1
                            if 0 <= r < h and 0 <= s < wd:
                                acc += w[o, c, di, dj] * x[c, r, s]
                out[o, i, j] = acc
    return out


def maxpool_loop(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[k, i, j] = max(x[k, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
    return out


def blocks_image(size=65, seed=0, n=7):
    """Smoothed random rectangles: plenty of corners and blobs to detect."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), 0.5)
    for _ in range(n):
        r, c = rng.integers(4, size - 20, size=2)
        h, w = rng.integers(6, 16, size=2)
        img[r : r + h, c : c + w] = rng.uniform(0, 1)
    return ndimage.gaussian_filter(img, 1.0)
