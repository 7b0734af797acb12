"""Differentiable layer primitives.

Image ops take ``(C, H, W)`` or a batch ``(N, C, H, W)``; dense ops take
``(N_in,)`` or ``(B, N_in)``. Batched results equal the per-sample loop.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_node, wants_grad


def _batched4(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"{op}: expected (C,H,W) or (N,C,H,W) input, got {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 (spatial size kept)."""
    xd, squeeze = _batched4(x, "conv2d")
    w, b = weight.data, bias.data
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: weight must be (C_out, C_in, 3, 3), got {w.shape}")
    c_out, c_in = w.shape[:2]
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != weight C_in {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias must be ({c_out},), got {b.shape}")
    h, wd = xd.shape[2:]
    if h < 1 or wd < 1:
        raise ShapeError(f"conv2d: empty spatial extent H={h}, W={wd}")

    padded = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))  # N,C,H,W,3,3
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[None, :, None, None]
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        if wants_grad(weight):
            weight._accumulate(np.tensordot(g4, windows, axes=([0, 2, 3], [0, 2, 3])))
        if wants_grad(bias):
            bias._accumulate(g4.sum(axis=(0, 2, 3)))
        if wants_grad(x):
            gp = np.pad(g4, ((0, 0), (0, 0), (1, 1), (1, 1)))
            gwin = sliding_window_view(gp, (3, 3), axis=(2, 3))  # N,O,H,W,3,3
            flipped = w[:, :, ::-1, ::-1]
            dx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
            x._accumulate(dx[0] if squeeze else dx)

    return make_node(out, (x, weight, bias), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; an odd trailing row/column is dropped."""
    xd, squeeze = _batched4(x, "maxpool2x2")
    n, c, h, w = xd.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2: spatial size must be >= 2, got H={h}, W={w}")
    ho, wo = h // 2, w // 2
    cropped = xd[:, :, : 2 * ho, : 2 * wo]
    # window cells in row-major order: (0,0), (0,1), (1,0), (1,1)
    cells = cropped.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = cells.argmax(axis=-1)
    out = np.take_along_axis(cells, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        routed = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(routed, arg[..., None], g4[..., None], axis=-1)
        full = np.zeros((n, c, h, w))
        full[:, :, : 2 * ho, : 2 * wo] = (
            routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        )
        x._accumulate(full[0] if squeeze else full)

    return make_node(out, (x,), backward)


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (C,H,W) -> (C,), (N,C,H,W) -> (N,C)."""
    xd, squeeze = _batched4(x, "global_average_pool")
    h, w = xd.shape[2:]
    if h < 1 or w < 1:
        raise ShapeError("global_average_pool: empty spatial extent")
    out = xd.mean(axis=(2, 3))
    if squeeze:
        out = out[0]

    def backward(g):
        spread = np.broadcast_to(g[..., None, None] / (h * w), x.shape)
        x._accumulate(spread)

    return make_node(out, (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ W.T + b`` with W of shape (N_out, N_in)."""
    if x.ndim not in (1, 2):
        raise ShapeError(f"dense: expected (N_in,) or (B, N_in) input, got {x.shape}")
    w, b = weight.data, bias.data
    if w.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: input length {x.shape[-1]} != weight N_in {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"dense: bias must be ({w.shape[0]},), got {b.shape}")
    out = x.data @ w.T + b

    def backward(g):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(x.data)
        if wants_grad(weight):
            weight._accumulate(g2.T @ x2)
        if wants_grad(bias):
            bias._accumulate(g2.sum(axis=0))
        if wants_grad(x):
            x._accumulate((g2 @ w).reshape(x.shape))

    return make_node(out, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return make_node(x.data * mask, (x,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) while training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        x._accumulate(g * scale)

    return make_node(x.data * scale, (x,), backward)
