"""Trainable parameters and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass(eq=False)
class Parameter:
    """A trainable tensor plus its Adam moment estimates."""

    value: Tensor
    first_moment: np.ndarray = field(default=None)
    second_moment: np.ndarray = field(default=None)
    step_count: int = 0
    name: str = ""

    def __post_init__(self):
        self.value.requires_grad = True
        if self.first_moment is None:
            self.first_moment = np.zeros_like(self.value.data)
        if self.second_moment is None:
            self.second_moment = np.zeros_like(self.value.data)

    @classmethod
    def from_array(cls, data: np.ndarray, name: str = "") -> "Parameter":
        return cls(Tensor(np.array(data, dtype=np.float64), requires_grad=True), name=name)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = None


def adam_step(
    param: Parameter,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Parameter:
    """Apply one bias-corrected Adam update to ``param`` in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ShapeError(f"adam_step: gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"adam_step: non-finite gradient for parameter {param.name or '?'}")
    t = param.step_count + 1
    param.first_moment *= beta1
    param.first_moment += (1.0 - beta1) * grad
    param.second_moment *= beta2
    param.second_moment += (1.0 - beta2) * grad * grad
    m_hat = param.first_moment / (1.0 - beta1**t)
    v_hat = param.second_moment / (1.0 - beta2**t)
    param.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.step_count = t
    return param


class Adam:
    """Adam over a fixed list of parameters."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def reset(self) -> None:
        """Zero the moment estimates and step counts (a fresh optimizer)."""
        for p in self.params:
            p.first_moment[...] = 0.0
            p.second_moment[...] = 0.0
            p.step_count = 0

    def step(self) -> None:
        # validate everything first so a bad gradient aborts the whole step
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"Adam.step: non-finite gradient for parameter {p.name or '?'}")
            grads.append(g)
        for p, g in zip(self.params, grads):
            adam_step(p, g, self.lr, self.beta1, self.beta2, self.eps)
