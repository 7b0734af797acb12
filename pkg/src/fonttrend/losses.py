"""Regression losses: MSE, L1, Huber and Tukey's biweight.

All losses are means over the batch. Tukey residuals are optionally divided
by a robust scale, ``1.4826 * MAD`` of the raw residuals; the scale is held
constant when differentiating (the usual IRLS treatment).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .nn.tensor import Tensor, make_node, wants_grad

MAD_TO_SIGMA = 1.4826
TUKEY_C = 4.685


class LossKind(str, enum.Enum):
    MSE = "MSE"
    L1 = "L1"
    HUBER = "HUBER"
    TUKEY = "TUKEY"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.MSE
    tukey_c: float = TUKEY_C
    huber_delta: float = 1.0
    mad_scaling: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.tukey_c <= 0:
            raise ValueError(f"tukey_c must be positive, got {self.tukey_c}")
        if self.huber_delta <= 0:
            raise ValueError(f"huber_delta must be positive, got {self.huber_delta}")


def _check(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0 or t.size == 0:
        raise ValueError("loss of an empty batch")
    if p.shape != t.shape:
        raise ValueError(f"predictions ({p.size}) and targets ({t.size}) differ in length")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite predictions or targets")
    return p, t


def robust_scale(residuals: np.ndarray) -> float:
    """``1.4826 * median(|e - median(e)|)``; 1.0 when that is zero."""
    e = np.asarray(residuals, dtype=np.float64)
    mad = np.median(np.abs(e - np.median(e)))
    scale = MAD_TO_SIGMA * mad
    return float(scale) if scale > 0 else 1.0


def tukey_rho(r: np.ndarray, c: float = TUKEY_C) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    inside = np.abs(r) <= c
    u = np.where(inside, 1.0 - (r / c) ** 2, 0.0)
    return (c * c / 6.0) * (1.0 - u**3)


def tukey_psi(r: np.ndarray, c: float = TUKEY_C) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    inside = np.abs(r) <= c
    return np.where(inside, r * (1.0 - (r / c) ** 2) ** 2, 0.0)


def _tukey_scale(spec: LossSpec, residuals: np.ndarray, scale: float | None) -> float:
    if scale is not None:
        return float(scale)
    return robust_scale(residuals) if spec.mad_scaling else 1.0


def loss_value(spec: LossSpec, predictions, targets, scale: float | None = None) -> float:
    """Mean loss over the batch.

    ``scale`` overrides the Tukey residual scale (otherwise computed from the
    batch when ``spec.mad_scaling`` is on); other kinds ignore it.
    """
    p, t = _check(predictions, targets)
    e = p - t
    if spec.kind is LossKind.MSE:
        return float(np.mean(e * e))
    if spec.kind is LossKind.L1:
        return float(np.mean(np.abs(e)))
    if spec.kind is LossKind.HUBER:
        d = spec.huber_delta
        a = np.abs(e)
        return float(np.mean(np.where(a <= d, 0.5 * e * e, d * (a - 0.5 * d))))
    s = _tukey_scale(spec, e, scale)
    return float(np.mean(tukey_rho(e / s, spec.tukey_c)))


def loss_gradient(spec: LossSpec, predictions, targets, scale: float | None = None) -> np.ndarray:
    """d(loss_value)/d(prediction_i), with the Tukey scale held fixed."""
    p, t = _check(predictions, targets)
    e = p - t
    n = e.size
    if spec.kind is LossKind.MSE:
        return 2.0 * e / n
    if spec.kind is LossKind.L1:
        return np.sign(e) / n
    if spec.kind is LossKind.HUBER:
        d = spec.huber_delta
        return np.clip(e, -d, d) / n
    s = _tukey_scale(spec, e, scale)
    return tukey_psi(e / s, spec.tukey_c) / (s * n)


def loss_tensor(spec: LossSpec, predictions: Tensor, targets) -> Tensor:
    """Scalar loss node whose backward feeds :func:`loss_gradient`."""
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    p = predictions.data.reshape(-1)
    e = p - t
    scale = _tukey_scale(spec, e, None) if spec.kind is LossKind.TUKEY else None
    value = loss_value(spec, p, t, scale=scale)
    grad = loss_gradient(spec, p, t, scale=scale).reshape(predictions.shape)

    def backward(g):
        if wants_grad(predictions):
            predictions._accumulate(g * grad)

    return make_node(np.asarray(value), (predictions,), backward)
