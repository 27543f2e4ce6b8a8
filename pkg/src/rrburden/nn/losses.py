import numpy as np

from ..errors import LengthMismatch
from .layers import _sigmoid

P_CLAMP = 1e-7


def weighted_bce(p, y, w_pos: float = 1.0):
    """Positive-weighted binary cross-entropy on probabilities.

    loss = -mean(w_pos * y * log p + (1 - y) * log(1 - p)), with p clamped to
    [1e-7, 1 - 1e-7]. Returns ``(loss, dloss/dp)``; the gradient is zero where
    the clamp is active.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"probabilities {p.shape} vs labels {y.shape}")
    if w_pos <= 0:
        raise ValueError("w_pos must be positive")
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    n = p.size
    loss = -np.mean(w_pos * y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = (-w_pos * y / pc + (1.0 - y) / (1.0 - pc)) / n
    grad = np.where((p > P_CLAMP) & (p < 1.0 - P_CLAMP), grad, 0.0)
    return float(loss), grad


def weighted_bce_logits(z, y, w_pos: float = 1.0):
    """Same loss taken on pre-sigmoid logits; gradient is w.r.t. ``z``.

    The gradient is not clamped, so saturated wrong predictions still learn.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise LengthMismatch(f"logits {z.shape} vs labels {y.shape}")
    p = _sigmoid(z)
    loss, _ = weighted_bce(p, y, w_pos)
    grad = (-w_pos * y * (1.0 - p) + (1.0 - y) * p) / z.size
    return loss, grad
