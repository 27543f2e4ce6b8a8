"""Shared minibatch training loop and F1 threshold selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import SingleClassDataset
from ..evaluation import auroc
from ..nn import AdamState, Layer, adam_step, weighted_bce_logits
from ..nn.layers import _sigmoid

log = logging.getLogger(__name__)


def select_threshold(probs, labels) -> tuple[float, float]:
    """Pick the F1-maximising cut among midpoints of adjacent distinct probabilities.

    A window is positive when its probability is >= the threshold. Ties in F1
    go to the smallest threshold. Returns ``(threshold, f1)``.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel() != 0
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClassDataset("threshold selection needs both classes")
    values, inverse = np.unique(p, return_inverse=True)
    if values.size < 2:
        return 0.5, 2 * n_pos / (2 * n_pos + (y.size - n_pos))
    pos = np.bincount(inverse, weights=y, minlength=values.size)
    neg = np.bincount(inverse, weights=~y, minlength=values.size)
    # cut j sits between values[j] and values[j+1]; positives are values[j+1:]
    tp = np.cumsum(pos[::-1])[::-1][1:]
    fp = np.cumsum(neg[::-1])[::-1][1:]
    fn = n_pos - tp
    f1 = 2 * tp / (2 * tp + fp + fn)
    j = int(np.argmax(f1))
    return float((values[j] + values[j + 1]) / 2.0), float(f1[j])


def snapshot(net: Layer) -> dict:
    return {k: v.copy() for k, v in {**net.named_params(), **net.named_buffers()}.items()}


def restore(net: Layer, snap: dict) -> None:
    for k, v in {**net.named_params(), **net.named_buffers()}.items():
        v[...] = snap[k]


def predict_logits(net: Layer, X: np.ndarray, batch: int = 256) -> np.ndarray:
    out = [net.forward(X[i : i + batch], False)[0] for i in range(0, len(X), batch)]
    return np.concatenate(out).ravel() if out else np.empty(0)


def sigmoid(z):
    return _sigmoid(np.asarray(z, dtype=np.float64))


@dataclass
class History:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_auroc)
    best_epoch: int = 0


def fit(
    net: Layer,
    X: np.ndarray,
    y: np.ndarray,
    X_val: Optional[np.ndarray],
    y_val: Optional[np.ndarray],
    *,
    lr: float,
    w_pos: float,
    batch_size: int,
    max_epochs: int,
    patience: int,
    rng: np.random.Generator,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
) -> History:
    """Adam on positive-weighted BCE over logits, early-stopped on validation AUROC.

    Validation loss breaks AUROC ties (and stands alone when the validation
    split lacks a class). The best-scoring weights are restored at the end.
    """
    state = AdamState(lr=lr)
    params = net.named_params()
    y = np.asarray(y, dtype=np.float64)
    hist = History()
    best_score, best, stale = (-np.inf, -np.inf), snapshot(net), 0
    have_val = X_val is not None and len(X_val) > 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for i in range(0, len(X), batch_size):
            idx = order[i : i + batch_size]
            logits, cache = net.forward(X[idx], True, rng)
            loss, dz = weighted_bce_logits(logits.ravel(), y[idx], w_pos)
            _, grads = net.backward(cache, dz.reshape(logits.shape))
            adam_step(params, grads, state)
            total += loss * len(idx)
        train_loss = total / len(X)
        val_auc = float("nan")
        if have_val:
            z = predict_logits(net, X_val)
            val_loss = weighted_bce_logits(z, y_val, w_pos)[0]
            try:
                val_auc = auroc(z, y_val)
            except SingleClassDataset:
                pass
            # AUROC first; validation loss separates runs of saturated AUROC
            score = (0.0 if np.isnan(val_auc) else val_auc, -val_loss)
        else:
            score = (0.0, -train_loss)
        hist.rows.append((epoch, train_loss, val_auc))
        if on_epoch:
            on_epoch(epoch, train_loss, val_auc)
        log.debug("epoch %d loss %.5f val_auroc %.5f", epoch, train_loss, val_auc)
        if score > best_score:
            best_score, best, stale = score, snapshot(net), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= patience:
                break
    restore(net, best)
    return hist


def split_groups(n_groups: int, val_fraction: float, rng: np.random.Generator):
    """Shuffle group indices into (train, validation); validation gets at least one group when n >= 2."""
    order = rng.permutation(n_groups)
    n_val = int(round(n_groups * val_fraction))
    if n_groups >= 2:
        n_val = min(max(n_val, 1), n_groups - 1)
    else:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])
