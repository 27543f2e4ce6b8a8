"""Stage 1: residual 1-D CNN window classifier and embedding extractor."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeMismatch, SingleClassDataset
from ..nn import Dense, Dropout, Flatten, Layer, MaxPool1D, ReLU, ResidualBlock, Sequential
from ..rr_core import WindowBatch
from .hyperparams import Hyperparams
from .training import History, fit, select_threshold, sigmoid, split_groups

log = logging.getLogger(__name__)

RR_CLIP_MS = (200.0, 3000.0)
RR_CENTER_S = 0.8
RR_SCALE_S = 0.25


def normalize_rr(rr_ms) -> np.ndarray:
    """Fixed, dataset-independent input transform: clip, to seconds, centre, scale."""
    x = np.clip(np.asarray(rr_ms, dtype=np.float64), *RR_CLIP_MS)
    return (x / 1000.0 - RR_CENTER_S) / RR_SCALE_S


class Stage1Net(Layer):
    """Residual blocks -> flatten -> three dense/dropout stages -> logit.

    ``forward`` returns the logit, shape (B, 1); ``embed`` also returns the
    third dense activation.
    """

    kind = "Stage1Net"

    def __init__(self, hp: Hyperparams, rng: np.random.Generator):
        super().__init__()
        self.hp = hp
        layers = []
        channels = 1
        for i, filters in enumerate(hp.block_filters):
            layers.append((f"block{i}", ResidualBlock(channels, filters, hp.f_l, rng)))
            channels = filters
            if i % 2 == 1:
                layers.append((f"pool{i}", MaxPool1D(2)))
                layers.append((f"drop{i}", Dropout(hp.d_r1)))
        self.features = Sequential(layers)
        flat = int(np.prod(self.features.output_shape((hp.w_s - 1, 1))))
        widths = [hp.n_hu, hp.n_hu // 2, hp.n_hu // 4]
        head = [("flatten", Flatten())]
        prev = flat
        for j, w in enumerate(widths):
            head += [(f"dense{j}", Dense(prev, w, rng)), (f"relu{j}", ReLU()), (f"drop{j}", Dropout(hp.d_r2))]
            prev = w
        self.head = Sequential(head)
        self.classifier = Dense(prev, 1, rng)

    def children(self):
        yield "features", self.features
        yield "head", self.head
        yield "classifier", self.classifier

    def output_shape(self, shape):
        return (1,)

    def layer_shapes(self) -> list[tuple[str, tuple]]:
        """Per-sample output shape after every top-level feature/head layer."""
        shape = (self.hp.w_s - 1, 1)
        out = []
        for name, layer in list(self.features.layers) + list(self.head.layers):
            shape = layer.output_shape(shape)
            out.append((name, shape))
        return out

    def embed(self, x, train=False, rng=None):
        f, cf = self.features.forward(x, train, rng)
        e, ch = self.head.forward(f, train, rng)
        z, cc = self.classifier.forward(e, train, rng)
        return z, e, (cf, ch, cc)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[1:] != (self.hp.w_s - 1, 1):
            raise ShapeMismatch(f"stage 1 expects (B, {self.hp.w_s - 1}, 1), got {x.shape}")
        z, _, cache = self.embed(x, train, rng)
        return z, cache

    def backward(self, cache, grad_out):
        cf, ch, cc = cache
        g, gc = self.classifier.backward(cc, grad_out)
        g, gh = self.head.backward(ch, g)
        g, gf = self.features.backward(cf, g)
        grads = {f"classifier.{k}": v for k, v in gc.items()}
        grads.update({f"head.{k}": v for k, v in gh.items()})
        grads.update({f"features.{k}": v for k, v in gf.items()})
        return g, grads


@dataclass
class Stage1Model:
    hp: Hyperparams
    net: Stage1Net
    threshold: float = 0.5
    seed: int = 0
    w_pos: float = 1.0
    history: History = field(default_factory=History)

    def predict(self, rr_windows, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities (n,) and embeddings (n, n_hu // 4) for raw RR windows in ms."""
        X = to_input(rr_windows, self.hp.w_s)
        probs, embs = [], []
        for i in range(0, len(X), batch):
            z, e, _ = self.net.embed(X[i : i + batch], False)
            probs.append(sigmoid(z.ravel()))
            embs.append(e)
        if not probs:
            return np.empty(0), np.empty((0, self.hp.embedding_width))
        return np.concatenate(probs), np.concatenate(embs)


def to_input(rr_windows, w_s: int) -> np.ndarray:
    X = np.asarray(rr_windows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != w_s - 1:
        raise ShapeMismatch(f"windows must have {w_s - 1} RR values, got shape {X.shape}")
    return normalize_rr(X)[:, :, None]


def build_stage1(hp: Hyperparams, seed: int = 0, allow_out_of_range: bool = False) -> Stage1Model:
    hp.validate(allow_out_of_range)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return Stage1Model(hp=hp, net=Stage1Net(hp, rng), seed=seed)


def stage1_infer(m: Stage1Model, window_rr) -> tuple[float, np.ndarray]:
    probs, embs = m.predict(np.asarray(window_rr, dtype=np.float64)[None, :])
    return float(probs[0]), embs[0]


def positive_weight(y) -> float:
    """N_neg / N_pos, or 1 when either class is absent."""
    y = np.asarray(y)
    n_pos = int(np.count_nonzero(y))
    return 1.0 if n_pos in (0, y.size) else (y.size - n_pos) / n_pos


def _stack(batches: Sequence[WindowBatch]):
    if not batches:
        return np.empty((0, 0)), np.empty(0, dtype=np.int8)
    return np.concatenate([b.rr for b in batches]), np.concatenate([b.ref_label for b in batches])


def train_stage1(
    m: Stage1Model,
    recordings: Sequence[WindowBatch],
    seed: Optional[int] = None,
    on_epoch=None,
) -> Stage1Model:
    """Train on windows grouped by recording; validation is a per-recording split."""
    hp = m.hp
    seed = m.seed if seed is None else seed
    ss = np.random.SeedSequence([seed, 2])
    split_rng, train_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    tr_idx, va_idx = split_groups(len(recordings), hp.val_fraction, split_rng)
    X_tr, y_tr = _stack([recordings[i] for i in tr_idx])
    X_va, y_va = _stack([recordings[i] for i in va_idx])
    n_pos = int(np.count_nonzero(y_tr))
    if n_pos == 0 or n_pos == len(y_tr):
        raise SingleClassDataset("stage-1 training split has a single class")
    m.w_pos = positive_weight(y_tr)
    log.info("stage 1: %d train / %d val windows, w_pos=%.3f", len(y_tr), len(y_va), m.w_pos)
    m.history = fit(
        m.net,
        to_input(X_tr, hp.w_s),
        y_tr,
        to_input(X_va, hp.w_s) if len(y_va) else None,
        y_va,
        lr=hp.alpha,
        w_pos=m.w_pos,
        batch_size=hp.batch_size,
        max_epochs=hp.max_epochs,
        patience=hp.patience,
        rng=train_rng,
        on_epoch=on_epoch,
    )
    probs, _ = m.predict(X_tr)
    m.threshold, f1 = select_threshold(probs, y_tr)
    log.info("stage 1: threshold %.4f (train F1 %.4f)", m.threshold, f1)
    return m
