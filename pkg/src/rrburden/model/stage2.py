"""Stage 2: four severity-routed GRU sequence encoders over stage-1 features."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import EmptySequence, NoTrainingData, ShapeMismatch
from ..nn import GRU, Dense, Layer, ReLU, Sequential
from ..rr_core import WindowBatch, severity_class
from .hyperparams import Hyperparams
from .stage1 import Stage1Model, positive_weight
from .training import History, fit, predict_logits, select_threshold, sigmoid, split_groups

log = logging.getLogger(__name__)

GRU_NAMES = ("nonaf", "mild", "moderate", "severe")


class SequenceEncoder(Sequential):
    """GRU -> Dense -> ReLU -> Dense(1); outputs a logit."""

    def __init__(self, input_size: int, hidden: int, dense: int, rng):
        super().__init__([
            ("gru", GRU(input_size, hidden, rng)),
            ("dense", Dense(hidden, dense, rng)),
            ("relu", ReLU()),
            ("out", Dense(dense, 1, rng)),
        ])


class GRUPool(Layer):
    kind = "GRUPool"

    def __init__(self, encoders: Sequence[SequenceEncoder]):
        super().__init__()
        if len(encoders) != 4:
            raise ValueError("the pool holds exactly four encoders")
        self.encoders = list(encoders)

    def children(self):
        return iter(zip(GRU_NAMES, self.encoders))


def stage2_route(afb: float, total_af_seconds: float) -> int:
    """GRU index for a recording: its severity class in [NonAF, Mild, Moderate, Severe] order."""
    return int(severity_class(total_af_seconds, afb))


@dataclass
class Stage2Model:
    hp: Hyperparams
    pool: GRUPool
    threshold: float = 0.5
    seed: int = 0
    w_pos: list = field(default_factory=lambda: [1.0] * 4)
    trained: list = field(default_factory=lambda: [False] * 4)
    histories: list = field(default_factory=lambda: [History() for _ in range(4)])

    @property
    def input_size(self) -> int:
        return self.hp.embedding_width + 1

    @property
    def seq_len(self) -> int:
        return self.hp.h + 1

    def encoder(self, index: int) -> SequenceEncoder:
        return self.pool.encoders[int(index)]

    def predict(self, index: int, seqs: np.ndarray) -> np.ndarray:
        return sigmoid(predict_logits(self.encoder(index), seqs))


def build_stage2(hp: Hyperparams, seed: int = 0) -> Stage2Model:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    width = hp.embedding_width + 1
    pool = GRUPool([SequenceEncoder(width, hp.gru_hidden, hp.stage2_dense, rng) for _ in range(4)])
    return Stage2Model(hp=hp, pool=pool, seed=seed)


def window_features(probs, embeddings, threshold: float, binary: bool = False) -> np.ndarray:
    """Per-window stage-2 input: embedding followed by the stage-1 output."""
    probs = np.asarray(probs, dtype=np.float64)
    out = probs >= threshold if binary else probs
    return np.concatenate([np.asarray(embeddings), out.astype(np.float64)[:, None]], axis=1)


def history_sequences(features: np.ndarray, h: int) -> np.ndarray:
    """Window i's sequence = features of windows i-h..i, zero-padded at the front.

    Returns (n, h + 1, d), earliest first.
    """
    n, d = features.shape
    padded = np.concatenate([np.zeros((h, d)), features], axis=0)
    return np.ascontiguousarray(sliding_window_view(padded, h + 1, axis=0).transpose(0, 2, 1))


def pad_sequence(seq, length: int) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptySequence("stage-2 input needs at least one timestep")
    if seq.shape[0] > length:
        raise ShapeMismatch(f"sequence of {seq.shape[0]} steps exceeds {length}")
    return np.concatenate([np.zeros((length - seq.shape[0], seq.shape[1])), seq], axis=0)


def stage2_infer(m2: Stage2Model, gru_index: int, seq) -> float:
    """Probability for the last window of ``seq`` (earliest first, 1..h+1 steps)."""
    x = pad_sequence(seq, m2.seq_len)
    if x.shape[1] != m2.input_size:
        raise ShapeMismatch(f"stage-2 features must have width {m2.input_size}, got {x.shape[1]}")
    return float(m2.predict(gru_index, x[None])[0])


@dataclass
class Stage2Example:
    """One recording's stage-2 training material."""

    sequences: np.ndarray  # (n_windows, h+1, d)
    labels: np.ndarray
    route: int


def stage2_examples(
    m1: Stage1Model,
    recordings: Sequence[WindowBatch],
    true_burdens: Sequence[tuple[float, float]],
    binary_input: bool = False,
) -> list[Stage2Example]:
    """Stage-1 features per recording, routed by the TRUE (afb, AF seconds)."""
    out = []
    for wb, (afb, secs) in zip(recordings, true_burdens):
        probs, embs = m1.predict(wb.rr)
        feats = window_features(probs, embs, m1.threshold, binary_input)
        out.append(Stage2Example(history_sequences(feats, m1.hp.h), wb.ref_label.copy(),
                                 stage2_route(afb, secs)))
    return out


def train_stage2(
    m2: Stage2Model,
    examples: Sequence[Stage2Example],
    seed: Optional[int] = None,
) -> Stage2Model:
    """Train each GRU only on recordings of its severity partition.

    A partition with no recordings keeps its initial weights (with a
    warning). The decision threshold is chosen on pooled training outputs.
    """
    hp = m2.hp
    seed = m2.seed if seed is None else seed
    if not examples:
        raise NoTrainingData("no recordings for stage 2")
    pooled_p, pooled_y = [], []
    for index, name in enumerate(GRU_NAMES):
        part = [e for e in examples if e.route == index]
        if not part:
            warnings.warn(f"stage 2: no training recordings for the {name} GRU; keeping initial weights")
            continue
        ss = np.random.SeedSequence([seed, 4, index])
        split_rng, train_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        tr, va = split_groups(len(part), hp.val_fraction, split_rng)
        X = np.concatenate([part[i].sequences for i in tr])
        y = np.concatenate([part[i].labels for i in tr])
        X_va = np.concatenate([part[i].sequences for i in va]) if len(va) else None
        y_va = np.concatenate([part[i].labels for i in va]) if len(va) else None
        m2.w_pos[index] = positive_weight(y)
        log.info("stage 2 %s: %d recordings, %d windows, w_pos=%.3f", name, len(part), len(y), m2.w_pos[index])
        m2.histories[index] = fit(
            m2.encoder(index), X, y, X_va, y_va,
            lr=hp.alpha, w_pos=m2.w_pos[index], batch_size=hp.batch_size,
            max_epochs=hp.max_epochs, patience=hp.patience, rng=train_rng,
        )
        m2.trained[index] = True
        pooled_p.append(m2.predict(index, X))
        pooled_y.append(y)
    m2.threshold, f1 = select_threshold(np.concatenate(pooled_p), np.concatenate(pooled_y))
    log.info("stage 2: threshold %.4f (pooled train F1 %.4f)", m2.threshold, f1)
    return m2
