"""Random search over the hyperparameter space with k-fold CV by recording."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptySpace, SingleClassDataset
from ..evaluation import auroc
from ..rr_core import Recording, window_batch
from .hyperparams import SEARCH_SPACE, Hyperparams, SearchDim
from .stage1 import build_stage1, train_stage1

log = logging.getLogger(__name__)


@dataclass
class Trial:
    index: int
    hp: Hyperparams
    fold_auroc: list
    mean_auroc: float


def kfold_groups(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(order, k)]


def hyper_search(
    recordings: Sequence[Recording],
    trials: int,
    folds: int = 5,
    seed: int = 0,
    base: Optional[Hyperparams] = None,
    space: Optional[dict[str, SearchDim]] = None,
    allow_out_of_range: bool = False,
) -> tuple[Hyperparams, list[Trial]]:
    """Sample ``trials`` configs, score each by mean held-out-fold window AUROC.

    Only stage 1 is trained per fold. Returns the best config and every trial.
    """
    space = SEARCH_SPACE if space is None else space
    if not space:
        raise EmptySpace("search space has no dimensions")
    if trials < 1 or folds < 2:
        raise ValueError("need trials >= 1 and folds >= 2")
    if len(recordings) < folds:
        raise ValueError(f"{len(recordings)} recordings cannot form {folds} folds")
    ss = np.random.SeedSequence([seed, 5])
    sample_rng, fold_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    fold_idx = kfold_groups(len(recordings), folds, fold_rng)
    base = base or Hyperparams()
    results = []
    cache: dict[int, list] = {}
    for t in range(trials):
        drawn = {name: dim.sample(sample_rng) for name, dim in space.items()}
        hp = replace(base, **drawn)
        if hp.w_s not in cache:
            cache[hp.w_s] = [window_batch(r, hp.w_s) for r in recordings]
        batches = cache[hp.w_s]
        scores = []
        for f, val in enumerate(fold_idx):
            val_set = set(val.tolist())
            train = [b for i, b in enumerate(batches) if i not in val_set]
            m = build_stage1(hp, seed=seed + 1000 * t + f, allow_out_of_range=allow_out_of_range)
            try:
                train_stage1(m, train)
                probs, _ = m.predict(np.concatenate([batches[i].rr for i in val]))
                scores.append(auroc(probs, np.concatenate([batches[i].ref_label for i in val])))
            except SingleClassDataset:
                scores.append(float("nan"))
        mean = float(np.nanmean(scores)) if not np.all(np.isnan(scores)) else float("nan")
        log.info("trial %d: mean AUROC %.4f %s", t, mean, drawn)
        results.append(Trial(t, hp, scores, mean))
    scored = [r for r in results if not np.isnan(r.mean_auroc)] or results
    best = max(scored, key=lambda r: (np.nan_to_num(r.mean_auroc, nan=-1.0), -r.index))
    return best.hp, results
