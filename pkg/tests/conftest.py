"""Shared fixtures: tiny cohorts for fast tests, one acceptance-scale trained model."""

import logging
import time
from dataclasses import dataclass

import numpy as np
import pytest

from rrburden.data_gen import GenConfig, gen_cohort
from rrburden.model import Hyperparams, build_stage1, build_stage2, train_stage1, train_stage2
from rrburden.model.stage2 import stage2_examples
from rrburden.rr_core import true_burden, window_batch

# Reduced network used for desk-scale training; every value is inside the search space.
ACCEPT_HP = Hyperparams(n_b=3, n_f=32, f_l=5, n_hu=64, alpha=1e-3, gru_hidden=32,
                        batch_size=128, max_epochs=6)
BURDENS = (0.0, 2.0, 40.0, 95.0)
# AT episodes (fast but regular, non-AF_l) keep rate from standing in for irregularity
AT_FRACTION = 0.1

TINY_HP = Hyperparams(n_b=2, n_f=4, f_l=3, n_hu=16, alpha=3e-3, h=3, gru_hidden=6,
                      stage2_dense=4, batch_size=64, max_epochs=3)


@dataclass
class Trained:
    hp: Hyperparams
    m1: object
    m2: object
    train: list
    test: list
    afl: list
    seconds: float


@pytest.fixture(scope="session")
def trained():
    """The acceptance-scale run: 200 x 2 h training recordings, 50 held out, 20 AFL."""
    logging.getLogger("rrburden").setLevel(logging.WARNING)
    t0 = time.perf_counter()
    train = [r for r, _ in gen_cohort(GenConfig(n_recordings=200, duration_hours=2, target_afb=BURDENS,
                                                at_fraction=AT_FRACTION, seed=1, id_prefix="train"))]
    test = [r for r, _ in gen_cohort(GenConfig(n_recordings=50, duration_hours=2, target_afb=BURDENS,
                                               at_fraction=AT_FRACTION, seed=2, id_prefix="test"))]
    afl = [r for r, _ in gen_cohort(GenConfig(n_recordings=20, duration_hours=2, target_afb=(40.0, 95.0),
                                              afl_fraction=1.0, seed=3, id_prefix="afl"))]
    batches = [window_batch(r, ACCEPT_HP.w_s) for r in train]
    m1 = train_stage1(build_stage1(ACCEPT_HP, seed=7), batches)
    examples = stage2_examples(m1, batches, [true_burden(r) for r in train])
    m2 = train_stage2(build_stage2(ACCEPT_HP, seed=7), examples)
    return Trained(ACCEPT_HP, m1, m2, train, test, afl, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def tiny_cohort():
    cfg = GenConfig(n_recordings=12, duration_hours=0.25, target_afb=(0.0, 40.0, 95.0, 2.0),
                    episode_median_min=2.0, at_fraction=AT_FRACTION, seed=11)
    return [r for r, _ in gen_cohort(cfg)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one "criterion N PASS/FAIL" line per acceptance check, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
