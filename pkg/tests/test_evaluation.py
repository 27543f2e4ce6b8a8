import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from oracles import pairwise_auroc
from rrburden.errors import (
    DegenerateProportions,
    EmptyCohort,
    EmptyInput,
    LengthMismatch,
    MissingMetadata,
    NoAflWindows,
    SingleClassDataset,
)
from rrburden.evaluation import (
    ConfusionCounts,
    PatientResult,
    afl_miss_rate,
    age_band,
    auroc,
    betainc_reg,
    build_report,
    eaf_stats,
    intended_use_report,
    metrics,
    paired_ttest,
    patient_diagnosis,
    prop_ztest,
    stratify,
    write_report,
)
from rrburden.rr_core import BeatLabel, SeverityClass


# --- metrics ------------------------------------------------------------------


def test_metrics_reference_row():
    m = metrics(ConfusionCounts(tp=93, fn=7, fp=4, tn=96))
    assert round(m.se, 2) == 0.93 and round(m.ppv, 2) == 0.96
    assert m.f1 == pytest.approx(2 * 93 / (2 * 93 + 4 + 7), abs=1e-12)
    assert 0.94 <= m.f1 <= 0.95
    assert m.sp == 96 / 100 and m.npv == 96 / 103


def test_metrics_perfect_and_zero():
    m = metrics(ConfusionCounts(tp=5, tn=3))
    assert (m.se, m.sp, m.ppv, m.npv, m.f1) == (1, 1, 1, 1, 1)
    m = metrics(ConfusionCounts(fn=4, tn=2))
    assert m.se == 0 and m.f1 == 0
    assert m.undefined == {"ppv"}


def test_metrics_undefined_flags():
    m = metrics(ConfusionCounts(tn=5))
    assert {"se", "ppv", "f1"} <= m.undefined
    assert math.isnan(m.se) and m.sp == 1


@settings(max_examples=300)
@given(st.integers(1, 200), st.integers(0, 200), st.integers(0, 200), st.integers(0, 200))
def test_f1_is_harmonic_mean(tp, fp, tn, fn):
    m = metrics(ConfusionCounts(tp, fp, tn, fn))
    assert m.f1 == pytest.approx(2 * m.se * m.ppv / (m.se + m.ppv), abs=1e-12)
    for v in m.as_dict().values():
        assert math.isnan(v) or 0 <= v <= 1


def test_confusion_from_labels():
    c = ConfusionCounts.from_labels([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert c == ConfusionCounts(tp=2, fp=1, tn=1, fn=1)
    with pytest.raises(LengthMismatch):
        ConfusionCounts.from_labels([1], [1, 0])


# --- auroc --------------------------------------------------------------------


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(SingleClassDataset):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.integers(0, 20, 200) / 20.0  # coarse grid forces ties
        y = rng.integers(0, 2, 200)
        assert auroc(s, y) == pytest.approx(pairwise_auroc(s, y), abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(-500, 500), st.booleans()), min_size=2, max_size=60))
def test_auroc_monotone_invariance(pairs):
    s = np.array([p[0] for p in pairs]) / 100.0
    y = np.array([p[1] for p in pairs])
    if y.all() or not y.any():
        return
    base = auroc(s, y)
    assert auroc(np.exp(s), y) == pytest.approx(base, abs=1e-12)
    assert auroc(3 * s + 1, y) == pytest.approx(base, abs=1e-12)


# --- eaf_stats ----------------------------------------------------------------


def test_eaf_stats_examples():
    assert eaf_stats([5]) == (5, 5, 5)
    assert eaf_stats([0, 1, 2, 3, 4]) == (2, 1, 3)
    med, q1, q3 = eaf_stats([7.5] * 9)
    assert q3 - q1 == 0 and med == 7.5
    # type-7 interpolation: position (n-1) p between order statistics
    assert eaf_stats([1, 2, 3, 4]) == (2.5, 1.75, 3.25)
    with pytest.raises(EmptyInput):
        eaf_stats([])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.randoms())
def test_eaf_stats_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert eaf_stats(values) == eaf_stats(shuffled)


# --- patient-level ------------------------------------------------------------


def test_age_bands():
    assert age_band(60) == "≤60"
    assert age_band(18) == "≤60"
    assert age_band(60.5) == "60 to 75"
    assert age_band(75) == "60 to 75"
    assert age_band(75.1) == ">75"


def test_patient_diagnosis():
    assert patient_diagnosis(2.5) == 1
    assert patient_diagnosis(0.0) == 0
    assert patient_diagnosis(2.0) == 1
    assert patient_diagnosis(1.999) == 0


# --- significance tests -------------------------------------------------------


def test_prop_ztest():
    z, p = prop_ztest(90, 100, 70, 100)
    pooled = 160 / 200
    assert z == pytest.approx(0.2 / math.sqrt(pooled * (1 - pooled) * (2 / 100)), rel=1e-12)
    assert z == pytest.approx(3.536, abs=1e-3)
    assert p < 0.001
    assert p == pytest.approx(2 * stats.norm.sf(z), rel=1e-9)
    assert prop_ztest(30, 60, 15, 30) == (0.0, 1.0)
    with pytest.raises(DegenerateProportions):
        prop_ztest(0, 10, 0, 10)
    with pytest.raises(ValueError):
        prop_ztest(11, 10, 0, 10)


def test_paired_ttest_example():
    t, p = paired_ttest([1, 2, 3, 4], [0, 0, 0, 0])
    assert t == pytest.approx(2.5 / (math.sqrt(5 / 3) / 2), abs=1e-12)
    assert t == pytest.approx(3.873, abs=1e-3)
    assert p == pytest.approx(0.0305, abs=1e-4)
    ref = stats.ttest_rel([1, 2, 3, 4], [0, 0, 0, 0])
    assert p == pytest.approx(ref.pvalue, abs=1e-10)


def test_paired_ttest_edge_cases():
    assert paired_ttest([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    assert paired_ttest([2, 3, 4], [1, 2, 3]) == (math.inf, 0.0)
    with pytest.raises(LengthMismatch):
        paired_ttest([1, 2], [1, 2, 3])


def test_paired_ttest_matches_scipy():
    rng = np.random.default_rng(1)
    for n in (2, 3, 5, 10, 40, 200):
        a, b = rng.normal(size=n), rng.normal(0.3, size=n)
        t, p = paired_ttest(a, b)
        ref = stats.ttest_rel(a, b)
        assert t == pytest.approx(ref.statistic, rel=1e-10)
        assert p == pytest.approx(ref.pvalue, abs=1e-8)


def test_betainc_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(500):
        a, b = rng.uniform(0.05, 60, 2)
        x = rng.uniform()
        assert betainc_reg(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-8)
    assert betainc_reg(2, 3, 0) == 0 and betainc_reg(2, 3, 1) == 1


# --- AFL miss rate ------------------------------------------------------------


def test_afl_miss_rate():
    cats = [BeatLabel.AFL, BeatLabel.AFL, BeatLabel.AF, BeatLabel.OTHER, BeatLabel.AFL, BeatLabel.AFL]
    assert afl_miss_rate(cats, [1, 1, 0, 0, 1, 1]) == 0.0
    assert afl_miss_rate(cats, [0, 1, 1, 1, 0, 0]) == 0.75
    with pytest.raises(NoAflWindows):
        afl_miss_rate([BeatLabel.AF, BeatLabel.OTHER], [1, 0])


# --- intended use -------------------------------------------------------------


def test_intended_use_hand_tally():
    rng = np.random.default_rng(3)
    afb = rng.choice([0.0, 1.0, 2.0, 3.5, 50.0], size=100)
    ref = rng.integers(0, 2, 100)
    sexes = rng.choice(["F", "M"], size=100).tolist()
    out = intended_use_report(afb, ref, sexes)
    tally = {}
    for a, r, s in zip(afb, ref, sexes):
        pred = 1 if a >= 2 else 0
        for g in ("overall", f"sex={s}"):
            key = {(1, 1): "tp", (0, 1): "fp", (0, 0): "tn", (1, 0): "fn"}[(int(r), pred)]
            tally.setdefault(g, {"tp": 0, "fp": 0, "tn": 0, "fn": 0})[key] += 1
    for g, counts in tally.items():
        assert out[g].counts == ConfusionCounts(**counts)


def test_intended_use_edges():
    out = intended_use_report([5.0, 0.0], [1, 0])
    m = out["overall"].metrics
    assert (m.ppv, m.npv, m.se, m.sp) == (1, 1, 1, 1)
    out = intended_use_report([0.0, 3.0], [0, 0])
    assert "se" in out["overall"].metrics.undefined
    with pytest.raises(EmptyCohort):
        intended_use_report([], [])


# --- stratification and reports -----------------------------------------------


def make_patients(n=40, seed=4):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = int(rng.integers(5, 30))
        ref = rng.integers(0, 2, k)
        scores = np.clip(ref * 0.6 + rng.uniform(0, 0.5, k), 0, 1)
        pred = (scores >= 0.5).astype(int)
        cats = np.where(ref == 1, rng.choice([BeatLabel.AF, BeatLabel.AFL], k), BeatLabel.OTHER)
        out.append(PatientResult(
            recording_id=f"p{i}", durations=rng.uniform(30_000, 60_000, k), ref_labels=ref,
            pred_labels=pred, scores=scores, categories=cats,
            estimated_afb=float(100 * pred.mean()), reference_diagnosis=int(ref.any()),
            age=float(rng.integers(18, 95)), sex=str(rng.choice(["F", "M"])),
            origin=str(rng.choice(["a", "b", "c"])), severity=SeverityClass(int(rng.integers(4))),
        ))
    return out


@pytest.mark.parametrize("key", ["origin", "sex", "age_band", "severity"])
def test_stratified_counts_recombine(key):
    patients = make_patients()
    groups = stratify(patients, key)
    ids = [p.recording_id for g in groups.values() for p in g]
    assert sorted(ids) == sorted(p.recording_id for p in patients)
    total = sum((p.counts for p in patients), ConfusionCounts())
    assert sum((p.counts for g in groups.values() for p in g), ConfusionCounts()) == total


def test_stratify_missing_metadata():
    p = make_patients(2)
    p[1].sex = None
    with pytest.raises(MissingMetadata):
        stratify(p, "sex")
    with pytest.raises(ValueError):
        stratify(p, "height")


def test_report_structure(tmp_path: Path):
    patients = make_patients()
    rep = build_report(patients)
    overall = rep.overall()
    for key in ("origin", "sex", "age_band", "severity"):
        rows = [g for g in rep.groups if g["stratum"] == key]
        assert sum(g["n_recordings"] for g in rows) == len(patients)
        for c in ("tp", "fp", "tn", "fn"):
            assert sum(g[c] for g in rows) == overall[c]
    for g in rep.groups:
        for c in ("se", "sp", "ppv", "npv", "f1", "auroc"):
            assert math.isnan(g[c]) or 0 <= g[c] <= 1
        assert 0 <= g["eaf_q1"] <= g["eaf_median"] <= g["eaf_q3"] <= 100
    n_wrong = sum(int((p.ref_labels != p.pred_labels).sum()) for p in patients)
    assert len(rep.misclassified) == n_wrong
    assert rep.afl_miss_rate is not None
    write_report(rep, tmp_path)
    for name in ("report.json", "groups.csv", "screening.csv", "misclassified.csv"):
        assert (tmp_path / name).is_file()
    with pytest.raises(EmptyCohort):
        build_report([])
