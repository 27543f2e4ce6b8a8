import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrburden.errors import (
    EmptyInput,
    InvalidLabel,
    InvalidRecording,
    LengthMismatch,
    NonPositiveDuration,
    RecordingTooShort,
)
from rrburden.rr_core import (
    BeatLabel,
    Recording,
    SeverityClass,
    binarize_label,
    compute_afb,
    compute_eaf,
    reference_diagnosis,
    segment_windows,
    severity_class,
    true_burden,
    validate_labels,
    window_batch,
    window_label,
)


def make_rec(rr, labels=None, rid="r"):
    rr = np.asarray(rr, dtype=float)
    labels = np.zeros(len(rr), dtype=int) if labels is None else labels
    return Recording(rid, rr, labels, 50, "F", "site")


durations = st.lists(st.integers(1, 200_000), min_size=1, max_size=40)


@st.composite
def windows(draw):
    t = draw(durations)
    y = draw(st.lists(st.integers(0, 1), min_size=len(t), max_size=len(t)))
    return np.array(t, dtype=float), np.array(y)


# --- labels -----------------------------------------------------------------


def test_binarize_label_examples():
    assert binarize_label(BeatLabel.AF) == 1
    assert binarize_label(BeatLabel.AFL) == 1
    assert binarize_label(BeatLabel.AT) == 0
    assert binarize_label(BeatLabel.SVT_OTHER) == 0
    assert binarize_label(BeatLabel.OTHER) == 0


def test_unknown_label_code_rejected():
    with pytest.raises(InvalidLabel):
        validate_labels([0, 1, 5])
    with pytest.raises(InvalidLabel):
        binarize_label(-1)


def test_exactly_five_categories():
    assert [int(c) for c in BeatLabel] == [0, 1, 2, 3, 4]


def test_recording_invariants():
    with pytest.raises(InvalidRecording):
        make_rec([800, 800], [0])
    with pytest.raises(InvalidRecording):
        make_rec([800, 0])
    with pytest.raises(InvalidRecording):
        make_rec([800, 10000])
    with pytest.raises(InvalidRecording):
        Recording("r", np.array([800.0]), np.array([0]), 17, "F", "x")


# --- window_label -------------------------------------------------------------


def test_window_label_majority():
    assert window_label([1] * 31 + [0] * 28) == 1
    assert window_label([0] * 59) == 0


def test_window_label_tie_goes_to_af():
    assert window_label([1] * 29 + [0] * 29) == 1


def test_window_label_empty():
    with pytest.raises(EmptyInput):
        window_label([])


# --- segmentation -------------------------------------------------------------


def test_segment_exact_multiple():
    ws = segment_windows(make_rec(np.full(118, 800)), 60)
    assert len(ws) == 2
    assert all(w.rr.shape == (59,) for w in ws)


def test_segment_padded_remainder():
    rr = np.arange(150) + 500.0
    ws = segment_windows(make_rec(rr), 60)
    assert len(ws) == 3
    tail = ws[2]
    assert tail.n_true == 32
    assert tail.duration_ms == rr[118:].sum()
    # edge padding repeats the last genuine interval
    assert np.all(tail.rr[32:] == rr[-1])
    assert np.array_equal(tail.rr[:32], rr[118:])


def test_segment_short_remainder_dropped():
    # 59 + 29 -> 29 < ceil(59/2) = 30, dropped
    assert len(segment_windows(make_rec(np.full(88, 800)), 60)) == 1
    assert len(segment_windows(make_rec(np.full(89, 800)), 60)) == 2


def test_segment_too_short():
    with pytest.raises(RecordingTooShort):
        segment_windows(make_rec(np.full(40, 800)), 60)


def test_padded_window_label_uses_true_beats_only():
    labels = np.zeros(118 + 30, dtype=int)
    labels[118:] = 1
    ws = segment_windows(make_rec(np.full(148, 700), labels), 60)
    assert [w.ref_label for w in ws] == [0, 0, 1]


@settings(max_examples=200, deadline=None)
@given(st.integers(59, 800), st.integers(0, 2**32 - 1))
def test_segment_preserves_assigned_duration(n, seed):
    rng = np.random.default_rng(seed)
    rr = rng.integers(300, 1500, n).astype(float)
    r = make_rec(rr, rng.integers(0, 5, n))
    wb = window_batch(r, 60)
    covered = int(wb.n_true.sum())
    assert wb.duration_ms.sum() == rr[:covered].sum()
    assert np.all(wb.start_beat == np.arange(len(wb)) * 59)
    assert n - covered < 30 or covered == n
    assert np.all(wb.ref_label == [window_label(r.binary_labels[s:s + k])
                                   for s, k in zip(wb.start_beat, wb.n_true)])


# --- burden -------------------------------------------------------------------


def test_afb_examples():
    assert compute_afb([1000, 2000], [1, 1]) == 100.0
    assert compute_afb([30000, 70000], [1, 0]) == 30.0
    with pytest.raises(EmptyInput):
        compute_afb([], [])
    with pytest.raises(NonPositiveDuration):
        compute_afb([1000, 0], [1, 0])


def test_eaf_examples():
    assert compute_eaf([1000, 2000], [1, 0], [1, 0]) == 0.0
    assert compute_eaf([50000, 50000], [1, 0], [0, 0]) == -50.0
    assert compute_eaf([1000, 3000], [0, 0], [1, 1]) == 100.0
    with pytest.raises(LengthMismatch):
        compute_eaf([1000, 2000], [1, 0], [1])


@given(windows(), st.floats(1e-3, 1e3))
def test_afb_scale_invariant(w, k):
    t, y = w
    assert abs(compute_afb(t * k, y) - compute_afb(t, y)) <= 1e-12 * 100


@given(windows())
def test_afb_complement_is_exact(w):
    t, y = w
    assert compute_afb(t, y) + compute_afb(t, 1 - y) == 100.0


@given(windows(), st.data())
def test_eaf_identity_and_bounds(w, data):
    t, y = w
    y_hat = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(t), max_size=len(t))))
    e = compute_eaf(t, y, y_hat)
    assert abs(e) <= 100.0
    assert compute_eaf(t, y, y) == 0.0
    assert abs(e - (compute_afb(t, y_hat) - compute_afb(t, y))) <= 1e-9


# --- severity -----------------------------------------------------------------


def test_severity_examples():
    assert severity_class(25, 0.1) is SeverityClass.NON_AF
    assert severity_class(60, 3) is SeverityClass.MILD
    assert severity_class(31, 90) is SeverityClass.SEVERE
    assert severity_class(10_000, 90) is SeverityClass.SEVERE


def test_severity_boundaries():
    assert severity_class(30, 1) is SeverityClass.MILD
    assert severity_class(29.999, 50) is SeverityClass.NON_AF
    assert severity_class(100, 4) is SeverityClass.MODERATE
    assert severity_class(100, 80) is SeverityClass.MODERATE
    assert severity_class(100, math.nextafter(80, 100)) is SeverityClass.SEVERE


@given(st.floats(0, 1e6), st.floats(0, 100))
def test_severity_total_and_disjoint(s, afb):
    rules = [s < 30, s >= 30 and afb < 4, s >= 30 and 4 <= afb <= 80, s >= 30 and afb > 80]
    assert sum(rules) == 1
    assert severity_class(s, afb) == rules.index(True)


def test_severity_labels_roundtrip():
    assert [c.label for c in SeverityClass] == ["NonAF", "Mild", "Moderate", "Severe"]
    for c in SeverityClass:
        assert SeverityClass.from_label(c.label) is c


def test_true_burden_and_reference_diagnosis():
    rr = np.full(100, 1000.0)
    labels = np.zeros(100, dtype=int)
    labels[:29] = BeatLabel.AF
    r = make_rec(rr, labels)
    assert true_burden(r) == (29.0, 29.0)
    assert reference_diagnosis(r) == 0
    labels[29] = BeatLabel.AFL
    assert reference_diagnosis(make_rec(rr, labels)) == 1
