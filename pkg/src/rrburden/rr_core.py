"""Domain model for beat-to-beat (RR) recordings.

Recordings are segmented into fixed-length windows, each window gets a
binary AF_l reference label by majority vote, and burdens are computed as
duration-weighted fractions of AF_l time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    InvalidLabel,
    InvalidRecording,
    LengthMismatch,
    NonPositiveDuration,
    RecordingTooShort,
)

DEFAULT_WINDOW_BEATS = 60
MAX_RR_MS = 10000.0
MIN_AGE = 18


class BeatLabel(IntEnum):
    """Per-beat rhythm annotation category."""

    OTHER = 0  # NSR and anything unlabelled
    AF = 1
    AFL = 2
    AT = 3
    SVT_OTHER = 4

    @classmethod
    def parse(cls, code) -> "BeatLabel":
        try:
            return cls(int(code))
        except (ValueError, TypeError):
            raise InvalidLabel(f"unknown beat label code {code!r}") from None


AF_L_CATEGORIES = frozenset({BeatLabel.AF, BeatLabel.AFL})


class Sex(str, Enum):
    F = "F"
    M = "M"


class SeverityClass(IntEnum):
    """AF burden stratum; the integer value is the stage-2 GRU index."""

    NON_AF = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3

    @property
    def label(self) -> str:
        return ("NonAF", "Mild", "Moderate", "Severe")[self.value]

    @classmethod
    def from_label(cls, text: str) -> "SeverityClass":
        for member in cls:
            if member.label == text:
                return member
        raise ValueError(f"unknown severity {text!r}")


def validate_labels(labels) -> np.ndarray:
    """Return ``labels`` as an int8 array, rejecting any code outside BeatLabel."""
    arr = np.asarray(labels)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidLabel("beat labels must be integer codes")
    arr = arr.astype(np.int64)
    bad = (arr < 0) | (arr > max(BeatLabel))
    if np.any(bad):
        raise InvalidLabel(f"unknown beat label code {arr[bad][0]}")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class Recording:
    """One patient's RR series with per-interval rhythm labels.

    ``rr`` is in milliseconds; ``labels`` holds BeatLabel codes, one per RR
    interval.
    """

    id: str
    rr: np.ndarray
    labels: np.ndarray
    age: float
    sex: Sex
    origin: str = ""

    def __post_init__(self):
        rr = np.asarray(self.rr, dtype=np.float64)
        labels = validate_labels(self.labels)
        if rr.ndim != 1 or labels.ndim != 1:
            raise InvalidRecording(f"{self.id}: rr and labels must be 1-D")
        if len(rr) != len(labels):
            raise InvalidRecording(
                f"{self.id}: {len(rr)} RR values but {len(labels)} labels"
            )
        if np.any(~np.isfinite(rr)) or np.any(rr <= 0) or np.any(rr >= MAX_RR_MS):
            raise InvalidRecording(f"{self.id}: RR values must lie in (0, {MAX_RR_MS:g}) ms")
        if not self.age >= MIN_AGE:
            raise InvalidRecording(f"{self.id}: age {self.age} below {MIN_AGE}")
        rr.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rr", rr)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sex", Sex(self.sex))

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.rr, other.rr)
            and np.array_equal(self.labels, other.labels)
            and self.age == other.age
            and self.sex == other.sex
            and self.origin == other.origin
        )

    def __len__(self):
        return len(self.rr)

    @property
    def binary_labels(self) -> np.ndarray:
        return binarize_labels(self.labels)

    @property
    def duration_ms(self) -> float:
        return float(self.rr.sum())


@dataclass
class Window:
    """A fixed-length segment of ``w_s - 1`` RR intervals.

    ``rr`` is always full length (edge-padded for a trailing remainder);
    ``duration_ms`` only counts the ``n_true`` genuine intervals.
    """

    rr: np.ndarray
    duration_ms: float
    ref_label: int
    start_beat: int = 0
    n_true: int = 0
    category: BeatLabel = BeatLabel.OTHER
    pred_prob: Optional[float] = None


def binarize_label(label) -> int:
    """AF and AFL map to 1 (AF_l); every other category maps to 0."""
    return int(BeatLabel.parse(label) in AF_L_CATEGORIES)


def binarize_labels(labels) -> np.ndarray:
    arr = validate_labels(labels)
    return ((arr == BeatLabel.AF) | (arr == BeatLabel.AFL)).astype(np.int8)


def window_label(labels: Sequence[int]) -> int:
    """Majority binary label; an exact tie resolves to AF_l."""
    arr = np.asarray(labels)
    if arr.size == 0:
        raise EmptyInput("window_label needs at least one label")
    return int(2 * int(np.count_nonzero(arr)) >= arr.size)


def majority_category(labels: Sequence[int]) -> BeatLabel:
    """Most frequent five-way category; ties go to the lowest code."""
    arr = validate_labels(labels)
    if arr.size == 0:
        raise EmptyInput("majority_category needs at least one label")
    counts = np.bincount(arr, minlength=len(BeatLabel))
    return BeatLabel(int(np.argmax(counts)))


def _window_bounds(n_rr: int, w_s: int) -> list[tuple[int, int]]:
    width = w_s - 1
    if width < 1:
        raise ValueError(f"window size must be at least 2 beats, got {w_s}")
    if n_rr < width:
        raise RecordingTooShort(f"{n_rr} RR intervals, need at least {width}")
    bounds = [(s, s + width) for s in range(0, n_rr - width + 1, width)]
    tail = bounds[-1][1]
    if n_rr - tail >= math.ceil(width / 2):
        bounds.append((tail, n_rr))
    return bounds


@dataclass
class WindowBatch:
    """Column-oriented windows of one recording, ready for the model."""

    rr: np.ndarray  # (n, w_s - 1), padded
    duration_ms: np.ndarray  # (n,)
    ref_label: np.ndarray  # (n,) int8
    start_beat: np.ndarray  # (n,) int
    n_true: np.ndarray  # (n,) int
    category: np.ndarray  # (n,) int8 majority category
    recording_id: str = ""

    def __len__(self):
        return len(self.duration_ms)


def window_batch(r: Recording, w_s: int = DEFAULT_WINDOW_BEATS) -> WindowBatch:
    """Vectorised counterpart of :func:`segment_windows`."""
    bounds = _window_bounds(len(r.rr), w_s)
    width = w_s - 1
    n = len(bounds)
    rr = np.empty((n, width))
    dur = np.empty(n)
    ref = np.empty(n, dtype=np.int8)
    cat = np.empty(n, dtype=np.int8)
    starts = np.array([b[0] for b in bounds])
    n_true = np.array([b[1] - b[0] for b in bounds])
    binary = r.binary_labels
    for i, (s, e) in enumerate(bounds):
        seg = r.rr[s:e]
        rr[i, : e - s] = seg
        rr[i, e - s :] = seg[-1]
        dur[i] = seg.sum()
        ref[i] = window_label(binary[s:e])
        cat[i] = majority_category(r.labels[s:e])
    return WindowBatch(rr, dur, ref, starts, n_true, cat, recording_id=r.id)


def segment_windows(r: Recording, w_s: int = DEFAULT_WINDOW_BEATS) -> list[Window]:
    """Split a recording into consecutive non-overlapping windows.

    A trailing remainder of at least half a window is kept and edge-padded
    (last RR repeated) for model input; its ``duration_ms`` stays the sum of
    the genuine intervals. Shorter remainders are dropped.

    Raises:
        RecordingTooShort: if the recording has fewer than ``w_s - 1`` RR values.
    """
    b = window_batch(r, w_s)
    return [
        Window(
            rr=b.rr[i],
            duration_ms=float(b.duration_ms[i]),
            ref_label=int(b.ref_label[i]),
            start_beat=int(b.start_beat[i]),
            n_true=int(b.n_true[i]),
            category=BeatLabel(int(b.category[i])),
        )
        for i in range(len(b))
    ]


def _durations_labels(durations, labels) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(durations, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if t.size == 0:
        raise EmptyInput("no windows")
    if t.size != y.size:
        raise LengthMismatch(f"{t.size} durations but {y.size} labels")
    if np.any(~(t > 0)):
        raise NonPositiveDuration("window durations must be positive")
    return t, y


def compute_afb(durations, labels) -> float:
    """AF burden in percent: AF_l time over total time, duration-weighted."""
    t, y = _durations_labels(durations, labels)
    pos = float(np.dot(t, y != 0))
    neg = float(np.dot(t, y == 0))
    # take the smaller share and complement it, so flipping labels sums to 100 exactly
    if pos <= neg:
        return 100.0 * pos / (pos + neg)
    return 100.0 - 100.0 * neg / (pos + neg)


def compute_eaf(durations, y_ref, y_pred) -> float:
    """Signed duration-weighted burden error (percent), estimate minus reference."""
    t, y = _durations_labels(durations, y_ref)
    y_hat = np.asarray(y_pred).ravel()
    if y_hat.size != t.size:
        raise LengthMismatch(f"{t.size} windows but {y_hat.size} predictions")
    diff = (y_hat != 0).astype(np.float64) - (y != 0).astype(np.float64)
    return float(100.0 * np.dot(t, diff) / t.sum())


def severity_class(total_af_seconds: float, afb: float) -> SeverityClass:
    """Four-way burden stratum.

    Less than 30 s of AF_l is NonAF regardless of burden; otherwise the
    burden decides: < 4 % Mild, 4-80 % Moderate (both ends inclusive),
    > 80 % Severe.
    """
    if total_af_seconds < 30:
        return SeverityClass.NON_AF
    if afb < 4:
        return SeverityClass.MILD
    if afb <= 80:
        return SeverityClass.MODERATE
    return SeverityClass.SEVERE


def af_seconds(durations, labels) -> float:
    t = np.asarray(durations, dtype=np.float64)
    return float(np.dot(t, np.asarray(labels) != 0) / 1000.0)


def true_burden(r: Recording) -> tuple[float, float]:
    """Beat-level reference burden: (AFB percent, total AF_l seconds)."""
    b = r.binary_labels
    return compute_afb(r.rr, b), af_seconds(r.rr, b)


def reference_severity(r: Recording) -> SeverityClass:
    afb, secs = true_burden(r)
    return severity_class(secs, afb)


def reference_diagnosis(r: Recording) -> int:
    """Patient-level reference: positive iff at least 30 s of AF_l in total."""
    return int(true_burden(r)[1] >= 30)
