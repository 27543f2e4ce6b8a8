"""Window- and patient-level performance statistics and reporting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateProportions,
    EmptyCohort,
    EmptyInput,
    LengthMismatch,
    MissingMetadata,
    NoAflWindows,
    SingleClassDataset,
)
from .fsutil import atomic_write_text
from .rr_core import BeatLabel, SeverityClass, compute_eaf

SCREENING_THRESHOLD = 2.0
AGE_BANDS = ("≤60", "60 to 75", ">75")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionCounts":
        y = np.asarray(y_true).ravel() != 0
        p = np.asarray(y_pred).ravel() != 0
        if y.size != p.size:
            raise LengthMismatch(f"{y.size} labels but {p.size} predictions")
        return cls(
            tp=int(np.sum(y & p)),
            fp=int(np.sum(~y & p)),
            tn=int(np.sum(~y & ~p)),
            fn=int(np.sum(y & ~p)),
        )

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Se/Sp/PPV/NPV/F1; a metric with a zero denominator is NaN and named in ``undefined``."""

    se: float
    sp: float
    ppv: float
    npv: float
    f1: float
    undefined: frozenset = frozenset()

    def as_dict(self) -> dict:
        return {"se": self.se, "sp": self.sp, "ppv": self.ppv, "npv": self.npv, "f1": self.f1}


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.add(name)
        return math.nan
    return num / den


def metrics(c: ConfusionCounts) -> Metrics:
    undefined: set = set()
    se = _ratio(c.tp, c.tp + c.fn, "se", undefined)
    sp = _ratio(c.tn, c.tn + c.fp, "sp", undefined)
    ppv = _ratio(c.tp, c.tp + c.fp, "ppv", undefined)
    npv = _ratio(c.tn, c.tn + c.fn, "npv", undefined)
    if not math.isnan(se) and not math.isnan(ppv):
        f1 = 0.0 if se + ppv == 0 else 2 * se * ppv / (se + ppv)
    elif c.tp == 0 and c.fp + c.fn > 0:
        f1 = 0.0  # one side is 0 and the other undefined
    else:
        f1 = math.nan
        undefined.add("f1")
    return Metrics(se, sp, ppv, npv, f1, frozenset(undefined))


def auroc(scores, labels) -> float:
    """Exact AUROC as the Mann-Whitney probability P(s+ > s-) + P(s+ = s-)/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel() != 0
    if s.size != y.size:
        raise LengthMismatch(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassDataset("AUROC needs both classes")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    # midrank of each distinct value (1-based)
    upper = np.cumsum(counts)
    midrank = upper - (counts - 1) / 2.0
    ranks = midrank[inverse]
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def eaf_stats(values) -> tuple[float, float, float]:
    """(median, Q1, Q3) using linear interpolation between order statistics."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("eaf_stats needs at least one value")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return float(med), float(q1), float(q3)


def age_band(age: float) -> str:
    if age <= 60:
        return AGE_BANDS[0]
    if age <= 75:
        return AGE_BANDS[1]
    return AGE_BANDS[2]


def patient_diagnosis(estimated_afb: float, threshold: float = SCREENING_THRESHOLD) -> int:
    return int(estimated_afb >= threshold)


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def prop_ztest(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test; returns (z, two-sided p)."""
    if n1 < 1 or n2 < 1 or not (0 <= k1 <= n1 and 0 <= k2 <= n2):
        raise ValueError(f"invalid counts ({k1}/{n1}, {k2}/{n2})")
    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        raise DegenerateProportions("pooled proportion is 0 or 1")
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (k1 / n1 - k2 / n2) / se
    return z, min(1.0, 2 * _norm_sf(abs(z)))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a, b) -> tuple[float, float]:
    """Paired t-test on a - b; returns (t, two-sided p) with n - 1 degrees of freedom.

    Zero-variance differences follow a fixed convention instead of raising:
    all-zero gives (0, 1); identical non-zero gives (+-inf, 0).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} paired values")
    if a.size < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = float(mean / (sd / math.sqrt(n)))
    return t, student_t_two_sided(t, n - 1)


def afl_miss_rate(categories, predictions) -> float:
    """Fraction of AFL-majority windows predicted non-AF_l."""
    cat = np.asarray(categories).ravel()
    pred = np.asarray(predictions).ravel()
    if cat.size != pred.size:
        raise LengthMismatch(f"{cat.size} categories but {pred.size} predictions")
    afl = cat == BeatLabel.AFL
    if not afl.any():
        raise NoAflWindows("no windows with an AFL majority")
    return float(np.mean(pred[afl] == 0))


# --- cohort-level reporting -------------------------------------------------


@dataclass
class PatientResult:
    """Everything evaluation needs about one recording's predictions."""

    recording_id: str
    durations: np.ndarray
    ref_labels: np.ndarray
    pred_labels: np.ndarray
    scores: np.ndarray
    categories: np.ndarray
    estimated_afb: float
    reference_diagnosis: int
    age: Optional[float] = None
    sex: Optional[str] = None
    origin: Optional[str] = None
    severity: Optional[SeverityClass] = None
    window_index: Optional[np.ndarray] = None

    @property
    def abs_eaf(self) -> float:
        return abs(compute_eaf(self.durations, self.ref_labels, self.pred_labels))

    @property
    def counts(self) -> ConfusionCounts:
        return ConfusionCounts.from_labels(self.ref_labels, self.pred_labels)


_STRATA: dict[str, Callable[[PatientResult], object]] = {
    "origin": lambda p: p.origin,
    "sex": lambda p: p.sex,
    "age_band": lambda p: None if p.age is None else age_band(p.age),
    "severity": lambda p: None if p.severity is None else SeverityClass(p.severity).label,
}


def stratify(patients: Iterable[PatientResult], key: str) -> dict[str, list[PatientResult]]:
    """Partition patients by ``key`` (origin, sex, age_band or severity)."""
    if key not in _STRATA:
        raise ValueError(f"unknown stratification key {key!r}")
    get = _STRATA[key]
    groups: dict[str, list[PatientResult]] = {}
    for p in patients:
        g = get(p)
        if g is None or g == "":
            raise MissingMetadata(f"{p.recording_id}: no {key}")
        groups.setdefault(str(g), []).append(p)
    return dict(sorted(groups.items()))


GROUP_COLUMNS = ["stratum", "group", "n_recordings", "n_windows", "tp", "fp", "tn", "fn",
                 "se", "sp", "ppv", "npv", "f1", "auroc", "eaf_median", "eaf_q1", "eaf_q3"]


def group_row(stratum: str, group: str, patients: Sequence[PatientResult]) -> dict:
    counts = sum((p.counts for p in patients), ConfusionCounts())
    m = metrics(counts)
    y = np.concatenate([p.ref_labels for p in patients])
    s = np.concatenate([p.scores for p in patients])
    try:
        auc = auroc(s, y)
    except SingleClassDataset:
        auc = math.nan
    med, q1, q3 = eaf_stats([p.abs_eaf for p in patients])
    return {
        "stratum": stratum, "group": group, "n_recordings": len(patients),
        "n_windows": counts.total, "tp": counts.tp, "fp": counts.fp, "tn": counts.tn,
        "fn": counts.fn, **m.as_dict(), "auroc": auc,
        "eaf_median": med, "eaf_q1": q1, "eaf_q3": q3,
    }


@dataclass
class ScreeningResult:
    counts: ConfusionCounts
    metrics: Metrics


def intended_use_report(
    estimated_afb: Sequence[float],
    reference: Sequence[int],
    sexes: Optional[Sequence[str]] = None,
    threshold: float = SCREENING_THRESHOLD,
) -> dict[str, ScreeningResult]:
    """Patient-level screening at an AFB threshold, overall and per sex."""
    afb = list(estimated_afb)
    ref = [int(r) for r in reference]
    if not afb:
        raise EmptyCohort("no patients")
    if len(afb) != len(ref) or (sexes is not None and len(sexes) != len(afb)):
        raise LengthMismatch("estimated AFB, reference and sex lists differ in length")
    pred = [patient_diagnosis(a, threshold) for a in afb]
    out = {}
    groups = {"overall": list(range(len(afb)))}
    if sexes is not None:
        for s in sorted(set(sexes)):
            groups[f"sex={s}"] = [i for i, x in enumerate(sexes) if x == s]
    for name, idx in groups.items():
        c = ConfusionCounts.from_labels([ref[i] for i in idx], [pred[i] for i in idx])
        out[name] = ScreeningResult(c, metrics(c))
    return out


@dataclass
class EvalReport:
    groups: list[dict]
    screening: dict[str, ScreeningResult]
    misclassified: list[dict]
    afl_miss_rate: Optional[float]
    n_recordings: int
    extra: dict = field(default_factory=dict)

    def overall(self) -> dict:
        return next(g for g in self.groups if g["stratum"] == "overall")


def build_report(patients: Sequence[PatientResult], threshold: float = SCREENING_THRESHOLD) -> EvalReport:
    if not patients:
        raise EmptyCohort("no patients to evaluate")
    rows = [group_row("overall", "all", patients)]
    for key in ("origin", "sex", "age_band", "severity"):
        for g, members in stratify(patients, key).items():
            rows.append(group_row(key, g, members))
    screening = intended_use_report(
        [p.estimated_afb for p in patients],
        [p.reference_diagnosis for p in patients],
        [p.sex for p in patients],
        threshold,
    )
    mis = []
    for p in patients:
        idx = p.window_index if p.window_index is not None else np.arange(len(p.ref_labels))
        for i in np.flatnonzero(p.ref_labels != p.pred_labels):
            mis.append({
                "recording_id": p.recording_id,
                "window_index": int(idx[i]),
                "true_category": BeatLabel(int(p.categories[i])).name,
                "reference": int(p.ref_labels[i]),
                "predicted": int(p.pred_labels[i]),
                "prob": float(p.scores[i]),
            })
    cats = np.concatenate([p.categories for p in patients])
    preds = np.concatenate([p.pred_labels for p in patients])
    try:
        miss = afl_miss_rate(cats, preds)
    except NoAflWindows:
        miss = None
    return EvalReport(rows, screening, mis, miss, len(patients))


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in columns})
    return buf.getvalue()


def write_report(report: EvalReport, out_dir) -> None:
    """Write report.json plus groups.csv, screening.csv and misclassified.csv."""
    out = Path(out_dir)
    atomic_write_text(out / "groups.csv", _csv(report.groups, GROUP_COLUMNS))
    scr_rows = []
    for name, res in report.screening.items():
        c, m = res.counts, res.metrics
        scr_rows.append({"group": name, "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
                         **m.as_dict(), "undefined": ";".join(sorted(m.undefined))})
    scr_cols = ["group", "tp", "fp", "tn", "fn", "se", "sp", "ppv", "npv", "f1", "undefined"]
    atomic_write_text(out / "screening.csv", _csv(scr_rows, scr_cols))
    mis_cols = ["recording_id", "window_index", "true_category", "reference", "predicted", "prob"]
    atomic_write_text(out / "misclassified.csv", _csv(report.misclassified, mis_cols))

    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    doc = {
        "n_recordings": report.n_recordings,
        "afl_miss_rate": report.afl_miss_rate,
        "groups": [{k: clean(v) for k, v in g.items()} for g in report.groups],
        "screening": {r["group"]: {k: clean(v) for k, v in r.items() if k != "group"} for r in scr_rows},
        "n_misclassified_windows": len(report.misclassified),
        **report.extra,
    }
    atomic_write_text(out / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
