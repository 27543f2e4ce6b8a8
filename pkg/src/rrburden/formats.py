"""On-disk formats: beat CSV, cohort manifest, and prediction tables.

Beat CSV::

    beat_index,rr_ms,label
    0,812,0

Manifest CSV columns are ``MANIFEST_COLUMNS``; ``beat_csv_path`` is relative
to the manifest's directory. Floats are written with ``repr`` so a reload is
exact.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidLabel, InvalidRecording, IoError, ValidationError
from .fsutil import atomic_write_text, read_text
from .rr_core import Recording, compute_afb, reference_diagnosis, true_burden, validate_labels

BEAT_COLUMNS = ["beat_index", "rr_ms", "label"]
MANIFEST_COLUMNS = ["recording_id", "beat_csv_path", "age", "sex", "origin",
                    "reference_afb", "reference_diagnosis", "seed"]
WINDOW_COLUMNS = ["recording_id", "window_index", "start_beat", "duration_ms",
                  "stage1_prob", "stage2_prob", "final_label"]
RECORDING_COLUMNS = ["recording_id", "estimated_afb", "severity", "patient_diagnosis"]
SKIPPED_COLUMNS = ["recording_id", "reason"]
AFB_TOLERANCE = 1e-6


def _table(columns: list[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _read_table(path, columns: list[str]) -> list[dict]:
    text = read_text(path)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != columns:
        raise ValidationError(f"{path}: expected header {','.join(columns)}, got {reader.fieldnames}")
    return list(reader)


def fmt_float(x: float) -> str:
    return repr(float(x))


# --- beat CSV ---------------------------------------------------------------


def dumps_beat_csv(r: Recording) -> str:
    if not np.all(r.rr == np.rint(r.rr)):
        raise InvalidRecording(f"{r.id}: beat CSV stores integer milliseconds")
    return _table(BEAT_COLUMNS, zip(range(len(r.rr)), r.rr.astype(np.int64).tolist(), r.labels.tolist()))


def write_beat_csv(path, r: Recording) -> None:
    atomic_write_text(path, dumps_beat_csv(r))


def read_beat_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (rr_ms float64, label codes int8) from a beat CSV."""
    rows = _read_table(path, BEAT_COLUMNS)
    try:
        idx = [int(row["beat_index"]) for row in rows]
        rr = np.array([int(row["rr_ms"]) for row in rows], dtype=np.float64)
        labels = [int(row["label"]) for row in rows]
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if idx != list(range(len(idx))):
        raise ValidationError(f"{path}: beat_index must run 0..n-1")
    try:
        return rr, validate_labels(labels)
    except InvalidLabel as exc:
        raise InvalidLabel(f"{path}: {exc}") from None


# --- manifest ---------------------------------------------------------------


@dataclass
class ManifestRow:
    recording_id: str
    beat_csv_path: str
    age: float
    sex: str
    origin: str
    reference_afb: float
    reference_diagnosis: int
    seed: int

    @classmethod
    def from_recording(cls, r: Recording, path: str, seed: int) -> "ManifestRow":
        afb, _ = true_burden(r)
        return cls(r.id, path, r.age, r.sex.value, r.origin, afb, reference_diagnosis(r), seed)

    def cells(self) -> list:
        age = int(self.age) if float(self.age).is_integer() else fmt_float(self.age)
        return [self.recording_id, self.beat_csv_path, age, self.sex, self.origin,
                fmt_float(self.reference_afb), self.reference_diagnosis, self.seed]


def write_manifest(path, rows: list[ManifestRow]) -> None:
    atomic_write_text(path, _table(MANIFEST_COLUMNS, (r.cells() for r in rows)))


class Manifest:
    """A loaded manifest; recordings are read lazily from their beat CSVs."""

    def __init__(self, path, rows: list[ManifestRow]):
        self.path = Path(path)
        self.rows = rows
        self._by_id = {r.recording_id: r for r in rows}

    def __len__(self):
        return len(self.rows)

    def __contains__(self, rec_id):
        return rec_id in self._by_id

    def row(self, rec_id) -> ManifestRow:
        return self._by_id[rec_id]

    def beat_path(self, row: ManifestRow) -> Path:
        return self.path.parent / row.beat_csv_path

    def recording(self, row: ManifestRow) -> Recording:
        rr, labels = read_beat_csv(self.beat_path(row))
        rec = Recording(row.recording_id, rr, labels, row.age, row.sex, row.origin)
        afb = compute_afb(rec.rr, rec.binary_labels)
        if abs(afb - row.reference_afb) > AFB_TOLERANCE:
            raise ValidationError(
                f"{row.recording_id}: manifest reference_afb {row.reference_afb} "
                f"but beat CSV gives {afb}"
            )
        return rec

    def recordings(self):
        for row in self.rows:
            yield self.recording(row)


def read_manifest(path, validate: bool = True) -> Manifest:
    """Load a manifest; with ``validate`` every beat CSV must exist and match its reference AFB."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"manifest not found: {path}")
    rows = []
    seen = set()
    for raw in _read_table(path, MANIFEST_COLUMNS):
        try:
            row = ManifestRow(
                raw["recording_id"], raw["beat_csv_path"], float(raw["age"]), raw["sex"],
                raw["origin"], float(raw["reference_afb"]), int(raw["reference_diagnosis"]),
                int(raw["seed"]),
            )
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        if row.recording_id in seen:
            raise ValidationError(f"{path}: duplicate recording_id {row.recording_id}")
        seen.add(row.recording_id)
        rows.append(row)
    m = Manifest(path, rows)
    if validate:
        for row in rows:
            if not m.beat_path(row).is_file():
                raise IoError(f"beat CSV not found: {m.beat_path(row)}")
            m.recording(row)
    return m


# --- predictions ------------------------------------------------------------


def window_rows(rec_id: str, res) -> list[list]:
    wb = res.windows
    p2 = res.stage2_prob
    return [
        [rec_id, i, int(wb.start_beat[i]), fmt_float(wb.duration_ms[i]), fmt_float(res.stage1_prob[i]),
         "" if p2 is None else fmt_float(p2[i]), int(res.final_label[i])]
        for i in range(len(wb))
    ]


def write_predictions(out_dir, window_table: list, recording_table: list, skipped: list) -> None:
    out = Path(out_dir)
    atomic_write_text(out / "windows.csv", _table(WINDOW_COLUMNS, window_table))
    atomic_write_text(out / "recordings.csv", _table(RECORDING_COLUMNS, recording_table))
    atomic_write_text(out / "skipped.csv", _table(SKIPPED_COLUMNS, skipped))


@dataclass
class WindowPrediction:
    window_index: int
    start_beat: int
    duration_ms: float
    stage1_prob: float
    stage2_prob: Optional[float]
    final_label: int

    @property
    def score(self) -> float:
        return self.stage1_prob if self.stage2_prob is None else self.stage2_prob


def read_predictions(pred_dir) -> tuple[dict[str, list[WindowPrediction]], dict[str, dict]]:
    """Return (windows by recording id, recording rows by id)."""
    d = Path(pred_dir)
    windows: dict[str, list[WindowPrediction]] = {}
    recs = {}
    try:
        for raw in _read_table(d / "windows.csv", WINDOW_COLUMNS):
            windows.setdefault(raw["recording_id"], []).append(WindowPrediction(
                int(raw["window_index"]), int(raw["start_beat"]), float(raw["duration_ms"]),
                float(raw["stage1_prob"]), float(raw["stage2_prob"]) if raw["stage2_prob"] else None,
                int(raw["final_label"]),
            ))
    except ValueError as exc:
        raise ValidationError(f"{d / 'windows.csv'}: {exc}") from None
    try:
        for raw in _read_table(d / "recordings.csv", RECORDING_COLUMNS):
            recs[raw["recording_id"]] = {
                "estimated_afb": float(raw["estimated_afb"]),
                "severity": raw["severity"],
                "patient_diagnosis": int(raw["patient_diagnosis"]),
            }
    except ValueError as exc:
        raise ValidationError(f"{d / 'recordings.csv'}: {exc}") from None
    return windows, recs
