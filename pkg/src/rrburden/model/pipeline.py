"""Two-stage inference over whole recordings, and model bundles on disk."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError, WeightsVersionMismatch
from ..fsutil import atomic_write_text, read_text
from ..nn.serialize import WEIGHTS_VERSION, apply_weights, dumps_weights, parse_weights
from ..rr_core import Recording, SeverityClass, WindowBatch, af_seconds, compute_afb, severity_class, window_batch
from . import stage1 as s1
from .hyperparams import Hyperparams
from .stage1 import Stage1Model, build_stage1
from .stage2 import GRU_NAMES, Stage2Model, build_stage2, history_sequences, stage2_route, window_features


@dataclass
class InferenceResult:
    windows: WindowBatch
    stage1_prob: np.ndarray
    stage1_label: np.ndarray
    stage1_afb: float
    stage1_af_seconds: float
    route: int
    stage2_prob: Optional[np.ndarray]
    final_label: np.ndarray
    estimated_afb: float
    severity: SeverityClass

    @property
    def final_prob(self) -> np.ndarray:
        return self.stage1_prob if self.stage2_prob is None else self.stage2_prob


def full_inference(m1: Stage1Model, m2: Optional[Stage2Model], r: Recording) -> InferenceResult:
    """Segment, classify windows, estimate burden, route, refine with the routed GRU.

    Routing uses the burden estimated from thresholded stage-1 outputs. With
    ``m2=None`` the stage-1 labels are final.
    """
    wb = window_batch(r, m1.hp.w_s)
    probs, embs = m1.predict(wb.rr)
    lab1 = (probs >= m1.threshold).astype(np.int8)
    afb1 = compute_afb(wb.duration_ms, lab1)
    secs1 = af_seconds(wb.duration_ms, lab1)
    route = stage2_route(afb1, secs1)
    p2 = None
    final = lab1
    if m2 is not None:
        feats = window_features(probs, embs, m1.threshold, m1.hp.stage2_binary_input)
        p2 = m2.predict(route, history_sequences(feats, m1.hp.h))
        final = (p2 >= m2.threshold).astype(np.int8)
    afb = compute_afb(wb.duration_ms, final)
    sev = severity_class(af_seconds(wb.duration_ms, final), afb)
    return InferenceResult(wb, probs, lab1, afb1, secs1, route, p2, final, afb, sev)


# --- bundle ----------------------------------------------------------------

BUNDLE_MANIFEST = "bundle.json"
STAGE1_FILE = "stage1.weights.json"
STAGE2_FILE = "stage2.weights.json"
CURVE_FILE = "training_curve.csv"


def save_bundle(out_dir, m1: Stage1Model, m2: Optional[Stage2Model], extra: Optional[dict] = None) -> None:
    out = Path(out_dir)
    manifest = {
        "version": WEIGHTS_VERSION,
        "hyperparams": m1.hp.to_dict(),
        "seed": m1.seed,
        "tau1": m1.threshold,
        "w_pos_stage1": m1.w_pos,
        "normalization": {
            "clip_ms": list(s1.RR_CLIP_MS),
            "center_s": s1.RR_CENTER_S,
            "scale_s": s1.RR_SCALE_S,
        },
        "stage2": None,
        **(extra or {}),
    }
    atomic_write_text(out / STAGE1_FILE, dumps_weights(m1.net, {"stage": 1}))
    rows = [("stage1", "all", e, loss, auc) for e, loss, auc in m1.history.rows]
    if m2 is not None:
        manifest["stage2"] = {"tau2": m2.threshold, "w_pos": list(m2.w_pos), "trained": list(m2.trained)}
        atomic_write_text(out / STAGE2_FILE, dumps_weights(m2.pool, {"stage": 2}))
        for name, hist in zip(GRU_NAMES, m2.histories):
            rows += [("stage2", name, e, loss, auc) for e, loss, auc in hist.rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "encoder", "epoch", "loss", "val_auroc"])
    for stage, enc, e, loss, auc in rows:
        w.writerow([stage, enc, e, repr(float(loss)), "" if np.isnan(auc) else repr(float(auc))])
    atomic_write_text(out / CURVE_FILE, buf.getvalue())
    atomic_write_text(out / BUNDLE_MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_bundle(bundle_dir) -> tuple[Stage1Model, Optional[Stage2Model], dict]:
    d = Path(bundle_dir)
    manifest = json.loads(read_text(d / BUNDLE_MANIFEST))
    if manifest.get("version") != WEIGHTS_VERSION:
        raise WeightsVersionMismatch(
            f"bundle version {manifest.get('version')!r}, expected {WEIGHTS_VERSION!r}"
        )
    norm = manifest.get("normalization", {})
    if (tuple(norm.get("clip_ms", ())) != s1.RR_CLIP_MS or norm.get("center_s") != s1.RR_CENTER_S
            or norm.get("scale_s") != s1.RR_SCALE_S):
        raise ConfigError("bundle was trained with a different input normalization")
    hp = Hyperparams.from_dict(manifest["hyperparams"])
    m1 = build_stage1(hp, manifest["seed"], allow_out_of_range=True)
    apply_weights(m1.net, parse_weights(read_text(d / STAGE1_FILE)))
    m1.threshold = manifest["tau1"]
    m1.w_pos = manifest["w_pos_stage1"]
    m2 = None
    if manifest.get("stage2") is not None:
        m2 = build_stage2(hp, manifest["seed"])
        apply_weights(m2.pool, parse_weights(read_text(d / STAGE2_FILE)))
        m2.threshold = manifest["stage2"]["tau2"]
        m2.w_pos = list(manifest["stage2"]["w_pos"])
        m2.trained = list(manifest["stage2"]["trained"])
    return m1, m2, manifest
