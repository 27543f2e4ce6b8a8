"""Synthetic annotated RR recordings with a controlled AF_l burden.

Rhythm models (all RR values in ms, clipped to [200, 3000] and rounded to
integers):

* NSR: Gaussian around ``nsr_mean_rr`` plus a respiratory sine.
* AF: serially independent log-normal draws with coefficient of variation
  ``af_cv``; this irregularity is what the classifier must learn.
* AFL: near-constant RR (2:1 conduction) with small jitter, deliberately
  NSR-like in variability.
* AT: fast, regular Gaussian rhythm (non-AF_l).

A recording alternates NSR gaps and arrhythmic episodes whose log-normal
lengths are trimmed so the realised beat-time burden matches the target.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BurdenUnreachable, ConfigError, InvalidParams
from .formats import ManifestRow, write_beat_csv, write_manifest
from .rr_core import BeatLabel, Recording, compute_afb

RR_MIN_MS = 200.0
RR_MAX_MS = 3000.0
MAX_ATTEMPTS = 100
BURDEN_TOLERANCE = 2.0


@dataclass(frozen=True)
class RhythmParams:
    nsr_mean_rr: float = 850.0
    nsr_sdnn: float = 40.0
    nsr_resp_amp: float = 30.0
    nsr_resp_period: float = 4.0
    af_mean_rr: float = 600.0
    af_cv: float = 0.24
    afl_rr: float = 400.0
    afl_jitter: float = 4.0
    at_mean_rr: float = 450.0
    at_sdnn: float = 15.0
    # log-sd of a per-episode multiplier on the NSR/AF/AT mean RR
    rate_spread: float = 0.1

    def validate(self) -> "RhythmParams":
        for name in ("nsr_mean_rr", "af_mean_rr", "afl_rr", "at_mean_rr", "nsr_resp_period"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive")
        for name in ("nsr_sdnn", "nsr_resp_amp", "afl_jitter", "at_sdnn", "rate_spread"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be non-negative")
        if self.af_cv < 0.2:
            raise InvalidParams(f"af_cv={self.af_cv}: AF needs a coefficient of variation >= 0.2")
        if self.afl_jitter / self.afl_rr > 0.02:
            raise InvalidParams("AFL jitter must stay within 2% of the flutter RR")
        return self


def gen_segment(
    rhythm: BeatLabel,
    n_beats: int,
    params: RhythmParams,
    rng: np.random.Generator,
    rate_scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n_beats`` RR intervals of one rhythm; labels are constant."""
    if n_beats < 1:
        raise InvalidParams("n_beats must be >= 1")
    if not rate_scale > 0:
        raise InvalidParams("rate_scale must be positive")
    params.validate()
    rhythm = BeatLabel(rhythm)
    if rhythm == BeatLabel.OTHER:
        i = np.arange(n_beats)
        phase = rng.uniform(0, 2 * math.pi)
        rr = (params.nsr_mean_rr * rate_scale
              + params.nsr_resp_amp * np.sin(2 * math.pi * i / params.nsr_resp_period + phase)
              + rng.normal(0.0, 1.0, n_beats) * params.nsr_sdnn)
    elif rhythm == BeatLabel.AF:
        sigma = math.sqrt(math.log1p(params.af_cv**2))
        mu = math.log(params.af_mean_rr * rate_scale) - sigma**2 / 2
        rr = rng.lognormal(mu, sigma, n_beats)
    elif rhythm == BeatLabel.AFL:
        rr = params.afl_rr + rng.normal(0.0, 1.0, n_beats) * params.afl_jitter
    elif rhythm == BeatLabel.AT:
        rr = params.at_mean_rr * rate_scale + rng.normal(0.0, 1.0, n_beats) * params.at_sdnn
    else:
        raise InvalidParams(f"no rhythm model for {rhythm.name}")
    rr = np.rint(np.clip(rr, RR_MIN_MS, RR_MAX_MS))
    return rr, np.full(n_beats, int(rhythm), dtype=np.int8)


def _timed_segment(rhythm, duration_ms, params, rng, rate_scale=1.0):
    """Beats of one rhythm until their cumulative time first reaches ``duration_ms``."""
    mean = {
        BeatLabel.OTHER: params.nsr_mean_rr * rate_scale,
        BeatLabel.AF: params.af_mean_rr * rate_scale,
        BeatLabel.AFL: params.afl_rr,
        BeatLabel.AT: params.at_mean_rr * rate_scale,
    }[rhythm]
    parts, labs, total = [], [], 0.0
    while total < duration_ms:
        n = int(math.ceil((duration_ms - total) / mean * 1.2)) + 8
        rr, lab = gen_segment(rhythm, n, params, rng, rate_scale)
        cum = total + np.cumsum(rr)
        stop = int(np.searchsorted(cum, duration_ms)) + 1
        parts.append(rr[:stop])
        labs.append(lab[:stop])
        total = float(cum[min(stop, n) - 1])
    return np.concatenate(parts), np.concatenate(labs)


@dataclass(frozen=True)
class GenConfig:
    n_recordings: int = 10
    duration_hours: float = 2.0
    target_afb: tuple = (0.0,)  # cycled over recordings
    afl_fraction: float = 0.0
    at_fraction: float = 0.0  # share of non-AF_l time spent in AT episodes
    episode_median_min: float = 5.0
    episode_sigma: float = 1.0
    age_range: tuple = (18, 95)
    origins: tuple = ("site-A", "site-B", "site-C")
    seed: int = 0
    id_prefix: str = "rec"
    rhythm: RhythmParams = field(default_factory=RhythmParams)

    def __post_init__(self):
        tgt = self.target_afb
        tgt = tuple(float(t) for t in (tgt if isinstance(tgt, (list, tuple)) else (tgt,)))
        object.__setattr__(self, "target_afb", tgt)
        object.__setattr__(self, "age_range", tuple(self.age_range))
        object.__setattr__(self, "origins", tuple(self.origins))
        if isinstance(self.rhythm, dict):
            object.__setattr__(self, "rhythm", _from_dict(RhythmParams, self.rhythm))

    def validate(self) -> "GenConfig":
        if self.n_recordings < 1:
            raise ConfigError("n_recordings must be >= 1")
        if self.duration_hours * 60 < 10:
            raise ConfigError("recordings must last at least 10 minutes")
        if not self.target_afb or any(not 0 <= t <= 100 for t in self.target_afb):
            raise ConfigError(f"target_afb values must lie in [0, 100], got {self.target_afb}")
        for name in ("afl_fraction", "at_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.episode_median_min <= 0 or self.episode_sigma < 0:
            raise ConfigError("episode length distribution needs a positive median")
        lo, hi = self.age_range
        if not 18 <= lo <= hi:
            raise ConfigError("age_range must satisfy 18 <= low <= high")
        if not self.origins:
            raise ConfigError("origins must not be empty")
        try:
            self.rhythm.validate()
        except InvalidParams as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_afb"] = list(self.target_afb)
        d["age_range"] = list(self.age_range)
        d["origins"] = list(self.origins)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        return _from_dict(cls, data)


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
    return cls(**data)


def recording_seed(master: int, index: int) -> int:
    """Per-recording seed derived from (master seed, recording index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _schedule(cfg: GenConfig, target: float, total_ms: float, rng) -> list[tuple[BeatLabel, float, float]]:
    """(rhythm, duration ms, rate scale) segments in temporal order."""
    p = cfg.rhythm

    def scale():
        return float(math.exp(rng.normal(0.0, p.rate_spread))) if p.rate_spread > 0 else 1.0

    def arrhythmia():
        return BeatLabel.AFL if rng.random() < cfg.afl_fraction else BeatLabel.AF

    def gap(duration):
        if duration <= 0:
            return []
        if cfg.at_fraction <= 0:
            return [(BeatLabel.OTHER, duration, scale())]
        at = duration * cfg.at_fraction
        half = (duration - at) / 2
        return [(BeatLabel.OTHER, half, scale()), (BeatLabel.AT, at, scale()), (BeatLabel.OTHER, half, scale())]

    af_ms = target / 100.0 * total_ms
    if af_ms <= 0:
        return gap(total_ms)
    if target >= 100:
        return [(arrhythmia(), total_ms, scale())]
    median_ms = cfg.episode_median_min * 60_000
    lengths = []
    while sum(lengths) < af_ms:
        lengths.append(float(rng.lognormal(math.log(median_ms), cfg.episode_sigma)))
    lengths[-1] = af_ms - sum(lengths[:-1])
    if len(lengths) > 1 and lengths[-1] < 60_000:
        tail = lengths.pop()
        lengths[-1] += tail
    gaps = rng.dirichlet(np.ones(len(lengths) + 1)) * (total_ms - af_ms)
    segs = gap(gaps[0])
    for ep, g in zip(lengths, gaps[1:]):
        segs.append((arrhythmia(), ep, scale()))
        segs += gap(g)
    return [s for s in segs if s[1] > 0]


def gen_recording(
    cfg: GenConfig,
    rng: np.random.Generator,
    target_afb: Optional[float] = None,
    rec_id: str = "rec0",
) -> Recording:
    """One synthetic recording whose beat-time AF_l burden is within 2 points of target.

    Raises:
        BurdenUnreachable: if 100 schedules all miss the tolerance.
    """
    target = cfg.target_afb[0] if target_afb is None else float(target_afb)
    if not 0 <= target <= 100:
        raise ConfigError(f"target_afb {target} outside [0, 100]")
    if cfg.duration_hours * 60 < 10:
        raise ConfigError("recordings must last at least 10 minutes")
    total_ms = cfg.duration_hours * 3_600_000
    lo, hi = cfg.age_range
    age = int(rng.integers(lo, hi + 1))
    sex = "F" if rng.random() < 0.5 else "M"
    origin = cfg.origins[int(rng.integers(len(cfg.origins)))]
    for _ in range(MAX_ATTEMPTS):
        parts = [_timed_segment(r, d, cfg.rhythm, rng, s) for r, d, s in _schedule(cfg, target, total_ms, rng)]
        rr = np.concatenate([pr for pr, _ in parts])
        labels = np.concatenate([pl for _, pl in parts])
        binary = (labels == BeatLabel.AF) | (labels == BeatLabel.AFL)
        if abs(compute_afb(rr, binary) - target) <= BURDEN_TOLERANCE:
            return Recording(rec_id, rr, labels, age, sex, origin)
    raise BurdenUnreachable(f"{rec_id}: could not realise AFB {target}% within {BURDEN_TOLERANCE} points")


def gen_cohort(cfg: GenConfig, start_index: int = 0, threads: int = 1) -> list[tuple[Recording, int]]:
    """All recordings of ``cfg`` in memory, paired with their derived seeds.

    Each recording draws only from its own derived seed, so the result does
    not depend on ``threads``.
    """
    cfg.validate()

    def one(i):
        seed = recording_seed(cfg.seed, i)
        target = cfg.target_afb[i % len(cfg.target_afb)]
        return gen_recording(cfg, np.random.default_rng(seed), target, f"{cfg.id_prefix}{i:04d}"), seed

    indices = range(start_index, start_index + cfg.n_recordings)
    if threads <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, indices))


def gen_dataset(cfg: GenConfig, out_dir, threads: int = 1) -> list:
    """Write one beat CSV per recording plus ``manifest.csv``; returns the manifest rows."""
    out = Path(out_dir)
    rows = []
    for rec, seed in gen_cohort(cfg, threads=threads):
        rel = Path("beats") / f"{rec.id}.csv"
        write_beat_csv(out / rel, rec)
        rows.append(ManifestRow.from_recording(rec, rel.as_posix(), seed))
    write_manifest(out / "manifest.csv", rows)
    return rows
