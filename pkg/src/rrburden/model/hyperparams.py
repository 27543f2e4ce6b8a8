"""Hyperparameters and the random-search space."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any

import numpy as np

from ..errors import ConfigError, InvalidHyperparam


@dataclass(frozen=True)
class SearchDim:
    kind: str  # "categorical" | "int" | "real"
    prior: str  # "uniform" | "log-uniform" | "choice"
    low: float = 0.0
    high: float = 0.0
    choices: tuple = ()

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if self.kind == "int" and int(value) != value:
            return False
        return self.low <= value <= self.high

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.prior == "log-uniform":
            x = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        else:
            x = rng.uniform(self.low, self.high)
        if self.kind == "int":
            # rounding in linear space keeps endpoints reachable
            return int(min(max(round(x), self.low), self.high))
        return float(x)


SEARCH_SPACE: dict[str, SearchDim] = {
    "w_s": SearchDim("categorical", "choice", choices=(60, 70, 80, 90, 100, 110, 120)),
    "n_b": SearchDim("int", "uniform", 3, 7),
    "n_f": SearchDim("int", "log-uniform", 2**5, 2**7),
    "f_l": SearchDim("int", "uniform", 3, 10),
    "d_r1": SearchDim("real", "uniform", 0.0, 0.5),
    "n_hu": SearchDim("int", "log-uniform", 2**6, 2**9),
    "d_r2": SearchDim("real", "uniform", 0.0, 0.8),
    "alpha": SearchDim("real", "log-uniform", 1e-5, 1e-2),
}


@dataclass(frozen=True)
class Hyperparams:
    w_s: int = 60
    n_b: int = 5
    n_f: int = 64
    f_l: int = 10
    d_r1: float = 0.2
    n_hu: int = 512
    d_r2: float = 0.5
    alpha: float = 1e-2
    h: int = 9
    gru_hidden: int = 64
    stage2_dense: int = 32
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.1
    stage2_binary_input: bool = False

    @property
    def embedding_width(self) -> int:
        return self.n_hu // 4

    @property
    def block_filters(self) -> list[int]:
        return [self.n_f * 2 ** (i // 2) for i in range(self.n_b)]

    def validate(self, allow_out_of_range: bool = False) -> "Hyperparams":
        """Check structural sanity, and search-space bounds unless ``allow_out_of_range``."""
        ints = {"w_s": 2, "n_b": 1, "n_f": 1, "f_l": 1, "n_hu": 4, "h": 0,
                "gru_hidden": 1, "stage2_dense": 1, "batch_size": 1, "max_epochs": 1, "patience": 1}
        for name, lo in ints.items():
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < lo:
                raise InvalidHyperparam(f"{name}={v!r} must be an integer >= {lo}")
        for name in ("d_r1", "d_r2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise InvalidHyperparam(f"{name}={v} must lie in [0, 1)")
        if not self.alpha > 0:
            raise InvalidHyperparam(f"alpha={self.alpha} must be positive")
        if not 0 < self.val_fraction < 1:
            raise InvalidHyperparam(f"val_fraction={self.val_fraction} must lie in (0, 1)")
        if (self.w_s - 1) // 2 ** (self.n_b // 2) < 1:
            raise InvalidHyperparam(f"w_s={self.w_s} too short for {self.n_b} blocks of pooling")
        if not allow_out_of_range:
            for name, dim in SEARCH_SPACE.items():
                v = getattr(self, name)
                if not dim.contains(v):
                    raise InvalidHyperparam(
                        f"{name}={v!r} outside search space "
                        f"{dim.choices or (dim.low, dim.high)} (use allow_out_of_range)"
                    )
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: "Hyperparams | None" = None) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {', '.join(unknown)}")
        return replace(base or cls(), **data)


def sample_hyperparams(rng: np.random.Generator, base: Hyperparams | None = None) -> Hyperparams:
    """Draw one configuration from the search-space priors; other fields come from ``base``."""
    drawn = {name: dim.sample(rng) for name, dim in SEARCH_SPACE.items()}
    return replace(base or Hyperparams(), **drawn)
