"""Two-stage AF_l window classifier: residual CNN then severity-routed GRUs."""

from .hyperparams import SEARCH_SPACE, Hyperparams, SearchDim, sample_hyperparams
from .pipeline import InferenceResult, full_inference, load_bundle, save_bundle
from .search import Trial, hyper_search
from .stage1 import Stage1Model, build_stage1, normalize_rr, stage1_infer, train_stage1
from .stage2 import (
    Stage2Model,
    build_stage2,
    stage2_examples,
    stage2_infer,
    stage2_route,
    train_stage2,
)
from .training import select_threshold

__all__ = [
    "SEARCH_SPACE",
    "Hyperparams",
    "SearchDim",
    "sample_hyperparams",
    "InferenceResult",
    "full_inference",
    "load_bundle",
    "save_bundle",
    "Trial",
    "hyper_search",
    "Stage1Model",
    "build_stage1",
    "normalize_rr",
    "stage1_infer",
    "train_stage1",
    "Stage2Model",
    "build_stage2",
    "stage2_examples",
    "stage2_infer",
    "stage2_route",
    "train_stage2",
    "select_threshold",
]
