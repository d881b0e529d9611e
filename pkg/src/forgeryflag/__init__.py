"""forgeryflag: patch-level art-forgery flagging pipeline.

Corpus splitting, entropy-filtered patch extraction, from-scratch KAN and
PatchNet classifiers, and painting-level flag reports, with a CLI that
chains the stages into reproducible runs.
"""

__version__ = "0.1.0"

from .corpus import (
    ArtworkRecord, CorpusManifest, SplitPlan,
    filter_min_width, generate_split, generate_split_suite, ingest_manifest,
)
from .errors import DataError, NumericalAbort
from .estimators import KanClassifier, PatchNetClassifier
from .kan import KanNetwork, SplineGrid, bspline_basis, build_kan
from .cnn import PATCHNET_SIZES, PatchNetConfig, build_patchnet
from .patching import (
    Patch, PatchGrid, channel_entropy, extract_patches, filter_by_entropy,
    gaussian_blur, mean_entropy, patch_to_tensor, plan_grid,
)
from .trainer import TrainConfig, TrainReport, evaluate, suite_run, train_on_split
from .flagging import (
    FlagReport, PatchPrediction, count_misattributed, cross_resolution_compare,
    flag_paintings, model_agreement, render_overlay, top_k_forger,
)
from .synth import synth_corpus

__all__ = [
    "ArtworkRecord", "CorpusManifest", "SplitPlan", "ingest_manifest",
    "filter_min_width", "generate_split", "generate_split_suite",
    "Patch", "PatchGrid", "plan_grid", "channel_entropy", "mean_entropy",
    "extract_patches", "filter_by_entropy", "gaussian_blur", "patch_to_tensor",
    "SplineGrid", "KanNetwork", "build_kan", "bspline_basis",
    "PatchNetConfig", "PATCHNET_SIZES", "build_patchnet",
    "TrainConfig", "TrainReport", "train_on_split", "evaluate", "suite_run",
    "KanClassifier", "PatchNetClassifier",
    "PatchPrediction", "FlagReport", "top_k_forger", "flag_paintings",
    "count_misattributed", "model_agreement", "cross_resolution_compare",
    "render_overlay",
    "synth_corpus",
    "DataError", "NumericalAbort",
    "__version__",
]
