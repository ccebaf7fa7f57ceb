"""Streaming nearest-mean classification on precomputed embeddings.

A model fitted offline (per-class means plus one shared, frozen covariance)
classifies a live stream, flags samples that do not belong to any
well-learned class, asks a label oracle about them, and folds the answers
into per-class running means, growing its class set without ever touching
the covariance or the old means.
"""

from .engine import (
    ArrayOracle,
    ClassRegistry,
    LabelOracle,
    ModelSnapshot,
    Mutation,
    OracleQueryError,
    StreamOutcome,
    process_sample,
    restore,
    run_stream,
    snapshot,
)
from .gaussian import (
    BackgroundModel,
    ClassPrototype,
    ClassState,
    FactorizationError,
    SharedGaussianModel,
    fit_initial,
    update_mean,
)
from .metrics import (
    AccuracyResult,
    DetectionTally,
    RunReport,
    build_report,
    calibrate_threshold,
    evaluate_accuracy,
    promotion_threshold_sweep,
    tally,
)
from .scoring import (
    Decision,
    Reason,
    ScoreKind,
    ScoreMethod,
    Verdict,
    classify_closed,
    decide,
    md_confidence,
    rmd_confidence,
)
from .streams import (
    DatasetSplit,
    LabeledEmbeddingSet,
    SampleStream,
    SplitSpec,
    build_calibration_stream,
    build_class_incremental_stream,
    build_random_stream,
    make_rng,
    split,
    synth_generate,
)

__version__ = "0.1.0"

__all__ = [
    "ArrayOracle",
    "AccuracyResult",
    "BackgroundModel",
    "ClassPrototype",
    "ClassRegistry",
    "ClassState",
    "DatasetSplit",
    "Decision",
    "DetectionTally",
    "FactorizationError",
    "LabelOracle",
    "LabeledEmbeddingSet",
    "ModelSnapshot",
    "Mutation",
    "OracleQueryError",
    "Reason",
    "RunReport",
    "SampleStream",
    "ScoreKind",
    "ScoreMethod",
    "SharedGaussianModel",
    "SplitSpec",
    "StreamOutcome",
    "Verdict",
    "build_calibration_stream",
    "build_class_incremental_stream",
    "build_random_stream",
    "build_report",
    "calibrate_threshold",
    "classify_closed",
    "decide",
    "evaluate_accuracy",
    "fit_initial",
    "make_rng",
    "md_confidence",
    "process_sample",
    "promotion_threshold_sweep",
    "restore",
    "rmd_confidence",
    "run_stream",
    "snapshot",
    "split",
    "synth_generate",
    "tally",
    "update_mean",
]
