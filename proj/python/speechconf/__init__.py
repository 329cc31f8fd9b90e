"""Python access to the speechconf core: prosodic features, rater
aggregation, temperature scaling, confidence filtering and fold plans."""

from ._core import (
    CANONICAL_RATE,
    MISSING,
    NOT_CLEAR,
    SpeechconfError,
    apply_temperature,
    dawid_skene,
    extract_prosodic,
    feature_layout,
    filter_by_confidence,
    fit_temperature,
    icc_2k,
    icc_2k_ratings,
    load_wav,
    majority_vote,
    make_fold_plan,
    preprocess,
)

__version__ = "0.3.0"

__all__ = [
    "CANONICAL_RATE",
    "MISSING",
    "NOT_CLEAR",
    "SpeechconfError",
    "apply_temperature",
    "dawid_skene",
    "extract_prosodic",
    "feature_layout",
    "filter_by_confidence",
    "fit_temperature",
    "icc_2k",
    "icc_2k_ratings",
    "load_wav",
    "majority_vote",
    "make_fold_plan",
    "preprocess",
]
