"""Training-free key-value cache adapter for few-shot classification."""

from ._core import (
    Cache,
    EpochStats,
    ErrorCode,
    Hyperparams,
    SearchResult,
    TipcacheError,
    TrainLog,
    activation,
    build_cache,
    ce_loss,
    compress_shots,
    cosine_lr,
    ensemble_classifier,
    fine_tune,
    grid_search,
    key_gradient,
    load_manifest,
    predict,
    predict_batch,
    predict_multimodal,
    read_cache,
    read_feature_header,
    read_features,
    read_labels,
    reduce_cache,
    softmax,
    write_cache,
    write_features,
    write_labels,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
