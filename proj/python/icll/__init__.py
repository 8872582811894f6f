"""Python bindings for the in-context learning laboratory."""

from ._icll import (
    CapacityError,
    DimensionError,
    FormatError,
    IoError,
    NumericError,
    Predictor,
    PromptBatch,
    SpecError,
    UndefinedRateError,
    UsageError,
    baseline,
    boundary,
    coverage_probability,
    epsilon,
    error_rate,
    knn_predict,
    least_squares_predict,
    load_model,
    normalize_spec,
    prompt_at,
    ridge_predict,
    run_cli,
    sample_batch,
    spearman,
    theoretical_value_bound,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
