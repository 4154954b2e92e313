"""Foreground segmentation network: inference, thresholding and metrics."""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    Error,
    Model,
    ShapeError,
    binarize,
    confusion,
    evaluate_sequence,
    fom,
    fom_soft,
    layer_shapes,
    otsu_threshold,
    parameter_count,
    read_mask,
    read_scores,
    remove_small_regions,
    run_cli,
    summary,
    threshold_global,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Error",
    "Model",
    "ShapeError",
    "binarize",
    "confusion",
    "evaluate_sequence",
    "fom",
    "fom_soft",
    "layer_shapes",
    "otsu_threshold",
    "parameter_count",
    "read_mask",
    "read_scores",
    "remove_small_regions",
    "run_cli",
    "summary",
    "threshold_global",
]
