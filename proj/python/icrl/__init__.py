"""ICRL-Net few-shot classification: Python access to the C++ core."""

from ._icrl import (
    ConfigError,
    ContractError,
    Dataset,
    IoError,
    Model,
    ParseError,
    build_model,
    config_keys,
    evaluate,
    gen_blobs,
    gen_outlier_blobs,
    infer_episode,
    meta_train,
    run,
    split_classes,
    summarize_accuracies,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Dataset",
    "IoError",
    "Model",
    "ParseError",
    "build_model",
    "config_keys",
    "evaluate",
    "gen_blobs",
    "gen_outlier_blobs",
    "infer_episode",
    "meta_train",
    "run",
    "split_classes",
    "summarize_accuracies",
]
