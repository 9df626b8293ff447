"""Query-aware context merging for retrieval-augmented generation."""

from ._mergectx import (
    ConfigError,
    Error,
    budget,
    conditional_nll,
    exact_match,
    extractive_fuse,
    lexical_scores,
    merge,
    normalize_answer,
    run_cli,
    substring_accuracy,
    token_f1,
    topk,
)

__all__ = [
    "ConfigError",
    "Error",
    "budget",
    "conditional_nll",
    "exact_match",
    "extractive_fuse",
    "lexical_scores",
    "merge",
    "normalize_answer",
    "run_cli",
    "substring_accuracy",
    "token_f1",
    "topk",
]
