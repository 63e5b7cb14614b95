"""Input validation helpers shared by the estimators and module functions."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an input is well-formed but carries no usable content."""


def check_token_ids(tokens, name: str = "tokens", vocab_size: int | None = None) -> np.ndarray:
    arr = np.asarray(tokens)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d sequence of token ids, got shape {arr.shape}")
    if arr.size == 0:
        return arr.astype(np.int64)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"{name} must contain integer ids, got dtype {arr.dtype}")
    if arr.min() < 0:
        raise ValueError(f"{name} contains negative ids")
    if vocab_size is not None and arr.max() >= vocab_size:
        raise ValueError(f"{name} contains id {arr.max()} >= vocabulary size {vocab_size}")
    return arr.astype(np.int64)


def check_probability_vector(probs, name: str = "probs", atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} must be finite and non-negative")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (sum={p.sum():.12g})")
    return p


def check_open_unit(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_positive(value: float, name: str, strict: bool = True) -> float:
    value = float(value)
    if strict and not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_min_int(value: int, name: str, minimum: int) -> int:
    if int(value) != value or int(value) < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def check_same_length(a: Sequence, b: Sequence, names: Iterable[str] = ("a", "b")) -> None:
    na, nb = names
    if len(a) != len(b):
        raise ValueError(f"{na} and {nb} have different lengths ({len(a)} != {len(b)})")


def check_2d(array, name: str) -> np.ndarray:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d (n_samples, n_features), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
