"""
Dense tensor helpers shared by every engine module.

Tensors are plain numpy arrays stored as float32; reductions accumulate in
float64. Randomness comes from counter-based Philox generators so a work
item's stream depends only on (seed, index).
"""
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.utils import NonFiniteError

STORAGE_DTYPE = np.float32


def check_finite(name: str, array: np.ndarray) -> np.ndarray:
    """
    Raise NonFiniteError if `array` holds NaN or Inf.

    Args:
        name: What the array is, for the diagnostic
        array: Array to check

    Returns:
        The array unchanged
    """
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(f"{name}: {bad} non-finite value(s) of {np.size(array)}")
    return array


def _result_dtype(array: np.ndarray):
    return np.result_type(array.dtype, STORAGE_DTYPE)


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """
    Numerically stable softmax along `axis` (the class axis).

    float32 input returns float32, float64 input returns float64; the
    exponentials and the normalizer are always evaluated in float64.

    Args:
        logits: Array with K >= 2 entries along `axis`
        axis: Class axis

    Returns:
        Probabilities with the same shape as `logits`
    """
    logits = np.asarray(logits)
    if logits.shape[axis] < 2:
        raise ValueError(f"softmax needs K >= 2 classes, got {logits.shape[axis]}")
    check_finite("softmax logits", logits)
    shifted = logits.astype(np.float64) - np.max(logits, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / np.sum(exps, axis=axis, keepdims=True)
    return probs.astype(_result_dtype(logits))


def log_softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """log(softmax(logits)) without forming the probabilities."""
    logits = np.asarray(logits)
    check_finite("log_softmax logits", logits)
    shifted = logits.astype(np.float64) - np.max(logits, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return out.astype(_result_dtype(logits))


def one_hot(cls: int, num_classes: int) -> np.ndarray:
    """
    Indicator vector e_cls of length `num_classes`.

    Raises:
        ValueError: if cls is outside [0, num_classes)
    """
    if not 0 <= cls < num_classes:
        raise ValueError(f"class {cls} outside [0, {num_classes})")
    vec = np.zeros(num_classes, dtype=STORAGE_DTYPE)
    vec[cls] = 1.0
    return vec


def one_hot_map(labels: np.ndarray, num_classes: int, ignore_index: int) -> np.ndarray:
    """
    K x H x W indicator field for an H x W label map.

    Ignored pixels get an all-zero column.
    """
    labels = np.asarray(labels)
    valid = labels != ignore_index
    if np.any(labels[valid] >= num_classes) or np.any(labels[valid] < 0):
        raise ValueError(f"labels must lie in [0, {num_classes}) or equal {ignore_index}")
    safe = np.where(valid, labels, 0)
    field = (np.arange(num_classes)[:, None, None] == safe[None]).astype(np.float64)
    return field * valid[None]


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator for a single owner."""
    return np.random.Generator(np.random.Philox(seed))


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """
    Generator for work item `index` under global `seed`.

    The stream depends only on (seed, index), never on which worker runs it
    or in which order items are processed.
    """
    if seed < 0 or index < 0:
        raise ValueError(f"seed and index must be non-negative, got ({seed}, {index})")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def uniform_noise(
    rng: np.random.Generator, shape: Sequence[int], lo: float, hi: float
) -> np.ndarray:
    """
    float32 tensor of i.i.d. uniform draws in [lo, hi].

    Raises:
        ValueError: if lo > hi
    """
    if lo > hi:
        raise ValueError(f"uniform_noise needs lo <= hi, got ({lo}, {hi})")
    draws = rng.uniform(lo, hi, size=tuple(shape)).astype(STORAGE_DTYPE)
    return np.clip(draws, STORAGE_DTYPE(lo), STORAGE_DTYPE(hi))
