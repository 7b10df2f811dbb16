"""
Per-pixel attack objectives and their analytic logit gradients.

Every objective's logit gradient has the form w_i * (p_i - e_{y_i}) / n,
where w_i is a per-pixel factor: 1 for cross-entropy, p_y^(1-q) for Tsallis,
0.5 * p_y * log(1 + 1/p_y) for Jensen-Shannon, and a constant (not
differentiated) weight for SegPGD, CosPGD and masked cross-entropy.
All arithmetic runs in float64.
"""
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import IGNORE_INDEX, NumericConstants
from shared.models import LossKind, LossName, MaskNormalization, ScheduleType
from .tensor_core import check_finite, one_hot_map, softmax

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class LossContext:
    """
    Iteration context for objectives whose weights change over the attack.

    Correctness masks (SegPGD, MaskedCE) are recomputed from the logits
    being scored, so no prediction needs to be passed in.
    """
    t: int = 0
    T: int = 1

    def __post_init__(self):
        if self.T < 1 or not 0 <= self.t <= self.T:
            raise ValueError(f"invalid iteration context t={self.t}, T={self.T}")


@dataclass(frozen=True)
class PixelLossReport:
    scalar_loss: float
    logit_grad: np.ndarray       # K x H x W, zero at ignored pixels
    per_pixel_loss: np.ndarray   # H x W, zero at ignored pixels
    weights: np.ndarray          # H x W factor multiplying (p - e_y)


# ============== CLOSED FORMS ==============

def _clamp(p) -> np.ndarray:
    return np.maximum(np.asarray(p, dtype=np.float64), NumericConstants.PROB_FLOOR)


def _check_probability(p_y) -> None:
    p = np.asarray(p_y, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0 + 1e-12) or not np.all(np.isfinite(p)):
        raise ValueError("p_y must lie in (0, 1]")


def ce_loss(p_y):
    """-log p_y with the probability clamped at 1e-12."""
    _check_probability(p_y)
    return -np.log(_clamp(p_y))


def tsallis_loss(p_y, q: float):
    """
    Tsallis cross-entropy (1 - p_y^(1-q)) / (1 - q).

    Evaluated as -expm1((1-q) log p) / (1-q) so it stays accurate as q -> 1.

    Raises:
        ValueError: for q == 1 (use the cross-entropy path) or p_y outside (0, 1]
    """
    if q == 1:
        raise ValueError("q = 1 is the cross-entropy limit; dispatch to CE")
    _check_probability(p_y)
    a = 1.0 - q
    out = -np.expm1(a * np.log(_clamp(p_y))) / a
    return float(out) if np.ndim(out) == 0 else out


def js_loss(p_y):
    """
    Jensen-Shannon divergence between softmax(u) and e_y (natural log).

    With m = (p + e_y)/2 every off-class term collapses, leaving a function
    of p_y alone: log 2 + (p log p - (1 + p) log(1 + p)) / 2.
    """
    _check_probability(p_y)
    p = _clamp(p_y)
    return _LOG2 + 0.5 * (p * np.log(p) - (1.0 + p) * np.log1p(p))


def grad_peak(q: float) -> float:
    """
    Probability (1-q)/(2-q) at which p^(2(1-q)) (1-p)^2 peaks.

    Raises:
        ValueError: for q >= 1, where the peak degenerates to 0
    """
    if q >= 1:
        raise ValueError(f"gradient peak needs q < 1, got {q}")
    return (1.0 - q) / (2.0 - q)


def tsallis_grad_bounds(p_y: float, q: float, num_classes: int) -> Tuple[float, float]:
    """
    Lower and upper bounds on the squared logit-gradient norm of the
    per-pixel Tsallis loss (q = 1 gives the cross-entropy bounds).

    Returns:
        (K/(K-1) p^(2(1-q)) (1-p)^2,  p^(2(1-q)) (1 - p + (1-p)^2))
    """
    if not 0.0 < p_y <= 1.0:
        raise ValueError(f"p_y must lie in (0, 1], got {p_y}")
    if num_classes < 2:
        raise ValueError(f"K must be >= 2, got {num_classes}")
    scale = p_y ** (2.0 * (1.0 - q))
    gap = 1.0 - p_y
    lower = num_classes / (num_classes - 1) * scale * gap ** 2
    upper = scale * (gap + gap ** 2)
    return float(lower), float(upper)


# ============== KIND RESOLUTION ==============

def resolve_kind(kind: LossKind, q: Optional[float] = None) -> LossKind:
    """
    Concrete kind for one iteration: Tsallis takes `q` (or its fixed
    schedule value); q == 1 dispatches to cross-entropy.
    """
    if kind.name != LossName.TSALLIS:
        return kind
    if q is None:
        q = kind.q
    if q is None and kind.q_schedule is not None and kind.q_schedule.kind == ScheduleType.FIXED:
        q = kind.q_schedule.q_start
    if q is None:
        raise ValueError(f"{kind.label}: no concrete q to evaluate")
    if q >= 1.0:
        return LossKind(name=LossName.CE)
    return LossKind(name=LossName.TSALLIS, q=q)


# ============== FIELD OBJECTIVES ==============

def _prepare(logits: np.ndarray, labels: np.ndarray, ignore_index: int):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 3:
        raise ValueError(f"logits must be K x H x W, got {logits.shape}")
    if labels.shape != logits.shape[1:]:
        raise ValueError(f"labels shape {labels.shape} != logits spatial shape {logits.shape[1:]}")
    num_classes = logits.shape[0]
    onehot = one_hot_map(labels, num_classes, ignore_index)
    probs = softmax(logits.astype(np.float64), axis=0)
    valid = labels != ignore_index
    p_y = np.where(valid, np.sum(probs * onehot, axis=0), 1.0)
    correct = valid & (np.argmax(logits, axis=0) == labels)
    return probs, onehot, valid, p_y, correct


def _reduce(per_pixel: np.ndarray, weights: np.ndarray, probs: np.ndarray,
            onehot: np.ndarray, valid: np.ndarray, denom: float) -> PixelLossReport:
    per_pixel = np.where(valid, per_pixel, 0.0)
    weights = np.where(valid, weights, 0.0)
    if denom <= 0:
        scalar = 0.0
        grad = np.zeros_like(probs)
    else:
        scalar = float(np.sum(per_pixel, dtype=np.float64) / denom)
        grad = (weights / denom)[None] * (probs - onehot) * valid[None]
    check_finite("objective value", np.asarray(scalar))
    check_finite("logit gradient", grad)
    return PixelLossReport(scalar_loss=scalar, logit_grad=grad, per_pixel_loss=per_pixel, weights=weights)


def weighted_ce(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                ignore_index: int = IGNORE_INDEX, normalizer: Optional[float] = None) -> PixelLossReport:
    """
    sum_i w_i * CE_i / n with the weights held constant.

    This is the surrogate whose gradient SegPGD, CosPGD and masked CE
    ascend; `normalizer` defaults to the number of non-ignored pixels.
    """
    probs, onehot, valid, p_y, _ = _prepare(logits, labels, ignore_index)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != valid.shape:
        raise ValueError(f"weights shape {weights.shape} != label shape {valid.shape}")
    denom = float(np.count_nonzero(valid)) if normalizer is None else float(normalizer)
    per_pixel = weights * -np.log(_clamp(p_y))
    return _reduce(per_pixel, weights, probs, onehot, valid, denom)


def _segpgd_weights(correct: np.ndarray, ctx: LossContext) -> np.ndarray:
    lam = ctx.t / (2.0 * ctx.T)
    return np.where(correct, 1.0 - lam, lam)


def _cospgd_weights(probs: np.ndarray, p_y: np.ndarray) -> np.ndarray:
    # cos(softmax(u), e_y) = p_y / ||p||_2
    return p_y / np.sqrt(np.sum(probs ** 2, axis=0))


def pixel_weights(kind: LossKind, logits: np.ndarray, labels: np.ndarray,
                  ctx: Optional[LossContext] = None, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """H x W factor multiplying (p - e_y) in the kind's logit gradient."""
    return loss_and_logit_grad(kind, logits, labels, ctx, ignore_index).weights


def loss_and_logit_grad(kind: LossKind, logits: np.ndarray, labels: np.ndarray,
                        ctx: Optional[LossContext] = None,
                        ignore_index: int = IGNORE_INDEX) -> PixelLossReport:
    """
    Scalar objective (mean over non-ignored pixels), its logit gradient and
    the per-pixel losses for one image.

    Args:
        kind: Objective; Tsallis needs a concrete q (see resolve_kind)
        logits: K x H x W logits
        labels: H x W ground truth with `ignore_index` for void pixels
        ctx: Iteration context, required by SegPGD
        ignore_index: Label value excluded from the objective

    Returns:
        PixelLossReport
    """
    kind = resolve_kind(kind)
    probs, onehot, valid, p_y, correct = _prepare(logits, labels, ignore_index)
    n_valid = float(np.count_nonzero(valid))
    ce = -np.log(_clamp(p_y))

    if kind.name == LossName.CE:
        return _reduce(ce, np.ones_like(p_y), probs, onehot, valid, n_valid)

    if kind.name == LossName.TSALLIS:
        a = 1.0 - kind.q
        weight = np.exp(a * np.log(_clamp(p_y)))
        per_pixel = -np.expm1(a * np.log(_clamp(p_y))) / a
        return _reduce(per_pixel, weight, probs, onehot, valid, n_valid)

    if kind.name == LossName.JS:
        p = _clamp(p_y)
        per_pixel = js_loss(np.minimum(p_y, 1.0))
        weight = 0.5 * p * np.log1p(1.0 / p)
        return _reduce(per_pixel, weight, probs, onehot, valid, n_valid)

    if kind.name == LossName.SEGPGD:
        if ctx is None:
            raise ValueError("SegPGD needs an iteration context (t, T)")
        weight = _segpgd_weights(correct, ctx)
        return _reduce(weight * ce, weight, probs, onehot, valid, n_valid)

    if kind.name == LossName.COSPGD:
        weight = _cospgd_weights(probs, p_y)
        return _reduce(weight * ce, weight, probs, onehot, valid, n_valid)

    if kind.name == LossName.MASKED_CE:
        weight = correct.astype(np.float64)
        if kind.mask_normalization == MaskNormalization.MASKED:
            denom = float(np.count_nonzero(correct))
        else:
            denom = n_valid
        return _reduce(weight * ce, weight, probs, onehot, valid, denom)

    raise ValueError(f"Unknown loss kind: {kind.name}")


# ============== WEIGHTING CURVES ==============

def _curve_weight(kind: LossKind, p: np.ndarray) -> np.ndarray:
    """Squared logit-gradient proxy w(p)^2 (1-p)^2 on the binary slice."""
    gap_sq = (1.0 - p) ** 2
    if kind.name == LossName.CE:
        return gap_sq
    if kind.name == LossName.TSALLIS:
        concrete = resolve_kind(kind)
        q = concrete.q if concrete.name == LossName.TSALLIS else 1.0
        return p ** (2.0 * (1.0 - q)) * gap_sq
    if kind.name == LossName.JS:
        return (0.5 * p * np.log1p(1.0 / p)) ** 2 * gap_sq
    if kind.name == LossName.COSPGD:
        return p ** 2 / (p ** 2 + (1.0 - p) ** 2) * gap_sq
    if kind.name == LossName.MASKED_CE:
        return np.where(p > 0.5, gap_sq, 0.0)
    raise ValueError(f"{kind.label}: weighting depends on the iteration, no stationary curve")


def weighting_curve(kind: LossKind, grid: Sequence[float]) -> List[Tuple[float, float]]:
    """
    Per-pixel gradient weighting as a function of p_y, scaled to unit maximum.

    Tsallis and CE use p^(2(1-q)) (1-p)^2 (q = 1 for CE); JS, CosPGD and
    masked CE use their squared logit-gradient norm on the K = 2 slice.

    Args:
        kind: Objective (Tsallis needs a concrete or fixed q)
        grid: p values in (0, 1)

    Returns:
        List of (p, weight) pairs
    """
    p = np.asarray(list(grid), dtype=np.float64)
    if p.size == 0:
        raise ValueError("weighting curve needs a non-empty grid")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("grid values must lie in (0, 1)")
    raw = _curve_weight(kind, p)
    peak = raw.max()
    weights = raw / peak if peak > 0 else raw
    return [(float(a), float(b)) for a, b in zip(p, weights)]


def uniform_grid(step: float) -> List[float]:
    """Open-interval grid step, 2*step, ..., 1 - step."""
    if not 0.0 < step < 0.5:
        raise ValueError(f"grid step must lie in (0, 0.5), got {step}")
    n = int(round(1.0 / step))
    return [i / n for i in range(1, n)]
