"""
APGD-style l-infinity attack on a segmentation model.

One run: random start in the phase-0 ball, then the multi-radius phases as
consecutive APGD segments (momentum, checkpointed step halving, restart from
the segment's best). The returned example is the best iterate, by the attack
objective, that is feasible at the target radius.
"""
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import ATTACK_CSV_COLUMNS, IGNORE_INDEX, ApgdConstants, NumericConstants
from shared.models import AttackConfig, LossName, QSchedule, SegDataset
from shared.tensor_io import write_tensor
from shared.utils import NonFiniteError
from .objectives import LossContext, loss_and_logit_grad, resolve_kind
from .schedules import ApgdState, apgd_update_step, phase_boundaries, q_at
from .segmodel import ModelParams, value_and_input_gradient
from .tensor_core import check_finite, derive_rng, uniform_noise

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    best_loss: float
    loss_trace: Tuple[float, ...]      # objective at each iterate
    best_trace: Tuple[float, ...]      # running best (target-feasible) objective
    iterations_used: int
    feasible: bool
    best_q: Optional[float] = None     # q the best iterate was scored with (Tsallis only)
    best_iteration: int = -1           # -1: the clean image was never beaten
    aborted: bool = False
    error: Optional[str] = None
    index: int = 0

    @property
    def failed(self) -> bool:
        return self.error is not None and not self.aborted


# ============== PRIMITIVES ==============

def project(x: np.ndarray, origin: np.ndarray, eps: float) -> np.ndarray:
    """
    Clamp onto [origin - eps, origin + eps] intersected with [0, 1].

    Raises:
        ValueError: on shape mismatch or negative eps
    """
    x = np.asarray(x)
    origin = np.asarray(origin)
    if x.shape != origin.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs origin {origin.shape}")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    lo = np.maximum(origin - eps, 0.0)
    hi = np.minimum(origin + eps, 1.0)
    return np.clip(x, lo, hi).astype(x.dtype, copy=False)


def pgd_step(x: np.ndarray, grad: np.ndarray, step: float, origin: np.ndarray, eps: float) -> np.ndarray:
    """x + step * sign(grad), projected; sign(0) = 0."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x)
    check_finite("attack gradient", grad)
    moved = x + step * np.sign(grad)
    return project(moved.astype(x.dtype, copy=False), origin, eps)


def is_feasible(x: np.ndarray, origin: np.ndarray, eps: float) -> bool:
    slack = NumericConstants.FEASIBILITY_SLACK
    diff = np.abs(x.astype(np.float64) - origin.astype(np.float64))
    return bool(diff.max(initial=0.0) <= eps + slack and x.min(initial=0.0) >= 0.0 and x.max(initial=0.0) <= 1.0)


# ============== SINGLE RUN ==============

class _Objective:
    """Per-iteration dispatch of the configured loss (q schedule, SegPGD context)."""

    def __init__(self, config: AttackConfig, ignore_index: int):
        self.kind = config.loss
        self.T = config.iters
        self.ignore_index = ignore_index
        self.schedule = None
        if self.kind.name == LossName.TSALLIS:
            self.schedule = self.kind.q_schedule or QSchedule.fixed(self.kind.q)

    def q(self, t: int) -> Optional[float]:
        return q_at(self.schedule, t, self.T) if self.schedule is not None else None

    def evaluate(self, params: ModelParams, x: np.ndarray, label: np.ndarray, t: int):
        q = self.q(t)
        kind = resolve_kind(self.kind, q) if q is not None else self.kind
        ctx = LossContext(t=t, T=self.T)
        report, grad = value_and_input_gradient(
            params, x, lambda logits: loss_and_logit_grad(kind, logits, label, ctx, self.ignore_index)
        )
        return report.scalar_loss, grad, q


@dataclass
class _Best:
    x: np.ndarray
    loss: float
    q: Optional[float]
    iteration: int


def _single_run(params: ModelParams, image: np.ndarray, label: np.ndarray, config: AttackConfig,
                objective: _Objective, rng: np.random.Generator):
    T = config.iters
    eps = config.eps
    segments = phase_boundaries(config.phases, T)
    radii = [m * eps for m, _ in config.phases.phases]

    clean_loss, _, clean_q = objective.evaluate(params, image, label, 0)
    best = _Best(x=image.copy(), loss=clean_loss, q=clean_q, iteration=-1)

    x = project(image + uniform_noise(rng, image.shape, -radii[0], radii[0]), image, radii[0])
    loss_trace: List[float] = []
    best_trace: List[float] = []
    aborted, error = False, None

    try:
        for radius, (start, end) in zip(radii, segments):
            if start == end:
                continue
            x = project(x, image, radius)
            x_prev = x
            state = ApgdState.start(radius, end - start)
            history: List[float] = []
            seg_best_x, seg_best_loss, seg_best_grad = None, -np.inf, None

            for t in range(start, end):
                tau = t - start
                loss, grad, q = objective.evaluate(params, x, label, t)
                check_finite("attack objective", np.asarray(loss))
                loss_trace.append(loss)
                history.append(loss)

                if loss >= best.loss and is_feasible(x, image, eps):
                    best = _Best(x=x.copy(), loss=loss, q=q, iteration=t)
                best_trace.append(best.loss)

                if loss >= seg_best_loss:
                    seg_best_x, seg_best_loss, seg_best_grad = x, loss, grad

                if state.is_checkpoint(tau):
                    _, restart = apgd_update_step(state, tau, history, seg_best_loss)
                    if restart:
                        x, grad = seg_best_x, seg_best_grad
                        x_prev = x

                if t == T - 1:
                    break
                z = pgd_step(x, grad, state.current_step, image, radius)
                a = 1.0 if tau == 0 else ApgdConstants.MOMENTUM
                moved = x + a * (z - x) + (1.0 - a) * (x - x_prev)
                x_prev, x = x, project(moved.astype(x.dtype, copy=False), image, radius)
    except NonFiniteError as e:
        aborted, error = True, str(e)
        logger.warning("attack aborted after %d iterations: %s", len(loss_trace), e)

    return best, loss_trace, best_trace, aborted, error


def run_attack(params: ModelParams, image: np.ndarray, label: np.ndarray, config: AttackConfig,
               index: int = 0, ignore_index: int = IGNORE_INDEX) -> AttackResult:
    """
    Attack one image.

    Args:
        params: Victim model
        image: C x H x W clean image in [0, 1]
        label: H x W ground truth
        config: Attack configuration
        index: Dataset index; seeds derive from (config.seed, index)
        ignore_index: Label value excluded from the objective

    Returns:
        AttackResult for the best of `config.restarts` runs
    """
    image = np.asarray(image)
    label = np.asarray(label)
    if label.shape != image.shape[1:]:
        raise ValueError(f"label shape {label.shape} != image spatial shape {image.shape[1:]}")
    objective = _Objective(config, ignore_index)
    rng = derive_rng(config.seed, index)

    chosen = None
    for _ in range(config.restarts):
        outcome = _single_run(params, image, label, config, objective, rng)
        if chosen is None or outcome[0].loss > chosen[0].loss:
            chosen = outcome
        if outcome[3]:
            break

    best, loss_trace, best_trace, aborted, error = chosen
    return AttackResult(
        adversarial=best.x,
        best_loss=float(best.loss),
        loss_trace=tuple(float(v) for v in loss_trace),
        best_trace=tuple(float(v) for v in best_trace),
        iterations_used=len(loss_trace),
        feasible=is_feasible(best.x, image, config.eps),
        best_q=best.q,
        best_iteration=best.iteration,
        aborted=aborted,
        error=error,
        index=index,
    )


# ============== BATCH ==============

def _failed_result(image: np.ndarray, index: int, error: Exception) -> AttackResult:
    return AttackResult(
        adversarial=np.asarray(image).copy(),
        best_loss=float("nan"),
        loss_trace=(),
        best_trace=(),
        iterations_used=0,
        feasible=True,
        error=f"{type(error).__name__}: {error}",
        index=index,
    )


def attack_batch(params: ModelParams, dataset: SegDataset, config: AttackConfig,
                 workers: int = 1, progress: bool = False) -> List[AttackResult]:
    """
    Attack every image of `dataset`.

    Results come back in dataset order and do not depend on `workers`;
    a failing image yields a result with `error` set instead of raising.
    """
    if len(dataset) == 0:
        raise ValueError("attack_batch needs a non-empty dataset")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    def attack_one(position: int) -> AttackResult:
        index = dataset.indices[position]
        try:
            return run_attack(params, dataset.images[position], dataset.labels[position],
                              config, index=index, ignore_index=dataset.ignore_index)
        except Exception as e:
            logger.warning("image %d failed: %s", index, e)
            return _failed_result(dataset.images[position], index, e)

    positions = range(len(dataset))
    label = config.loss.display_name
    if workers == 1:
        return [attack_one(p) for p in tqdm(positions, desc=label, disable=not progress)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(tqdm(executor.map(attack_one, positions), total=len(dataset),
                         desc=label, disable=not progress))


def save_attack_results(results: List[AttackResult], output_dir) -> Path:
    """
    Write adv_<index>.tseg per image plus results.csv (index,best_loss,feasible).

    Returns:
        Path of the CSV
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_tensor(out / f"adv_{r.index:05d}.tseg", r.adversarial.astype(np.float32))
    frame = pd.DataFrame(
        [(r.index, r.best_loss, int(r.feasible)) for r in results],
        columns=ATTACK_CSV_COLUMNS,
    )
    csv_path = out / "results.csv"
    frame.to_csv(csv_path, index=False, float_format="%.9g")
    return csv_path
