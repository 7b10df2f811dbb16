"""
Iteration-indexed schedules: Tsallis q sweeps, the APGD step-size controller
and the multi-radius phases.
"""
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import ApgdConstants
from shared.models import EpsPhases, LossKind, LossName, MaskNormalization, QSchedule, ScheduleType


# ============== Q SCHEDULES ==============

def q_at(schedule: QSchedule, t: int, T: int) -> float:
    """
    Entropic index used at iteration t of T.

    Linear schedules interpolate with t/(T-1) so both endpoints are hit
    exactly; the result is clamped to <= 1 (q = 1 means the CE path).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 <= t < T:
        raise ValueError(f"iteration {t} outside [0, {T})")
    if schedule.kind == ScheduleType.FIXED or T == 1:
        q = schedule.q_start
    else:
        q = schedule.q_start + (schedule.q_end - schedule.q_start) * t / (T - 1)
    return min(q, 1.0)


# ============== APGD STEP SIZE ==============

def apgd_checkpoints(T: int) -> List[int]:
    """
    Iterations at which the step size is reconsidered.

    Fractions follow p0 = 0, p1 = 0.22, p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06)
    and map to ceil(p * T); duplicates from small T collapse.

    Raises:
        ValueError: for T < 10
    """
    if T < ApgdConstants.MIN_ITERS:
        raise ValueError(f"APGD checkpoints need T >= {ApgdConstants.MIN_ITERS}, got {T}")
    fractions = [0.0, ApgdConstants.FIRST_CHECKPOINT]
    while True:
        gap = max(fractions[-1] - fractions[-2] - ApgdConstants.CHECKPOINT_DECAY,
                  ApgdConstants.MIN_CHECKPOINT_GAP)
        nxt = fractions[-1] + gap
        if nxt > 1.0 + 1e-9:
            break
        fractions.append(nxt)

    checkpoints: List[int] = []
    for p in fractions:
        # round first so 0.41 * 300 = 123.00000000000001 stays 123
        idx = min(math.ceil(round(p * T, 6)), T)
        if not checkpoints or idx > checkpoints[-1]:
            checkpoints.append(idx)
    return checkpoints


@dataclass
class ApgdState:
    """Step-size controller for one attack segment; single owner."""
    current_step: float
    initial_step: float
    checkpoints: Tuple[int, ...]
    last_checkpoint: int = 0
    ascent_successes_since_checkpoint: int = 0
    best_loss_at_last_checkpoint: float = -math.inf
    step_halved_last_checkpoint: bool = False

    @classmethod
    def start(cls, radius: float, T: int) -> "ApgdState":
        """
        Fresh controller with step 2 * radius. Segments shorter than the
        minimum APGD length get no checkpoints and keep a constant step.
        """
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        step = ApgdConstants.INITIAL_STEP_FACTOR * radius
        checkpoints = tuple(apgd_checkpoints(T)) if T >= ApgdConstants.MIN_ITERS else ()
        return cls(current_step=step, initial_step=step, checkpoints=checkpoints)

    def is_checkpoint(self, t: int) -> bool:
        return t in self.checkpoints


def apgd_update_step(state: ApgdState, t: int, loss_history: Sequence[float],
                     best_loss: float) -> Tuple[float, bool]:
    """
    Decide at checkpoint t whether to halve the step and restart from the best point.

    Halving happens when fewer than 75% of the steps since the previous
    checkpoint raised the objective, or when the step was not halved last
    time and the best loss has not improved since.

    Args:
        state: Controller, updated in place
        t: Checkpoint iteration (segment-local)
        loss_history: Objective per segment-local iteration, at least t + 1 entries
        best_loss: Best objective seen so far

    Returns:
        (new step, restart from best)
    """
    if not state.is_checkpoint(t):
        raise ValueError(f"iteration {t} is not a checkpoint {list(state.checkpoints)}")
    if t == 0:
        state.best_loss_at_last_checkpoint = best_loss
        return state.current_step, False
    if len(loss_history) < t + 1:
        raise ValueError(f"loss history has {len(loss_history)} entries, checkpoint {t} needs {t + 1}")

    prev = state.last_checkpoint
    interval = t - prev
    successes = sum(1 for i in range(prev + 1, t + 1) if loss_history[i] > loss_history[i - 1])

    oscillating = successes < ApgdConstants.SUCCESS_RATIO * interval
    stalled = (not state.step_halved_last_checkpoint
               and best_loss <= state.best_loss_at_last_checkpoint)
    halve = oscillating or stalled

    if halve:
        state.current_step /= 2.0
    state.step_halved_last_checkpoint = halve
    state.best_loss_at_last_checkpoint = best_loss
    state.ascent_successes_since_checkpoint = successes
    state.last_checkpoint = t
    return state.current_step, halve


# ============== MULTI-RADIUS PHASES ==============

def phase_boundaries(phases: EpsPhases, T: int) -> List[Tuple[int, int]]:
    """
    [start, end) iteration range of every phase.

    Boundaries sit at round(cumulative fraction * T); interior boundaries are
    capped at T - 1 so the final phase always owns the last iteration. Early
    phases may be empty when T is small.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    starts = [0]
    cumulative = 0.0
    for _, fraction in phases.phases[:-1]:
        cumulative += fraction
        boundary = min(int(math.floor(round(cumulative * T, 6) + 0.5)), T - 1)
        starts.append(max(boundary, starts[-1]))
    ends = starts[1:] + [T]
    return list(zip(starts, ends))


def eps_at(phases: EpsPhases, t: int, T: int, target_eps: float) -> float:
    """Radius in force at iteration t: multiplier * target_eps for t's phase."""
    if not 0 <= t < T:
        raise ValueError(f"iteration {t} outside [0, {T})")
    for (multiplier, _), (start, end) in zip(phases.phases, phase_boundaries(phases, T)):
        if start <= t < end:
            return multiplier * target_eps
    return target_eps


# ============== TEXT SYNTAX ==============

def parse_q_schedule(text: str) -> QSchedule:
    """Parse `fixed:<q>` or `linear:<q_start>:<q_end>`."""
    parts = [p.strip() for p in text.strip().split(":")]
    try:
        if parts[0] == ScheduleType.FIXED.value and len(parts) == 2:
            return QSchedule.fixed(float(parts[1]))
        if parts[0] == ScheduleType.LINEAR.value and len(parts) == 3:
            return QSchedule.linear(float(parts[1]), float(parts[2]))
    except ValueError as e:
        raise ValueError(f"Bad q-schedule '{text}': {e}") from e
    raise ValueError(f"Bad q-schedule '{text}': expected fixed:Q or linear:A:B")


def parse_phases(text: str) -> EpsPhases:
    """Parse `m1@f1,m2@f2,...` into EpsPhases."""
    phases = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        multiplier, sep, fraction = item.partition("@")
        if not sep:
            raise ValueError(f"Bad phase '{item}': expected multiplier@fraction")
        try:
            phases.append((float(multiplier), float(fraction)))
        except ValueError as e:
            raise ValueError(f"Bad phase '{item}': {e}") from e
    return EpsPhases(phases=tuple(phases))


def parse_loss_kind(text: str) -> LossKind:
    """
    Parse an attack label.

    Accepted forms: `ce`, `segpgd`, `cospgd`, `js`, `maskedce`,
    `maskedce@total`, `tsallis@fixed:Q`, `tsallis@linear:A:B`, and the
    shorthand `tsallis:Q` for a fixed q.
    """
    text = text.strip().lower()
    name, sep, rest = text.partition("@")
    if not sep and name.startswith("tsallis:"):
        name, rest = "tsallis", "fixed:" + name.split(":", 1)[1]
    try:
        loss = LossName(name)
    except ValueError as e:
        raise ValueError(f"Unknown loss '{name}'") from e

    if loss == LossName.TSALLIS:
        if not rest:
            raise ValueError("tsallis needs a schedule, e.g. tsallis@linear:-2:1")
        return LossKind(name=loss, q_schedule=parse_q_schedule(rest))
    if loss == LossName.MASKED_CE and rest:
        return LossKind(name=loss, mask_normalization=MaskNormalization(rest))
    if rest:
        raise ValueError(f"'{name}' takes no parameters, got '{rest}'")
    return LossKind(name=loss)
