"""
TsallisSeg - Schedule tests: q sweeps, APGD checkpoints and step control,
multi-radius phases and the attack label syntax.
"""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from backend.core_logic.schedules import (
    ApgdState, apgd_checkpoints, apgd_update_step, eps_at, parse_loss_kind, parse_phases,
    parse_q_schedule, phase_boundaries, q_at,
)
from shared.models import EpsPhases, LossName, MaskNormalization, QSchedule


# ============== TEST 1: q schedules ==============

def test_linear_schedule_hits_both_endpoints():
    schedule = QSchedule.linear(-2.0, 1.0)
    assert q_at(schedule, 0, 100) == -2.0
    assert q_at(schedule, 99, 100) == 1.0
    assert q_at(schedule, 33, 100) == pytest.approx(-1.0)


def test_fixed_schedule_and_single_iteration():
    assert q_at(QSchedule.fixed(-3.0), 57, 300) == -3.0
    assert q_at(QSchedule.linear(-2.0, 1.0), 0, 1) == -2.0
    with pytest.raises(ValueError):
        q_at(QSchedule.fixed(0.0), 10, 10)


@given(st.integers(min_value=2, max_value=500))
def test_linear_schedule_is_monotone(T):
    schedule = QSchedule.linear(-3.0, 0.5)
    values = [q_at(schedule, t, T) for t in range(T)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(0.5)


def test_schedule_validation():
    with pytest.raises(ValueError):
        QSchedule.fixed(1.5)
    with pytest.raises(ValueError):
        QSchedule.linear(-2.0, 1.2)


# ============== TEST 2: APGD checkpoints ==============

def test_checkpoints_at_protocol_budget():
    assert apgd_checkpoints(300) == [0, 66, 123, 171, 210, 240, 261, 279, 297]


@given(st.integers(min_value=10, max_value=2000))
def test_checkpoints_are_strictly_increasing(T):
    points = apgd_checkpoints(T)
    assert points[0] == 0
    assert all(a < b for a, b in zip(points, points[1:]))
    assert points[-1] <= T


def test_checkpoints_need_ten_iterations():
    with pytest.raises(ValueError):
        apgd_checkpoints(9)
    assert ApgdState.start(0.1, 9).checkpoints == ()


# ============== TEST 3: Step-size control ==============

def _state():
    return ApgdState(current_step=1.0, initial_step=1.0, checkpoints=(0, 4, 8, 12))


def test_steady_ascent_keeps_the_step():
    state = _state()
    assert apgd_update_step(state, 0, [0.0], 0.0) == (1.0, False)
    assert apgd_update_step(state, 4, [0.0, 1.0, 2.0, 3.0, 4.0], 4.0) == (1.0, False)
    assert state.ascent_successes_since_checkpoint == 4
    assert state.last_checkpoint == 4


def test_oscillation_halves_the_step():
    state = _state()
    apgd_update_step(state, 0, [0.0], 0.0)
    history = [0.0, 1.0, 0.5, 1.5, 1.0]   # 2 of 4 steps improved
    assert apgd_update_step(state, 4, history, 1.5) == (0.5, True)
    assert state.step_halved_last_checkpoint


def test_stall_halves_only_when_not_just_halved():
    state = _state()
    apgd_update_step(state, 0, [5.0], 5.0)
    history = [0.0, 1.0, 2.0, 3.0, 4.0]
    # every step improved, but the best loss has not moved since the last checkpoint
    assert apgd_update_step(state, 4, history, 5.0) == (0.5, True)
    history += [5.0, 6.0, 7.0, 8.0]
    # just halved, so a stalled best alone does not halve again
    assert apgd_update_step(state, 8, history, 5.0) == (0.5, False)
    history += [9.0, 9.0, 9.0, 9.0]
    assert apgd_update_step(state, 12, history, 9.0) == (0.25, True)


def test_update_outside_checkpoint_raises():
    state = _state()
    with pytest.raises(ValueError, match="not a checkpoint"):
        apgd_update_step(state, 3, [0.0] * 4, 0.0)
    with pytest.raises(ValueError, match="loss history"):
        apgd_update_step(state, 4, [0.0, 1.0], 1.0)


def test_start_uses_twice_the_radius():
    state = ApgdState.start(8 / 255, 300)
    assert state.current_step == pytest.approx(16 / 255)
    assert state.is_checkpoint(66) and not state.is_checkpoint(67)


# ============== TEST 4: Multi-radius phases ==============

def test_default_phase_boundaries():
    phases = EpsPhases()
    assert phase_boundaries(phases, 100) == [(0, 30), (30, 60), (60, 100)]
    assert phase_boundaries(phases, 300) == [(0, 90), (90, 180), (180, 300)]


def test_tiny_budgets_keep_the_last_iteration_in_the_final_phase():
    phases = EpsPhases()
    assert phase_boundaries(phases, 1) == [(0, 0), (0, 0), (0, 1)]
    assert phase_boundaries(phases, 2) == [(0, 1), (1, 1), (1, 2)]


@given(st.integers(min_value=1, max_value=1000))
def test_phases_tile_the_budget(T):
    bounds = phase_boundaries(EpsPhases(), T)
    assert bounds[0][0] == 0 and bounds[-1][1] == T
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
    assert bounds[-1][1] - bounds[-1][0] >= 1


def test_eps_at_follows_the_phase():
    phases = EpsPhases()
    eps = 8 / 255
    assert eps_at(phases, 0, 100, eps) == pytest.approx(2 * eps)
    assert eps_at(phases, 45, 100, eps) == pytest.approx(1.5 * eps)
    assert eps_at(phases, 99, 100, eps) == pytest.approx(eps)
    assert eps_at(EpsPhases.single(), 0, 100, eps) == eps


def test_phase_validation():
    with pytest.raises(ValueError):
        parse_phases("1@0.5,2@0.5")     # increasing multipliers
    with pytest.raises(ValueError):
        parse_phases("2@0.5,1@0.4")     # fractions do not sum to 1
    with pytest.raises(ValueError):
        parse_phases("2@0.5,1.5@0.5")   # final multiplier must be 1
    with pytest.raises(ValueError):
        parse_phases("2-0.5")
    assert parse_phases("2@0.3,1.5@0.3,1@0.4") == EpsPhases()


# ============== TEST 5: Label syntax ==============

def test_parse_loss_kinds():
    assert parse_loss_kind("ce").name == LossName.CE
    assert parse_loss_kind("SegPGD").name == LossName.SEGPGD
    total = parse_loss_kind("maskedce@total")
    assert total.mask_normalization == MaskNormalization.TOTAL
    assert total.display_name == "MaskedPGD(total)"
    linear = parse_loss_kind("tsallis@linear:-2:1")
    assert linear.q_schedule == QSchedule.linear(-2.0, 1.0)
    assert linear.label == "tsallis@linear:-2:1"
    assert parse_loss_kind("tsallis:-3").label == "tsallis@fixed:-3"
    assert parse_loss_kind("tsallis@fixed:0.5").display_name == "TsallisPGD(fixed:0.5)"


@pytest.mark.parametrize("text", ["foo", "ce@x", "tsallis", "tsallis@linear:-2", "tsallis@fixed:2"])
def test_bad_loss_labels(text):
    with pytest.raises(ValueError):
        parse_loss_kind(text)


def test_parse_q_schedule_errors():
    assert parse_q_schedule("fixed:-1") == QSchedule.fixed(-1.0)
    with pytest.raises(ValueError, match="expected fixed"):
        parse_q_schedule("cosine:0:1")
    with pytest.raises(ValueError):
        parse_q_schedule("linear:a:b")
