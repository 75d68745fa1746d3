import numpy as np
import pytest

from conftest import hover_trajectory
from stlplan import dynamics as dyn
from stlplan.control import Controller
from stlplan.mission import box_membership_robustness
from stlplan.replanner import (ReplanConfig, ReplanError, SegmentInfeasible, SegmentPlanner,
                               check_deviation, composite, composite_robustness, detect_event,
                               is_event_instant, predict_handoff, reduced_task, replan_segment,
                               splice, waypoint_after)
from stlplan.stl import robustness

HOVER = np.array([1.0, -0.5, 1.2])
PUSH = np.array([0.0, 1.2, 0.0])


@pytest.fixture(scope="module")
def cfg():
    return ReplanConfig()


@pytest.fixture(scope="module")
def reference(params):
    return hover_trajectory(params, HOVER, 80)


# -- timing ------------------------------------------------------------------------------

def test_waypoint_arithmetic(cfg):
    assert waypoint_after(30, cfg, 0.1) == (34, 40)
    handoff, target = waypoint_after(40, cfg, 0.1)
    assert (handoff, target, target - handoff) == (44, 50, 6)


def test_segment_of_sixteen_steps():
    # a 3.4 s handoff reconnecting at 5.0 s is 16 samples
    c = ReplanConfig(T_g=2.5, t_c=0.4)
    handoff, target = waypoint_after(30, c, 0.1)
    assert (handoff, target) == (34, 50)


def test_segment_is_shorter_than_a_waypoint_period_plus_reserve(cfg):
    n_e, n_g, n_c = cfg.periods(0.1)
    for k in range(0, 171, n_e):
        h, t = waypoint_after(k, cfg, 0.1)
        assert t - h <= n_g + n_c
        assert t * 0.1 >= k * 0.1 + cfg.t_c


def test_event_instants(cfg):
    assert [k for k in range(12) if is_event_instant(k, cfg, 0.1)] == [0, 5, 10]


@pytest.mark.parametrize("kw", [dict(zeta=0.0), dict(t_c=1.0), dict(T_e=-0.5),
                                dict(box_half_width=0.0), dict(tilt_tolerance=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ReplanConfig(**kw)


def test_periods_must_be_sample_multiples():
    with pytest.raises(ValueError):
        ReplanConfig(T_e=0.25).periods(0.1)


# -- detection --------------------------------------------------------------------------------

def test_check_deviation_threshold(reference, cfg):
    assert check_deviation(40, HOVER + [0.5, 0, 0], reference, cfg) is None
    ev = check_deviation(40, HOVER + [1.2, 0, 0], reference, cfg)
    assert ev is not None and ev.deviation == pytest.approx(1.2, abs=1e-12)
    assert (ev.handoff_index, ev.target_index) == (44, 50)
    assert ev.target_time == pytest.approx(5.0)
    np.testing.assert_array_equal(ev.target_position, reference.p[50])


def test_detect_event_skips_non_event_samples(reference, cfg):
    p = np.repeat(HOVER[None], 81, axis=0)
    p[42:44] += PUSH            # large but between event instants
    assert detect_event(p, reference, cfg) is None
    p[45:] += PUSH
    ev = detect_event(p, reference, cfg)
    assert ev.index == 45 and ev.t_trigger == pytest.approx(4.5)


def test_end_of_mission_event(reference, cfg):
    ev = check_deviation(80, HOVER + PUSH, reference, cfg)
    assert ev.end_of_mission and ev.target_index == -1


# -- reduced task ------------------------------------------------------------------------------

def test_reduced_task_shape(params, desk, cfg):
    task = reduced_task(desk, params, 6, cfg)
    assert task.N == 6 and task.aux_dim == params.n_states
    groups = {p.group for p in task.table}
    assert {"ws", "obs", "beh", "term"} <= groups
    assert {"vel", "pro", "vis"}.isdisjoint(
        {p.group for p in task.table if p.id in _ids(task.formula)})


def _ids(f):
    from stlplan.stl.formula import predicate_ids
    return predicate_ids(f)


def test_terminal_predicates_read_the_aux_state(params, desk, cfg):
    task = reduced_task(desk, params, 6, cfg)
    x = dyn.hover_state(params, p=HOVER)
    X = task.signal_array(np.repeat(x[None], 7, axis=0), x)
    from stlplan.stl import Signal
    r = robustness(task.formula, Signal(X, desk.Ts), 0, task.table)
    # sitting exactly on the target: the tightest margin is the position half-width
    # unless the workspace margin is smaller
    ws = box_membership_robustness(HOVER, desk.workspace)
    assert r == pytest.approx(min(cfg.box_half_width, ws), abs=1e-12)


# -- segment solve -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pushed(params, desk, reference, cfg):
    ev = check_deviation(40, HOVER + PUSH, reference, cfg)
    ctl = Controller(params, Ts=0.01)
    x = reference.states[40].copy()
    x[:3] += PUSH
    ev.handoff_state = predict_handoff(x, 40, reference, ctl, ev.handoff_index)
    planner = SegmentPlanner(desk, params, cfg)
    seg = replan_segment(ev, desk, params, cfg, planner)
    return ev, seg, planner


def test_pushed_segment_converges_into_the_box(pushed, cfg):
    ev, seg, _ = pushed
    assert seg.converged and seg.exact_robustness > 0
    end = seg.trajectory.p[-1]
    assert np.max(np.abs(end - ev.target_position)) <= cfg.box_half_width


def test_segment_starts_at_the_handoff_state(pushed):
    ev, seg, _ = pushed
    np.testing.assert_allclose(seg.trajectory.states[0], ev.handoff_state, rtol=0, atol=1e-9)
    assert seg.trajectory.N == ev.horizon == 6


def test_splice_and_composite_are_contiguous(pushed, reference, cfg, desk, params):
    ev, seg, _ = pushed
    new = splice(reference, seg, ev.handoff_index, ev.target_index)
    assert new.N == reference.N
    np.testing.assert_array_equal(new.states[ev.handoff_index:ev.target_index + 1],
                                  seg.trajectory.states)
    np.testing.assert_array_equal(new.states[:ev.handoff_index], reference.states[:ev.handoff_index])
    np.testing.assert_array_equal(new.states[ev.target_index + 1:],
                                  reference.states[ev.target_index + 1:])
    prefix = np.vstack([reference.states[:40], np.repeat(ev.handoff_state[None], 5, axis=0)])
    comp = composite(prefix, seg, reference, ev.target_index)
    assert comp.shape == reference.states.shape
    safety, margin = composite_robustness(comp, desk, params, ev.target_index,
                                          ev.target_position, cfg.box_half_width)
    assert safety > 0 and margin > 0


def test_splice_rejects_wrong_length(pushed, reference):
    ev, seg, _ = pushed
    with pytest.raises(ValueError):
        splice(reference, seg, ev.handoff_index, ev.target_index + 1)


def test_start_inside_an_obstacle_is_infeasible(pushed, desk, reference):
    ev, _, planner = pushed
    ob = desk.obstacles[0]
    bad = check_deviation(40, ob.center, reference, planner.cfg)
    bad.handoff_state = ev.handoff_state.copy()
    bad.handoff_state[:3] = ob.center
    with pytest.raises(SegmentInfeasible):
        planner.solve(bad)


def test_no_waypoint_left(pushed, reference, cfg):
    _, _, planner = pushed
    ev = check_deviation(80, HOVER + PUSH, reference, cfg)
    with pytest.raises(ReplanError):
        planner.solve(ev)
