import numpy as np
import pytest

from stlplan import dynamics as dyn
from stlplan.mission import AxisAlignedBox, box_membership_robustness, load_scenario, save_scenario
from stlplan.planner import (PlanningError, Problem, SolverConfig, Task, greville, hover_energy,
                             mission_task, plan, rollout, solve_task, spline_basis)
from stlplan.stl import (Always, And, Eventually, Interval, Pred, PredicateTable, TrueF,
                         argument_count)

START = np.array([0.0, 0.0, 1.0])
TARGET = AxisAlignedBox.around(START + [0.3, 0.0, 0.2], 0.25)


def _reach_task(N=20, Ts=0.1):
    t = PredicateTable()
    for j in range(3):
        t.register(f"lo{j}", lambda X, idx, j=j: X[idx, j] - TARGET.lower[j])
        t.register(f"hi{j}", lambda X, idx, j=j: TARGET.upper[j] - X[idx, j])
    inside = And(tuple(Pred(f"{s}{j}") for j in range(3) for s in ("lo", "hi")))
    f = Eventually(Interval(0, 1.5), Always(Interval(0, 0.5), inside))
    return Task.for_formula(f, t, Ts, N)


@pytest.fixture(scope="module")
def reach():
    return _reach_task()


@pytest.fixture(scope="module")
def reach_problem(reach, params):
    return Problem(reach, params, lam=10.0, weight=0.5, spacing=0.5)


# -- rollout -----------------------------------------------------------------------------

def test_hover_rollout_is_stationary(params):
    x0 = dyn.hover_state(params, p=START)
    tr = rollout(np.zeros((12, 6)), x0, params, 0.1)
    assert tr.states.shape == (13, 18)
    assert np.max(np.abs(tr.states - x0)) <= 1e-9


def test_rollout_composes(params):
    rng = np.random.default_rng(0)
    u = rng.normal(size=(8, 6))
    x0 = dyn.hover_state(params)
    whole = rollout(u, x0, params, 0.1)
    first = rollout(u[:5], x0, params, 0.1)
    second = rollout(u[5:], first.states[-1], params, 0.1)
    np.testing.assert_array_equal(whole.states, np.vstack([first.states, second.states[1:]]))


# -- objective and gradient ----------------------------------------------------------------

def test_hover_energy_normalizes_to_one_per_sample(params, reach):
    x0 = dyn.hover_state(params, p=START)
    prob = Problem(reach, params, lam=10.0, weight=1.0)
    prob0 = Problem(reach, params, lam=10.0, weight=0.0)
    u = np.zeros((reach.N, 6))
    rho = -prob0.objective(u, x0)
    assert prob.objective(u, x0) == pytest.approx(reach.N - rho, rel=1e-12)


def test_zero_weight_objective_is_minus_smooth_robustness(params, reach):
    from stlplan.planner import evaluate_plan
    rng = np.random.default_rng(1)
    x0 = dyn.hover_state(params, p=START)
    u = rng.normal(scale=0.5, size=(reach.N, 6))
    prob = Problem(reach, params, lam=10.0, weight=0.0)
    rs, *_ = evaluate_plan(rollout(u, x0, params, 0.1), reach, params, SolverConfig(weight=0.0))
    assert prob.objective(u, x0) == pytest.approx(-rs, abs=1e-10)


def test_energy_grows_with_speed(params):
    x = dyn.hover_state(params)
    base = dyn.energy_per_sample(x, params)
    for s in (0.1, 0.5, 2.0):
        x[6:9] = [s, 0.0, 0.0]
        e = dyn.energy_per_sample(x, params)
        assert e > base
        base = e


def test_gradient_matches_central_differences(params, reach_problem, reach):
    rng = np.random.default_rng(2)
    x0 = dyn.hover_state(params, p=START)
    u = rng.normal(scale=0.3, size=(reach.N, 6))
    g = reach_problem.gradient(u, x0)
    assert g.shape == (reach.N, 6)
    for _ in range(5):
        d = rng.standard_normal(u.shape)
        d /= np.linalg.norm(d)
        h = 1e-5 * max(1.0, np.linalg.norm(u))
        fd = (reach_problem.objective(u + h * d, x0) - reach_problem.objective(u - h * d, x0)) / (2 * h)
        an = float(np.sum(g * d))
        assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-8)


def test_constant_objective_has_zero_gradient(params):
    t = Task.for_formula(TrueF(), PredicateTable(), 0.1, 6)
    prob = Problem(t, params, lam=10.0, weight=0.0)
    g = prob.gradient(np.ones((6, 6)), dyn.hover_state(params))
    assert np.all(g == 0.0)


# -- spline basis ----------------------------------------------------------------------------

def test_spline_basis_partition_of_unity():
    B0, B1, B2 = spline_basis(40, 0.1, 0.5)
    np.testing.assert_allclose(B0.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(B1.sum(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(B2.sum(axis=1), 0.0, atol=1e-8)
    assert B0.shape == (41, 8 + 3)


def test_greville_reproduces_linear_functions():
    # cubic B-splines reproduce t exactly when the coefficients are the Greville points
    B0, B1, _ = spline_basis(30, 0.1, 0.5)
    gv = greville(30, 0.1, 0.5)
    np.testing.assert_allclose(B0 @ gv, np.arange(31) / 30, atol=1e-12)
    np.testing.assert_allclose(B1 @ gv, 1 / 3.0, atol=1e-10)


# -- configuration -----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(lam=0.0), dict(kappa=-1.0), dict(weight=-0.1),
                                dict(grad_tol=0.0), dict(multistart=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_initial_forces_out_of_bounds(params, reach_problem):
    x0 = dyn.hover_state(params, p=START)
    x0[12] = 50.0
    with pytest.raises(PlanningError):
        reach_problem.solve(x0, SolverConfig(max_iter=2, al_stages=1))


# -- solving ------------------------------------------------------------------------------

# A sharp smoothing and a light energy weight keep this small task well posed: at
# lambda = 10 the soft minimum over 36 face margins costs ln(36)/10 = 0.36, more than
# any margin the box offers, and without an energy term nothing stops the vehicle
# from spinning up.
SOLVE = SolverConfig(lam=50.0, kappa=0.05, weight=0.01, max_iter=150, al_stages=3, warm_iter=150)


@pytest.fixture(scope="module")
def solve_problem(reach, params):
    return Problem(reach, params, SOLVE.lam, SOLVE.weight, SOLVE.knot_spacing)


@pytest.fixture(scope="module")
def reach_result(params, reach, solve_problem):
    x0 = dyn.hover_state(params, p=START)
    return solve_task(reach, x0, params, SOLVE, problem=solve_problem), SOLVE


def test_small_task_converges(params, reach, reach_result):
    res, cfg = reach_result
    assert res.converged
    assert res.smooth_robustness >= cfg.kappa
    assert res.trajectory.rollout_residual(params) <= 1e-9
    xi = res.trajectory.xi
    assert np.all(xi >= params.xi_min - 1e-9) and np.all(xi <= params.xi_max + 1e-9)
    # the plan actually reaches and holds the box for half a second
    inside = [box_membership_robustness(p, TARGET) for p in res.trajectory.p]
    run = max(len(s) for s in "".join("1" if v > 0 else "0" for v in inside).split("0"))
    assert run >= 6


def test_soundness_margin(reach, reach_result):
    res, cfg = reach_result
    A = argument_count(reach.formula, reach.Ts)
    assert res.exact_robustness >= res.smooth_robustness
    assert res.exact_robustness >= res.smooth_robustness - np.log(A) / cfg.lam


def test_trace_is_monotone_within_stages(reach_result):
    res, _ = reach_result
    for stage in res.trace:
        d = np.diff(stage)
        assert np.all(d <= 1e-9 * (1 + np.abs(np.asarray(stage[:-1]))))


def test_same_seed_same_result(params, reach, solve_problem, reach_result):
    res, cfg = reach_result
    again = solve_task(reach, dyn.hover_state(params, p=START), params, cfg, problem=solve_problem)
    np.testing.assert_array_equal(again.trajectory.inputs, res.trajectory.inputs)
    assert again.smooth_robustness == res.smooth_robustness


def test_mission_task_horizon(params, desk):
    task, spec = mission_task(desk, params)
    assert task.N == 80 and task.n_signal >= 81
    assert spec.formula is task.formula


def _regions_in_obstacle(desk):
    doc = save_scenario(desk)
    ob = desk.obstacles[0]
    inner = {"lower": (ob.center - 0.1).tolist(), "upper": (ob.center + 0.1).tolist()}
    doc["handover"] = inner
    doc["timing"]["T_N"] = 2.0
    doc["timing"]["T_vr"] = 0.5
    return doc, inner


def test_handover_clause_alone_is_vacuous(params, desk):
    # the handover box only enters through "in the box -> still in it next sample",
    # so a plan that never goes there is unaffected by where the box sits
    doc, _ = _regions_in_obstacle(desk)
    moved = load_scenario(doc)
    base = load_scenario({**save_scenario(desk), "timing": doc["timing"]})
    task_a, _ = mission_task(base, params)
    task_b, _ = mission_task(moved, params)
    from stlplan.planner import evaluate_plan
    traj = rollout(np.zeros((20, 6)), dyn.hover_state(params, p=desk.p0), params, 0.1)
    cfg = SolverConfig()
    assert evaluate_plan(traj, task_a, params, cfg)[1] == evaluate_plan(traj, task_b, params, cfg)[1]


def test_goal_regions_inside_obstacle_are_infeasible(params, desk):
    doc, inner = _regions_in_obstacle(desk)
    doc["preference_regions"] = [inner]
    doc["visibility_region"] = inner
    sc = load_scenario(doc)
    res = plan(sc, params, SolverConfig(max_iter=20, al_stages=2, warm_iter=20))
    assert not res.converged
    assert res.exact_robustness < 0 and res.smooth_robustness < 0


def test_hover_energy_value(params):
    assert hover_energy(params) == pytest.approx(6 * 11.5e-4 * (3.67875 / 11.5e-4) ** 3, rel=1e-13)
