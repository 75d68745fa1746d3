"""Event-triggered partial replanning.

At every event instant the executed position is compared with the reference.
A deviation above the threshold starts a replan: the vehicle keeps tracking
the old reference for the reserved computation time, then flies a freshly
optimized segment that ends in a small box around the reference waypoint
that follows, and finally resumes the old reference from there.

The segment keeps only the safety part of the mission (workspace, obstacles,
behind-the-operator) plus the terminal box. The box center travels in extra
signal columns, so one compiled problem serves every event with the same
segment length.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import dynamics as dyn
from .mission import FACES, build_table, group_formulas
from .planner import Problem, SolverConfig, Task, solve_task
from .stl import And, Always, Eventually, Interval, Pred, Predicate, Signal, robustness

_TOL = 1e-9


class ReplanError(RuntimeError):
    pass


class SegmentInfeasible(ReplanError):
    pass


def _steps(T, Ts, what):
    n = T / Ts
    k = int(round(n))
    if abs(n - k) > 1e-9 or k < 0:
        raise ValueError(f"{what} = {T} s is not an integer multiple of T_s = {Ts} s")
    return k


@dataclass(frozen=True)
class ReplanConfig:
    zeta: float = 1.0           # m
    T_e: float = 0.5            # s
    T_g: float = 1.0            # s
    t_c: float = 0.4            # s
    box_half_width: float = 0.1  # m
    # extra terminal tolerances around the reference state (None drops the term)
    speed_tolerance: float = 0.3   # m/s, per axis
    tilt_tolerance: float = 0.15   # rad, roll, pitch and yaw
    rate_tolerance: float = 1.0    # rad/s, per body axis
    force_tolerance: float = 0.5   # N, per rotor
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        lam=100.0, kappa=0.005, kappa_margin=0.01, weight=0.5, max_iter=100, al_stages=4,
        warm_start=False))

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not 0 <= self.t_c < self.T_g:
            raise ValueError("t_c must lie in [0, T_g)")
        if self.T_e <= 0 or self.T_g <= 0 or self.box_half_width <= 0:
            raise ValueError("periods and box half-width must be positive")
        for name in ("speed_tolerance", "tilt_tolerance", "rate_tolerance", "force_tolerance"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def terminal_terms(self, n_rotors=6):
        """(label, state columns, half-width) of every terminal condition."""
        terms = [("p", (0, 1, 2), self.box_half_width)]
        if self.speed_tolerance is not None:
            terms.append(("v", (6, 7, 8), self.speed_tolerance))
        if self.tilt_tolerance is not None:
            terms.append(("eta", (3, 4, 5), self.tilt_tolerance))
        if self.rate_tolerance is not None:
            terms.append(("w", (9, 10, 11), self.rate_tolerance))
        if self.force_tolerance is not None:
            terms.append(("xi", tuple(range(12, 12 + n_rotors)), self.force_tolerance))
        return terms

    def periods(self, Ts):
        """(event period, waypoint period, reserved time) in samples."""
        n_e = _steps(self.T_e, Ts, "T_e")
        n_g = _steps(self.T_g, Ts, "T_g")
        n_c = int(math.ceil(self.t_c / Ts - 1e-9))
        if n_e < 1 or n_g < 1:
            raise ValueError("T_e and T_g must span at least one sample")
        return n_e, n_g, n_c


@dataclass
class ReplanEvent:
    index: int                      # sample of the check
    t_trigger: float
    actual: np.ndarray              # executed position
    reference: np.ndarray           # planned position at the same instant
    handoff_index: int = -1         # start of the replanned segment
    target_index: int = -1          # waypoint the segment reconnects to (-1: none left)
    target_position: np.ndarray = None
    target_state: np.ndarray = None
    handoff_state: np.ndarray = None
    end_of_mission: bool = False
    Ts: float = 0.1

    @property
    def deviation(self):
        return float(np.linalg.norm(self.actual - self.reference))

    @property
    def target_time(self):
        return self.target_index * self.Ts if self.target_index >= 0 else math.nan

    @property
    def horizon(self):
        return self.target_index - self.handoff_index


def waypoint_after(index, cfg, Ts):
    """(handoff index, first waypoint index strictly after it)."""
    _, n_g, n_c = cfg.periods(Ts)
    handoff = index + n_c
    return handoff, (handoff // n_g + 1) * n_g


def is_event_instant(index, cfg, Ts):
    return index % cfg.periods(Ts)[0] == 0


def check_deviation(index, p_actual, reference, cfg):
    """Event at sample `index` if the deviation exceeds zeta, else None."""
    Ts = reference.Ts
    p_ref = reference.p[min(index, reference.N)]
    p_actual = np.asarray(p_actual, dtype=float)
    if not np.linalg.norm(p_actual - p_ref) > cfg.zeta:
        return None
    ev = ReplanEvent(index, index * Ts, p_actual.copy(), p_ref.copy(), Ts=Ts)
    handoff, target = waypoint_after(index, cfg, Ts)
    ev.handoff_index = handoff
    if target > reference.N:
        ev.end_of_mission = True
    else:
        ev.target_index = target
        ev.target_position = reference.p[target].copy()
        ev.target_state = reference.states[target].copy()
    return ev


def detect_event(executed_p, reference, cfg, start=0):
    """First event among the event instants of an executed position stream.

    executed_p[k] is the position at sample k, time-aligned with the reference.
    """
    executed_p = np.asarray(executed_p, dtype=float)
    n_e = cfg.periods(reference.Ts)[0]
    first = -(-start // n_e) * n_e
    for k in range(first, min(len(executed_p), reference.N + 1), n_e):
        ev = check_deviation(k, executed_p[k], reference, cfg)
        if ev is not None:
            return ev
    return None


def predict_handoff(x, index, reference, controller, handoff_index, substeps=10):
    """State at the handoff sample when the current tracking law keeps running."""
    for k in range(index, handoff_index):
        kk = min(k, reference.N - 1)
        x, _ = controller.advance(x, reference.states[kk], reference.inputs[kk],
                                  reference.Ts, substeps)
    return x


# -- reduced specification ---------------------------------------------------

def _terminal_fn(state_col, aux_col, half, lower):
    def fn(X, idx):
        d = X[idx, state_col] - X[idx, aux_col]
        return d + half if lower else half - d
    return fn


def safety_formula(sc, params):
    g = group_formulas(sc, params)
    parts = [g["ws"]] + ([g["obs"]] if g["obs"] is not None else []) + [g["beh"]]
    return And(tuple(parts))


def reduced_task(sc, params, H, cfg):
    """Task for an H-step segment: G(ws & obs & beh) & F[end](terminal set).

    The terminal set is the position box around the target waypoint, narrowed
    by the configured velocity, tilt and rate tolerances. The aux columns carry
    the full reference state at the waypoint.
    """
    Ts = sc.Ts
    table = build_table(sc, params)
    n = params.n_states
    term_ids = []
    for label, cols, half in cfg.terminal_terms(params.n_rotors):
        for c in cols:
            for lower, side in ((True, "lo"), (False, "hi")):
                pid = f"term.{label}{c}.{side}"
                table.add(Predicate(pid, _terminal_fn(c, n + c, half, lower),
                                    f"terminal {label}[{c}] {side}", "term"))
                term_ids.append(pid)
    T = H * Ts
    term = And(tuple(Pred(i) for i in term_ids))
    formula = And((Always(Interval(0, T), safety_formula(sc, params)),
                   Eventually(Interval(T, T), term)))
    return Task.for_formula(formula, table, Ts, H, aux_dim=n)


class SegmentPlanner:
    """Compiled segment problems for one scenario, keyed by segment length."""

    def __init__(self, sc, params, cfg):
        self.sc, self.params, self.cfg = sc, params, cfg
        self._problems = {}

    def problem(self, H):
        if H not in self._problems:
            task = reduced_task(self.sc, self.params, H, self.cfg)
            s = self.cfg.solver
            self._problems[H] = Problem(task, self.params, s.lam, s.weight, s.knot_spacing)
        return self._problems[H]

    def warm(self, H, x0):
        x0 = np.asarray(x0, dtype=float)
        self.problem(H).warmup(x0, x0)

    def solve(self, event):
        """PlanResult for the event's segment; raises SegmentInfeasible on unsafe starts."""
        H = event.horizon
        if event.end_of_mission or H < 1:
            raise ReplanError("no waypoint left before the end of the mission")
        x0 = np.asarray(event.handoff_state, dtype=float)
        start = Signal(np.vstack([x0, x0]), self.sc.Ts)
        table = build_table(self.sc, self.params)
        if robustness(safety_formula(self.sc, self.params), start, 0, table) <= 0:
            raise SegmentInfeasible(
                f"handoff state at t = {event.handoff_index * self.sc.Ts:.2f} s violates "
                "workspace, obstacle or behind-operator constraints")
        prob = self.problem(H)
        aux = np.asarray(event.target_state, dtype=float)
        return solve_task(prob.task, x0, self.params, self.cfg.solver, aux=aux, problem=prob,
                          theta0=prob.theta_line(x0, event.target_position))


def replan_segment(event, sc, params, cfg, planner=None):
    """Solve the reconnection segment of an event whose handoff state is set."""
    planner = planner or SegmentPlanner(sc, params, cfg)
    res = planner.solve(event)
    prob = planner.problem(event.horizon)
    res.task = prob.task
    res.converged = bool(res.converged and res.exact_robustness > 0)
    return res


def splice(reference, segment, handoff_index, target_index):
    """Reference with samples handoff..target replaced by the segment."""
    if segment.trajectory.N != target_index - handoff_index:
        raise ValueError("segment length does not match the handoff/target gap")
    states = reference.states.copy()
    inputs = reference.inputs.copy()
    states[handoff_index:target_index + 1] = segment.trajectory.states
    inputs[handoff_index:target_index] = segment.trajectory.inputs
    return dyn.Trajectory(states, inputs, reference.Ts, reference.t0, dict(reference.meta))


def composite(executed_prefix, segment, reference, target_index):
    """Executed prefix || segment || reference suffix as one contiguous state array."""
    seg = segment.trajectory.states
    parts = [np.asarray(executed_prefix)[:-1], seg, reference.states[target_index + 1:]]
    out = np.vstack(parts)
    if out.shape[0] != reference.N + 1:
        raise ValueError("composite is not contiguous with the reference horizon")
    return out


def composite_robustness(states, sc, params, target_index, target_position, half_width):
    """Exact robustness of G(ws & obs & beh) over the composite and the terminal box."""
    table = build_table(sc, params)
    safety = Always(Interval(0, (len(states) - 1) * sc.Ts), safety_formula(sc, params))
    r_safe = robustness(safety, Signal(states, sc.Ts), 0, table)
    p = states[target_index, :3]
    r_box = float(np.min(half_width - np.abs(p - np.asarray(target_position))))
    return float(r_safe), r_box
