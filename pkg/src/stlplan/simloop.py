"""Closed-loop flight of a plan with scripted disturbances and online replanning."""
from dataclasses import dataclass, field
import time

import numpy as np

from . import dynamics as dyn
from .control import Controller, TrackingGains, track_step  # noqa: F401  (re-exported)
from .replanner import (ReplanConfig, SegmentInfeasible, SegmentPlanner,
                        check_deviation, composite, composite_robustness, is_event_instant,
                        predict_handoff, splice, waypoint_after)


@dataclass(frozen=True)
class Impulse:
    time: float
    dp: tuple = (0.0, 0.0, 0.0)     # position offset, m
    dv: tuple = (0.0, 0.0, 0.0)     # velocity offset, m/s


@dataclass(frozen=True)
class DisturbanceScript:
    impulses: tuple = ()

    def validate(self, T_N):
        last = -np.inf
        for imp in self.impulses:
            if not 0 <= imp.time <= T_N:
                raise ValueError(f"impulse at {imp.time} s lies outside [0, {T_N}] s")
            if not imp.time > last:
                raise ValueError("impulse times must be strictly increasing")
            last = imp.time

    def at(self, k, Ts):
        return [imp for imp in self.impulses if int(round(imp.time / Ts)) == k]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(Impulse(float(d["time"]), tuple(d.get("dp", (0, 0, 0))),
                                 tuple(d.get("dv", (0, 0, 0)))) for d in items))


@dataclass
class EventRecord:
    t_trigger: float
    deviation: float
    target_time: float
    solve_ms: float
    converged: bool
    handoff_time: float = float("nan")
    segment_robustness: float = float("nan")
    segment_exact: float = float("nan")
    composite_safety: float = float("nan")
    terminal_margin: float = float("nan")
    message: str = ""


@dataclass
class SimResult:
    executed: dyn.Trajectory
    reference: dyn.Trajectory          # reference actually tracked (spliced after events)
    events: list = field(default_factory=list)
    halted: bool = False
    message: str = ""
    segments: list = field(default_factory=list)
    composites: list = field(default_factory=list)

    def tracking_error(self):
        """Position error per executed sample (shorter than the plan after a halt)."""
        n = self.executed.N + 1
        return np.linalg.norm(self.executed.p - self.reference.p[:n], axis=1)

    def event_log_csv(self, timing=False):
        head = "t_trigger,deviation_m,target_waypoint_t,solve_ms,converged"
        rows = [head]
        for e in self.events:
            ms = f"{e.solve_ms:.3f}" if timing else ""
            rows.append(f"{e.t_trigger!r},{e.deviation!r},{e.target_time!r},{ms},"
                        f"{str(e.converged).lower()}")
        return "\n".join(rows) + "\n"


def required_horizons(N, cfg, Ts):
    """Distinct segment lengths that an event at any event instant can produce."""
    out = set()
    for k in range(0, N + 1):
        if is_event_instant(k, cfg, Ts):
            h, t = waypoint_after(k, cfg, Ts)
            if t <= N:
                out.add(t - h)
    return sorted(out)


def simulate(plan, script=None, cfg=None, gains=None, sc=None, params=None, segment_planner=None,
             prewarm=True, substeps=10):
    """Fly `plan` (PlanResult or Trajectory) under the tracking law.

    The law runs `substeps` times per sample; the logged input of a sample is
    the mean rate command, so the logged forces match the executed ones.
    Impulses are applied at their sample before the event check. The
    simulation halts (flagged) when a replan is infeasible.
    """
    ref = plan.trajectory if hasattr(plan, "trajectory") else plan
    if sc is None:
        mission = getattr(plan, "mission", None)
        sc = mission.scenario if mission is not None else None
    params = dyn.default_hexarotor() if params is None else params
    cfg = ReplanConfig() if cfg is None else cfg
    script = DisturbanceScript() if script is None else script
    Ts, N = ref.Ts, ref.N
    script.validate(N * Ts)
    if int(substeps) != substeps or substeps < 1:
        raise ValueError("substeps must be a positive integer")
    ctl = Controller(params, gains, Ts / substeps)
    seg_planner = segment_planner
    if sc is not None and seg_planner is None:
        seg_planner = SegmentPlanner(sc, params, cfg)
    if prewarm and seg_planner is not None and script.impulses:
        for H in required_horizons(N, cfg, Ts):
            seg_planner.warm(H, ref.states[0])

    x = ref.states[0].copy()
    states = [x.copy()]
    inputs = []
    events, segments, composites = [], [], []
    halted, message = False, ""
    quiet_until = -1            # no monitoring until the last reconnection is reached
    for k in range(N + 1):
        for imp in script.at(k, Ts):
            x[0:3] += np.asarray(imp.dp, dtype=float)
            x[6:9] += np.asarray(imp.dv, dtype=float)
            states[-1] = x.copy()
        if k >= quiet_until and is_event_instant(k, cfg, Ts):
            ev = check_deviation(k, x[:3], ref, cfg)
            if ev is not None:
                rec = EventRecord(ev.t_trigger, ev.deviation, ev.target_time, 0.0, False)
                events.append(rec)
                if ev.end_of_mission or seg_planner is None:
                    rec.message = "no waypoint left" if ev.end_of_mission else "no scenario"
                else:
                    ev.handoff_state = predict_handoff(x.copy(), k, ref, ctl, ev.handoff_index,
                                                       substeps)
                    rec.handoff_time = ev.handoff_index * Ts
                    try:
                        t0 = time.perf_counter()
                        seg = seg_planner.solve(ev)
                        rec.solve_ms = 1e3 * (time.perf_counter() - t0)
                    except SegmentInfeasible as err:
                        rec.message = str(err)
                        halted, message = True, str(err)
                        break
                    seg.converged = bool(seg.converged and seg.exact_robustness > 0)
                    rec.converged = seg.converged
                    rec.segment_robustness = seg.smooth_robustness
                    rec.segment_exact = seg.exact_robustness
                    segments.append(seg)
                    if not seg.converged:
                        halted, message = True, "replanned segment did not converge"
                        rec.message = message
                        break
                    ref = splice(ref, seg, ev.handoff_index, ev.target_index)
                    quiet_until = ev.target_index
                    composites.append((ev, seg))
        if k == N:
            break
        x, u = ctl.advance(x, ref.states[k], ref.inputs[k], Ts, substeps)
        states.append(x.copy())
        inputs.append(u)

    n = len(states)
    inp = np.array(inputs).reshape(-1, params.n_rotors)
    if inp.shape[0] < n - 1:
        inp = np.vstack([inp, np.zeros((n - 1 - inp.shape[0], params.n_rotors))])
    executed = dyn.Trajectory(np.array(states), inp, Ts, ref.t0)
    res = SimResult(executed, ref, events, halted, message, segments)
    for ev, seg in composites:
        rec = next(r for r in events if r.t_trigger == ev.t_trigger)
        comp = composite(executed.states[:ev.handoff_index + 1], seg, ref, ev.target_index) \
            if executed.N >= ev.handoff_index else None
        if comp is not None:
            rs, rb = composite_robustness(comp, sc, params, ev.target_index, ev.target_position,
                                          cfg.box_half_width)
            rec.composite_safety, rec.terminal_margin = rs, rb
            res.composites.append(comp)
    return res
