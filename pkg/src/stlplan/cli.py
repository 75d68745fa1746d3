"""Command-line entry point.

    stlplan plan          --scenario desk --out run/
    stlplan monitor       run/trajectory.csv --scenario desk
    stlplan risk          run/trajectory.csv --scenario desk --out run/ --variance-set 1
    stlplan simulate      run/trajectory.csv --scenario desk --out run/ --impulse 4.0:0,-1.2,0
    stlplan check-formula "G[0,2] ws.x_lo & F[0,1] ho.z_hi" --scenario desk

Any option can also come from the environment as STLPLAN_<OPTION>, e.g.
STLPLAN_SEED=3 or STLPLAN_LAMBDA=20; a flag on the command line wins.

Exit codes: 0 success, 1 usage or input error, 2 plan not converged,
3 monitored trajectory violates the mission, 4 simulation halted by an
infeasible replan.
"""
import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import dynamics as dyn
from .mission import (ScenarioError, build_mission_formula, bundled_scenario_names,
                      group_breakdown, load_bundled, load_scenario)
from .planner import SolverConfig, plan
from .stl import (StlError, depth, parse_formula, predicate_ids, required_horizon, robustness,
                  smooth_robustness, unparse)

log = logging.getLogger("stlplan")

ENV_PREFIX = "STLPLAN_"
EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_VIOLATED, EXIT_HALTED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means "not converged" here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _betas(text):
    try:
        out = tuple(float(b) for b in str(text).split(",") if b.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad beta list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty beta list")
    return out


def _impulse(text):
    """'t:dx,dy,dz' or 't:dx,dy,dz:dvx,dvy,dvz'."""
    parts = str(text).split(":")
    try:
        t = float(parts[0])
        dp = tuple(float(a) for a in parts[1].split(","))
        dv = tuple(float(a) for a in parts[2].split(",")) if len(parts) > 2 else (0.0, 0.0, 0.0)
    except (IndexError, ValueError):
        raise argparse.ArgumentTypeError(f"bad impulse {text!r}, expected t:dx,dy,dz") from None
    if len(dp) != 3 or len(dv) != 3 or len(parts) > 3:
        raise argparse.ArgumentTypeError(f"bad impulse {text!r}, expected t:dx,dy,dz")
    return {"time": t, "dp": dp, "dv": dv}


def _add(p, *flags, env=True, **kw):
    a = p.add_argument(*flags, **kw)
    if env and flags[0].startswith("--"):
        a.env = ENV_PREFIX + a.dest.upper()
    return a


def build_parser():
    top = _Parser(prog="stlplan", description="Temporal-logic handover planning for multirotors.")
    top.add_argument("--log-level", default=os.environ.get(ENV_PREFIX + "LOG_LEVEL", "WARNING"))
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario(p):
        _add(p, "--scenario", default="desk",
             help="scenario JSON path or bundled name (%s)" % ", ".join(bundled_scenario_names()))

    p = sub.add_parser("plan", help="optimize a trajectory for a scenario")
    scenario(p)
    _add(p, "--out", default=".")
    _add(p, "--seed", type=int, default=0)
    _add(p, "--lambda", dest="lam", type=float, default=10.0)
    _add(p, "--kappa", type=float, default=0.2)
    _add(p, "--weight", type=float, default=0.5)
    _add(p, "--horizon", type=int, default=None, help="number of samples N (rescales the mission)")
    _add(p, "--max-iter", type=int, default=500)
    _add(p, "--multistart", type=int, default=1)
    _add(p, "--timing", action="store_true", help="include wall time in the report")

    p = sub.add_parser("monitor", help="robustness of a trajectory CSV")
    p.add_argument("trajectory")
    scenario(p)
    _add(p, "--lambda", dest="lam", type=float, default=10.0)

    p = sub.add_parser("risk", help="VaR/CVaR bounds under a random operator pose")
    p.add_argument("trajectory")
    scenario(p)
    _add(p, "--out", default=".")
    _add(p, "--seed", type=int, default=0)
    _add(p, "--lambda", dest="lam", type=float, default=10.0)
    _add(p, "--samples", type=int, default=15000)
    _add(p, "--delta", type=float, default=0.01)
    _add(p, "--beta", type=_betas, default=(0.7, 0.8, 0.9))
    _add(p, "--variance-set", type=int, default=1, choices=(1, 2, 3, 4))
    _add(p, "--distribution", default=None, help="JSON file with mean, cov, attitude_* keys")
    _add(p, "--stochastic-attitude", action="store_true")

    p = sub.add_parser("simulate", help="fly a trajectory CSV with disturbances and replanning")
    p.add_argument("trajectory")
    scenario(p)
    _add(p, "--out", default=".")
    _add(p, "--script", default=None, help='JSON file {"impulses": [{"time", "dp", "dv"}]}')
    p.add_argument("--impulse", type=_impulse, action="append", default=[],
                   help="t:dx,dy,dz[:dvx,dvy,dvz], repeatable")
    _add(p, "--zeta", type=float, default=1.0)
    _add(p, "--timing", action="store_true", help="fill solve_ms in the event log")

    p = sub.add_parser("check-formula", help="parse a formula and report its structure")
    p.add_argument("formula", help="formula text, or @file")
    _add(p, "--scenario", default=None, help="check predicate names against this scenario")
    _add(p, "--horizon", type=int, default=None, help="signal length to check the horizon against")
    return top


def _apply_env(parser, args, argv):
    """Fill options absent from argv from STLPLAN_* variables."""
    sub = next(a for a in parser._subparsers._group_actions[0].choices.values()
               if a.prog.endswith(" " + args.command))
    for action in sub._actions:
        env = getattr(action, "env", None)
        if env is None or env not in os.environ:
            continue
        if any(o in argv or any(s.startswith(o + "=") for s in argv) for o in action.option_strings):
            continue
        raw = os.environ[env]
        if action.nargs == 0:
            val = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                val = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"{env}: {e}") from None
            if action.choices is not None and val not in action.choices:
                raise UsageError(f"{env}: {val!r} not in {sorted(action.choices)}")
        setattr(args, action.dest, val)


def _scenario(ref):
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"scenario file not found: {ref}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"scenario {ref} is not valid JSON: {e}") from None
        return load_scenario(doc)
    if ref in bundled_scenario_names():
        return load_bundled(ref)
    raise UsageError(f"no scenario file or bundled scenario named {ref!r}")


def _trajectory(path):
    try:
        return dyn.Trajectory.from_csv(str(path))
    except FileNotFoundError:
        raise UsageError(f"trajectory file not found: {path}") from None
    except ValueError as e:
        raise UsageError(f"{path}: {e}") from None


def _outdir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e}") from None
    return out


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- subcommands ---------------------------------------------------------------

def cmd_plan(args):
    sc = _scenario(args.scenario)
    if args.horizon is not None:
        if args.horizon < 1:
            raise UsageError("--horizon must be at least 1")
        sc = sc.with_horizon(args.horizon)
    try:
        cfg = SolverConfig(lam=args.lam, kappa=args.kappa, weight=args.weight, seed=args.seed,
                           max_iter=args.max_iter, multistart=args.multistart)
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = _outdir(args.out)
    params = dyn.default_hexarotor()
    res = plan(sc, params, cfg)
    traj = res.trajectory
    speeds = dyn.propeller_speeds(traj.xi, params)
    report = {
        "scenario": sc.name, "N": traj.N, "Ts": traj.Ts,
        "config": {"lambda": cfg.lam, "kappa": cfg.kappa, "weight": cfg.weight,
                   "seed": cfg.seed, "max_iter": cfg.max_iter, "multistart": cfg.multistart},
        "converged": res.converged,
        "smooth_robustness": res.smooth_robustness,
        "exact_robustness": res.exact_robustness,
        "energy": res.energy, "normalized_energy": res.normalized_energy,
        "iterations": res.iterations, "message": res.message,
        "groups": group_breakdown(traj, res.mission, cfg.lam),
        "max_speed": float(np.max(np.linalg.norm(traj.v, axis=1))),
        "xi_range": [float(traj.xi.min()), float(traj.xi.max())],
        "propeller_hz_range": [float(speeds.min()), float(speeds.max())],
    }
    if args.timing:
        report["wall_time_s"] = res.wall_time
    traj.to_csv(out / "trajectory.csv")
    _write(out / "plan_report.json", _dump(report))
    print(f"smooth robustness {res.smooth_robustness:.6f}, exact {res.exact_robustness:.6f}, "
          f"energy {res.normalized_energy:.3f} (hover units), "
          f"{'converged' if res.converged else 'NOT converged'}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_monitor(args):
    traj = _trajectory(args.trajectory)
    sc = _scenario(args.scenario)
    if abs(traj.Ts - sc.Ts) > 1e-9:
        raise UsageError(f"trajectory sampled at {traj.Ts} s, scenario at {sc.Ts} s")
    params = dyn.default_hexarotor()
    if traj.n_rotors != params.n_rotors:
        raise UsageError(f"trajectory has {traj.n_rotors} rotors, model has {params.n_rotors}")
    spec = build_mission_formula(sc, params)
    sig = spec.signal(traj)
    rho = robustness(spec.formula, sig, 0, spec.table)
    rho_s = smooth_robustness(spec.formula, sig, 0, args.lam, spec.table)
    print(f"exact robustness  {rho:.6f}")
    print(f"smooth robustness {rho_s:.6f}  (lambda = {args.lam:g})")
    for name, r in group_breakdown(traj, spec, args.lam).items():
        print(f"  {name:<4} exact {r['exact']:>12.6f}  smooth {r['smooth']:>12.6f}")
    return EXIT_OK if rho > 0 else EXIT_VIOLATED


def cmd_risk(args):
    from .risk import PoseDistribution, RiskConfig, RiskError, CovarianceError, run_risk_analysis
    traj = _trajectory(args.trajectory)
    sc = _scenario(args.scenario)
    try:
        cfg = RiskConfig(K=args.samples, delta=args.delta, betas=args.beta, seed=args.seed,
                         lam=args.lam)
        if args.distribution:
            try:
                d = json.loads(Path(args.distribution).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise UsageError(f"cannot read distribution {args.distribution}: {e}") from None
            dist = PoseDistribution(d.get("mean", sc.human_position.tolist()), d["cov"],
                                    d.get("attitude_mean", sc.human_attitude.tolist()),
                                    d.get("attitude_var", [0.0, 0.0, 0.0]),
                                    bool(d.get("attitude_stochastic", False)))
        else:
            dist = PoseDistribution.study_set(args.variance_set, sc.human_position,
                                              sc.human_attitude, args.stochastic_attitude)
    except (RiskError, CovarianceError, KeyError) as e:
        raise UsageError(str(e)) from None
    out = _outdir(args.out)
    rep = run_risk_analysis(traj, sc, dist, cfg)
    _write(out / "risk_report.json", rep.to_json())
    _write(out / "risk_table.txt", rep.table())
    _write(out / "risk_histogram.csv", rep.histogram_csv())
    print(rep.table(), end="")
    return EXIT_OK


def cmd_simulate(args):
    from .replanner import ReplanConfig
    from .simloop import DisturbanceScript, simulate
    traj = _trajectory(args.trajectory)
    sc = _scenario(args.scenario)
    items = []
    if args.script:
        try:
            items = json.loads(Path(args.script).read_text(encoding="utf-8"))["impulses"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise UsageError(f"cannot read disturbance script {args.script}: {e}") from None
    items = list(items) + list(args.impulse)
    items.sort(key=lambda d: float(d["time"]))
    try:
        script = DisturbanceScript.from_list(items)
        script.validate(traj.N * traj.Ts)
        cfg = ReplanConfig(zeta=args.zeta)
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(str(e)) from None
    out = _outdir(args.out)
    res = simulate(traj, script, cfg, sc=sc)
    res.executed.to_csv(out / "executed.csv")
    _write(out / "events.csv", res.event_log_csv(timing=args.timing))
    summary = {
        "halted": res.halted, "message": res.message,
        "max_tracking_error": float(res.tracking_error().max()),
        "events": [{"t_trigger": e.t_trigger, "deviation": e.deviation,
                    "target_time": e.target_time, "handoff_time": e.handoff_time,
                    "converged": e.converged, "segment_robustness": e.segment_robustness,
                    "segment_exact": e.segment_exact, "composite_safety": e.composite_safety,
                    "terminal_margin": e.terminal_margin, "message": e.message}
                   for e in res.events],
    }
    if args.timing:
        for d, e in zip(summary["events"], res.events):
            d["solve_ms"] = e.solve_ms
    _write(out / "simulation_report.json", _dump(summary))
    print(f"{len(res.events)} event(s), max tracking error "
          f"{summary['max_tracking_error']:.4f} m" + (f", halted: {res.message}" if res.halted else ""))
    return EXIT_HALTED if res.halted else EXIT_OK


def cmd_check_formula(args):
    text = args.formula
    if text.startswith("@"):
        try:
            text = Path(text[1:]).read_text(encoding="utf-8")
        except OSError as e:
            raise UsageError(str(e)) from None
    table = None
    Ts = 0.1
    if args.scenario:
        sc = _scenario(args.scenario)
        table = build_mission_formula(sc).table
        Ts = sc.Ts
    try:
        f = parse_formula(text, table)
    except StlError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    need = required_horizon(f, Ts) + 1
    print(unparse(f))
    print(f"depth {depth(f)}, predicates {len(predicate_ids(f))}, "
          f"needs {need} samples at Ts = {Ts:g} s")
    if args.horizon is not None and need > args.horizon + 1:
        print(f"error: horizon N = {args.horizon} is too short", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "monitor": cmd_monitor, "risk": cmd_risk,
            "simulate": cmd_simulate, "check-formula": cmd_check_formula}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_env(parser, args, argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"stlplan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as e:
        print(f"stlplan: scenario error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
