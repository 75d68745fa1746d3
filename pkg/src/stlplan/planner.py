"""Trajectory synthesis by maximizing smooth robustness minus a weighted energy term.

Single shooting: the decision variables are the rotor-force rates u_k, the
states follow from integrating the model. The optimizer works on the
equivalent cumulative forces xi_k = xi_0 + Ts * sum(u), which turns the motor
force limits into simple box bounds. Gradients come from jax autodiff of the
same evaluator used for monitoring.

Open-loop shooting from hover is badly conditioned (a small differential
force early on tips the vehicle over by the end of the horizon), so the
solve starts with a warm-start stage: a smooth cubic B-spline reference for
position and yaw is optimized while the tracking controller closes the loop
inside the rollout. The rate sequence it produces seeds the open-loop stage.
"""
from dataclasses import dataclass, field, replace
import time

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize

import jax
import jax.numpy as jnp

from . import dynamics as dyn
from ._backend import namespace
from .control import SAMPLE_RATE_GAINS, Controller
from .mission import build_mission_formula, pad_states
from .stl import Signal, evaluate, required_horizon, robustness, smooth_robustness

jax.config.update("jax_enable_x64", True)


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 10.0
    kappa: float = 0.2
    weight: float = 0.5
    max_iter: int = 500          # per augmented-Lagrangian stage
    grad_tol: float = 1e-4
    al_stages: int = 6
    mu0: float = 10.0
    mu_growth: float = 10.0
    kappa_margin: float = 1e-4   # aim slightly above kappa so the final check is strict
    multistart: int = 1
    perturb: float = 0.3         # N, amplitude of restart perturbations
    seed: int = 0
    warm_start: bool = True
    knot_spacing: float = 0.5    # s, between B-spline reference knots
    warm_iter: int = 500

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.kappa < 0 or self.weight < 0:
            raise ValueError("kappa and weight must be non-negative")
        if not (self.grad_tol > 0 and self.max_iter > 0 and self.multistart >= 1):
            raise ValueError("tolerances and budgets must be positive")


@dataclass
class PlanResult:
    trajectory: dyn.Trajectory
    smooth_robustness: float
    exact_robustness: float
    energy: float
    iterations: int
    converged: bool
    wall_time: float
    trace: list = field(default_factory=list)     # objective per accepted iterate, per stage
    message: str = ""
    normalized_energy: float = 0.0
    mission: object = None
    task: object = None


@dataclass
class Task:
    """A formula to satisfy from x0 over N steps.

    aux: optional constant columns appended to every signal row, so predicates
    can read run-time data (e.g. a terminal box center) without recompiling.
    """
    formula: object
    table: object
    Ts: float
    N: int
    n_signal: int
    aux_dim: int = 0

    @classmethod
    def for_formula(cls, formula, table, Ts, N, aux_dim=0):
        n_sig = max(N + 1, required_horizon(formula, Ts) + 1)
        return cls(formula, table, Ts, N, n_sig, aux_dim)

    def signal_array(self, states, aux=None):
        X = pad_states(states, self.n_signal)
        if self.aux_dim:
            xp = namespace(X)
            col = xp.broadcast_to(xp.asarray(aux, dtype=float), (X.shape[0], self.aux_dim))
            X = xp.concatenate([X, col], axis=1)
        return X


def mission_task(sc, params):
    spec = build_mission_formula(sc, params)
    return Task.for_formula(spec.formula, spec.table, sc.Ts, sc.N), spec


def rollout(u, x0, params, Ts):
    """States from integrating u (N, N_p) from x0 with RK4; returns a Trajectory."""
    return dyn.rollout(u, x0, params, Ts)


def hover_energy(params):
    return float(dyn.energy_per_sample(dyn.hover_state(params), params))


def spline_basis(N, Ts, spacing):
    """Cubic clamped B-spline design matrices (value, d/dt, d2/dt2) at t_k = k Ts."""
    T = N * Ts
    n_int = max(1, int(round(T / spacing)))
    inner = np.linspace(0.0, T, n_int + 1)
    knots = np.concatenate([[0.0] * 3, inner, [T] * 3])
    M = len(knots) - 4
    t = np.arange(N + 1) * Ts
    eye = np.eye(M)
    spl = BSpline(knots, eye, 3)
    return spl(t), spl.derivative(1)(t), spl.derivative(2)(t)


def greville(N, Ts, spacing):
    """Greville abscissae of the spline basis, as fractions of the horizon."""
    T = N * Ts
    n_int = max(1, int(round(T / spacing)))
    knots = np.concatenate([[0.0] * 3, np.linspace(0.0, T, n_int + 1), [T] * 3])
    M = len(knots) - 4
    return np.array([knots[i + 1:i + 4].mean() for i in range(M)]) / T


def _scan_rollout(x0, u, params, Ts):
    def body(x, uk):
        nxt = dyn.step(x, uk, Ts, params)
        return nxt, nxt
    _, xs = jax.lax.scan(body, x0, u)
    return jnp.concatenate([x0[None], xs], axis=0)


class Problem:
    """Compiled objective pieces for one task, parameter set and (lambda, weight)."""

    def __init__(self, task, params, lam, weight, spacing=0.5):
        self.task = task
        self.params = params
        self.lam = float(lam)
        self.weight = float(weight)
        self.L_hover = hover_energy(params)
        self.spacing = spacing
        npr = params.n_rotors

        def terms_u(u, x0, aux):
            X = _scan_rollout(x0, u, params, task.Ts)
            Xs = task.signal_array(X, aux)
            rho = evaluate(task.formula, task.table, Xs, task.Ts, 0, 0, lam=self.lam)[..., 0]
            L = jnp.sum(dyn.energy_per_sample(X[1:], params)) / self.L_hover
            return rho, L

        def obj_u(u, x0, aux):
            rho, L = terms_u(u, x0, aux)
            return self.weight * L - rho

        def al_z(z, x0, aux, nu, mu, kappa):
            xi = jnp.concatenate([x0[None, 12:], z.reshape(task.N, npr)], axis=0)
            u = (xi[1:] - xi[:-1]) / task.Ts
            rho, L = terms_u(u, x0, aux)
            f = self.weight * L - rho
            g = kappa - rho
            pen = (jnp.maximum(0.0, nu + mu * g) ** 2 - nu ** 2) / (2 * mu)
            return f + pen, (f, rho, L)

        ctl = Controller(params, SAMPLE_RATE_GAINS, Ts=task.Ts)
        B0, B1, B2 = (jnp.asarray(b) for b in spline_basis(task.N, task.Ts, spacing))
        self.n_knots = B0.shape[1]

        def closed_loop(theta, x0):
            th = theta.reshape(self.n_knots, 4)
            P0, P1, P2 = B0 @ th, B1 @ th, B2 @ th

            def body(x, r):
                p0, p1, p2 = r
                uk = ctl.track_point(x, p0[:3], p1[:3], p2[:3], p0[3], p1[3])
                nxt = dyn.step(x, uk, task.Ts, params)
                return nxt, (nxt, uk)
            _, (xs, us) = jax.lax.scan(body, x0, (P0[:-1], P1[:-1], P2[:-1]))
            return jnp.concatenate([x0[None], xs], axis=0), us

        def al_theta(theta, x0, aux, nu, mu, kappa):
            X, _ = closed_loop(theta, x0)
            Xs = task.signal_array(X, aux)
            rho = evaluate(task.formula, task.table, Xs, task.Ts, 0, 0, lam=self.lam)[..., 0]
            L = jnp.sum(dyn.energy_per_sample(X[1:], params)) / self.L_hover
            f = self.weight * L - rho
            g = kappa - rho
            pen = (jnp.maximum(0.0, nu + mu * g) ** 2 - nu ** 2) / (2 * mu)
            return f + pen, (f, rho, L)

        self._closed_loop = jax.jit(closed_loop)
        self._al_theta = jax.jit(jax.value_and_grad(al_theta, has_aux=True))
        self._obj_u = jax.jit(obj_u)
        self._grad_u = jax.jit(jax.grad(obj_u))
        self._al = jax.jit(jax.value_and_grad(al_z, has_aux=True))

    def aux0(self):
        return np.zeros(self.task.aux_dim)

    def objective(self, u, x0, aux=None):
        aux = self.aux0() if aux is None else aux
        return float(self._obj_u(jnp.asarray(u, dtype=float), jnp.asarray(x0, dtype=float),
                                 jnp.asarray(aux, dtype=float)))

    def gradient(self, u, x0, aux=None):
        aux = self.aux0() if aux is None else aux
        g = self._grad_u(jnp.asarray(u, dtype=float), jnp.asarray(x0, dtype=float),
                         jnp.asarray(aux, dtype=float))
        g = np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise PlanningError("non-finite gradient")
        return g

    def warmup(self, x0, aux=None):
        """Trigger compilation so later solves measure only optimization time."""
        aux = self.aux0() if aux is None else aux
        z = np.tile(np.asarray(x0)[12:], self.task.N)
        self._al(z, x0, aux, 0.0, 1.0, 0.0)
        self._al_theta(self.theta_hold(x0), x0, aux, 0.0, 1.0, 0.0)

    def theta_hold(self, x0):
        """Spline coefficients of a reference that holds the start position and yaw."""
        x0 = np.asarray(x0, dtype=float)
        return np.tile(np.concatenate([x0[:3], x0[5:6]]), self.n_knots)

    def theta_line(self, x0, p_end):
        """Coefficients of a constant-speed straight reference from x0 to p_end."""
        x0 = np.asarray(x0, dtype=float)
        frac = greville(self.task.N, self.task.Ts, self.spacing)[:, None]
        pts = x0[:3] + frac * (np.asarray(p_end, dtype=float) - x0[:3])
        return np.hstack([pts, np.full((len(frac), 1), x0[5])]).ravel()

    def _al_loop(self, fun_factory, z, bounds, config, max_iter, kappa):
        nu, mu = 0.0, config.mu0
        traces, iters, res = [], 0, None
        for stage in range(config.al_stages):
            trace = []

            def cb(intermediate_result):
                trace.append(float(intermediate_result.fun))

            res = minimize(fun_factory(nu, mu), z, jac=True, method="L-BFGS-B", bounds=bounds,
                           callback=cb, options={"maxiter": max_iter, "gtol": config.grad_tol,
                                                 "ftol": 1e-12, "maxcor": 20})
            z = res.x
            iters += int(res.nit)
            traces.append(trace)
            rho = fun_factory(nu, mu)(z, with_aux=True)[1]
            g = kappa - rho
            if g <= 0:
                break
            nu = max(0.0, nu + mu * g)
            mu *= config.mu_growth
        return z, iters, traces, (str(res.message) if res is not None else "")

    def warm_start(self, x0, config, aux=None, theta0=None):
        """Closed-loop reference optimization; returns (u, info)."""
        aux = self.aux0() if aux is None else np.asarray(aux, dtype=float)
        x0j, auxj = jnp.asarray(x0, dtype=float), jnp.asarray(aux)
        kappa = config.kappa + config.kappa_margin
        theta = self.theta_hold(x0) if theta0 is None else np.ravel(theta0)

        def factory(nu, mu):
            def fun(th, with_aux=False):
                (val, (f, rho, L)), grad = self._al_theta(th, x0j, auxj, nu, mu, kappa)
                if with_aux:
                    return float(val), float(rho)
                grad = np.asarray(grad, dtype=float)
                if not np.all(np.isfinite(grad)):
                    raise PlanningError("non-finite gradient in warm start")
                return float(val), grad
            return fun

        theta, iters, traces, msg = self._al_loop(factory, theta, None, config,
                                                  config.warm_iter, kappa)
        _, us = self._closed_loop(jnp.asarray(theta), x0j)
        return np.asarray(us), {"iterations": iters, "trace": traces, "message": msg,
                                "theta": theta}

    def solve(self, x0, config, aux=None, z0=None):
        """Augmented-Lagrangian loop around L-BFGS-B on cumulative forces; returns (u, info)."""
        p = self.params
        npr, N = p.n_rotors, self.task.N
        aux = self.aux0() if aux is None else np.asarray(aux, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0[12:] < p.xi_min) or np.any(x0[12:] > p.xi_max):
            raise PlanningError("initial rotor forces outside their bounds")
        z = np.tile(x0[12:], N) if z0 is None else np.clip(np.ravel(z0), p.xi_min, p.xi_max)
        kappa = config.kappa + config.kappa_margin
        bounds = [(p.xi_min, p.xi_max)] * (N * npr)
        x0j, auxj = jnp.asarray(x0), jnp.asarray(aux)

        def factory(nu, mu):
            def fun(zz, with_aux=False):
                (val, (f, rho, L)), grad = self._al(zz, x0j, auxj, nu, mu, kappa)
                if with_aux:
                    return float(val), float(rho)
                return float(val), np.asarray(grad, dtype=float)
            return fun

        z, iters, traces, msg = self._al_loop(factory, z, bounds, config, config.max_iter, kappa)
        xi = np.vstack([x0[None, 12:], z.reshape(N, npr)])
        u = (xi[1:] - xi[:-1]) / self.task.Ts
        return u, {"iterations": iters, "trace": traces, "message": msg}


_problem_cache = {}


def get_problem(task, params, lam, weight, key=None, spacing=0.5):
    """Problems are cached so repeated solves of the same task reuse compiled code."""
    if key is None:
        return Problem(task, params, lam, weight, spacing)
    k = (key, id(params), float(lam), float(weight), float(spacing))
    prob = _problem_cache.get(k)
    if prob is None or prob.params is not params:
        prob = Problem(task, params, lam, weight, spacing)
        _problem_cache[k] = prob
    return prob


def objective(u, x0, task, config, params=None):
    """w * normalized energy - smooth robustness at k=0."""
    params = dyn.default_hexarotor() if params is None else params
    return get_problem(task, params, config.lam, config.weight, key=("obj", id(task))) \
        .objective(u, x0)


def gradient(u, x0, task, config, params=None):
    """Gradient of `objective` with respect to every entry of u (shape (N, N_p))."""
    params = dyn.default_hexarotor() if params is None else params
    return get_problem(task, params, config.lam, config.weight, key=("obj", id(task))) \
        .gradient(u, x0)


def evaluate_plan(traj, task, params, config, aux=None):
    """(smooth robustness, exact robustness, raw energy, normalized energy) of a trajectory."""
    X = task.signal_array(traj.states, aux)
    sig = Signal(X, task.Ts)
    rs = smooth_robustness(task.formula, sig, 0, config.lam, task.table)
    re = robustness(task.formula, sig, 0, task.table)
    per, total = dyn.energy_term(traj, params)
    return float(rs), float(re), total, float(np.sum(per[1:]) / hover_energy(params))


def _xi_path(u, x0, Ts):
    return np.asarray(x0)[12:] + Ts * np.cumsum(u, axis=0)


def solve_task(task, x0, params, config, aux=None, problem=None, theta0=None):
    """Run the (multistart) solve for a task; returns a PlanResult."""
    t0 = time.perf_counter()
    prob = problem or Problem(task, params, config.lam, config.weight, config.knot_spacing)
    best = None
    x0 = np.asarray(x0, dtype=float)
    for c in range(config.multistart):
        rng = np.random.default_rng([config.seed, c])
        iters, traces, messages = 0, [], []
        z0 = None
        if config.warm_start:
            th0 = theta0
            if c > 0:
                th0 = prob.theta_hold(x0) + config.perturb * rng.standard_normal(prob.n_knots * 4)
            u_w, info = prob.warm_start(x0, config, aux=aux, theta0=th0)
            iters += info["iterations"]
            traces += info["trace"]
            messages.append("warm start: " + info["message"])
            z0 = _xi_path(u_w, x0, task.Ts)
        elif c > 0:
            z0 = (np.tile(x0[12:], task.N)
                  + config.perturb * rng.standard_normal(task.N * params.n_rotors))
        u, info = prob.solve(x0, config, aux=aux, z0=z0)
        iters += info["iterations"]
        traces += info["trace"]
        messages.append("open loop: " + info["message"])
        cands = [u] if z0 is None else [u, np.diff(np.vstack([x0[None, 12:],
                                                            np.reshape(z0, (task.N, -1))]),
                                                  axis=0) / task.Ts]
        for uu in cands:
            try:
                traj = rollout(uu, x0, params, task.Ts)
            except dyn.SingularityError as e:
                # a tumbling candidate has no Euler-angle trajectory to report
                messages.append(f"candidate dropped: {e}")
                continue
            rs, re, energy, Lhat = evaluate_plan(traj, task, params, config, aux)
            xi = traj.xi
            in_bounds = bool(np.all(xi >= params.xi_min - 1e-9)
                             and np.all(xi <= params.xi_max + 1e-9))
            conv = bool(rs >= config.kappa and in_bounds)
            cand = PlanResult(traj, rs, re, energy, iters, conv, 0.0, traces,
                              "; ".join(messages), Lhat)
            if best is None or _better(cand, best, config):
                best = cand
    if best is None:
        raise PlanningError("every candidate ran into the attitude singularity")
    best.wall_time = time.perf_counter() - t0
    return best


def _better(a, b, config):
    if a.converged != b.converged:
        return a.converged
    if a.converged:
        return config.weight * a.normalized_energy - a.smooth_robustness < \
            config.weight * b.normalized_energy - b.smooth_robustness
    return a.smooth_robustness > b.smooth_robustness


def initial_state(sc, params):
    return dyn.hover_state(params, p=sc.p0, yaw=float(sc.eta0[2])) if not np.any(sc.eta0[:2]) \
        else _tilted_start(sc, params)


def _tilted_start(sc, params):
    x = dyn.hover_state(params, p=sc.p0)
    x[3:6] = sc.eta0
    return x


def plan(sc, params=None, config=None):
    """Plan the mission of scenario sc; best-effort result flagged when not converged."""
    params = dyn.default_hexarotor() if params is None else params
    config = SolverConfig() if config is None else config
    N = sc.N
    if N < 1:
        raise PlanningError("horizon must have at least one step")
    task, spec = mission_task(sc, params)
    res = solve_task(task, initial_state(sc, params), params, config)
    res.mission = spec
    res.task = task
    return res
