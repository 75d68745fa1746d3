"""Cascaded PD tracking law shared by the simulator and the planner warm start.

Position PD with acceleration feedforward gives a desired force; the desired
attitude is the reference attitude tilted so its thrust axis follows that
force; attitude PD with torque feedforward gives the desired torque; the
wrench maps to rotor forces through the allocation pseudo-inverse and the
result becomes a rate command d(xi)/dt, limited so xi stays inside its bounds
after one sample. When the state equals a dynamically consistent reference
the command equals the reference input exactly.
"""
from dataclasses import dataclass

import numpy as np

from ._backend import namespace
from . import dynamics as dyn


@dataclass(frozen=True)
class TrackingGains:
    kp: float = 4.0       # position, 1/s^2
    kd: float = 3.2       # velocity, 1/s
    ka: float = 100.0     # attitude, 1/s^2 (scaled by inertia)
    kw: float = 16.0      # body rate, 1/s (scaled by inertia)
    kxi: float = 30.0     # force loop, 1/s

    def __post_init__(self):
        if min(self.kp, self.kd, self.ka, self.kw, self.kxi) <= 0:
            raise ValueError("tracking gains must be positive")


def _hat(v, xp):
    z = xp.zeros_like(v[0])
    return xp.stack([xp.stack([z, -v[2], v[1]]),
                     xp.stack([v[2], z, -v[0]]),
                     xp.stack([-v[1], v[0], z])])


def _vee(M, xp):
    return xp.stack([M[2, 1], M[0, 2], M[1, 0]])


def rotation_between(a, b):
    """Smallest rotation taking unit vector a onto unit vector b (Rodrigues)."""
    xp = namespace(a, b)
    v = xp.cross(a, b)
    c = xp.dot(a, b)
    K = _hat(v, xp)
    # antiparallel inputs have no unique answer; the floor keeps it finite
    return xp.eye(3) + K + K @ K / xp.maximum(1.0 + c, 1e-12)


# a gentler set that stays stable when the law runs only once per sample
SAMPLE_RATE_GAINS = TrackingGains(ka=36.0, kw=9.0, kxi=10.0)


class Controller:
    """Tracking law evaluated every Ts seconds (Ts is the control period)."""

    def __init__(self, params, gains=None, Ts=0.1):
        self.params = params
        self.gains = TrackingGains() if gains is None else gains
        self.Ts = Ts
        md = dyn.model(params)
        self.G = md.G
        self.Gpinv = np.linalg.pinv(md.G)
        if np.linalg.matrix_rank(md.G) < 4:
            raise ValueError("allocation matrix rank below 4: cannot track attitude and thrust")
        self.xi_hover = dyn.hover_forces(params)

    def command(self, x, p_ref, v_ref, a_ref, R_ref, w_ref, xi_ref, tau_ff, u_ff):
        """Rate command d(xi)/dt for state x against one reference sample."""
        xp = namespace(x, p_ref, v_ref, a_ref, R_ref, xi_ref, u_ff)
        P, g = self.params, self.gains
        J = P.J
        p, eta, v, w, xi = x[0:3], x[3:6], x[6:9], x[9:12], x[12:]
        R = dyn.rotation_matrix(eta)
        a_des = a_ref + g.kp * (p_ref - p) + g.kd * (v_ref - v)
        F = P.m * (a_des + np.array([0.0, 0.0, P.g]))
        b3 = F / xp.sqrt(xp.sum(F * F))
        R_des = rotation_between(R_ref[:, 2], b3) @ R_ref
        e_R = 0.5 * _vee(R_des.T @ R - R.T @ R_des, xp)
        e_w = w - R.T @ (R_des @ w_ref)
        tau = tau_ff - J @ (g.ka * e_R + g.kw * e_w)
        f_body = R.T @ F
        wrench = xp.concatenate([f_body, tau])
        xi_des = xi_ref + self.Gpinv @ (wrench - self.G @ xi_ref)
        rate = u_ff + g.kxi * (xi_des - xi)
        lo = (P.xi_min - xi) / self.Ts
        hi = (P.xi_max - xi) / self.Ts
        return xp.clip(rate, lo, hi)

    def reference_terms(self, x_ref, u_ref):
        """Feedforward quantities of a dynamically consistent reference sample."""
        xp = namespace(x_ref, u_ref)
        P = self.params
        md = dyn.model(P)
        R_ref = dyn.rotation_matrix(x_ref[3:6])
        xi_ref = x_ref[12:]
        a_ref = md.gvec + R_ref @ (md.Gf @ xi_ref) / P.m
        tau_ff = md.Gt @ xi_ref
        return x_ref[0:3], x_ref[6:9], a_ref, R_ref, x_ref[9:12], xi_ref, tau_ff, u_ref

    def track(self, x, x_ref, u_ref):
        return self.command(x, *self.reference_terms(x_ref, u_ref))

    def advance(self, x, x_ref, u_ref, T, substeps):
        """Fly one reference sample of length T with `substeps` control updates.

        The reference is integrated alongside with its own input held, so a
        state that matches the reference keeps matching it. Returns the next
        state and the mean rate command over the sample.
        """
        h = T / substeps
        acc = np.zeros(self.params.n_rotors)
        for _ in range(substeps):
            u = self.track(x, x_ref, u_ref)
            x = dyn.step(x, u, h, self.params)
            if substeps > 1:
                x_ref = dyn.step(x_ref, u_ref, h, self.params)
            acc = acc + u
        return x, acc / substeps

    def track_point(self, x, p_ref, v_ref, a_ref, yaw_ref, yaw_rate=0.0):
        """Command toward a flat-output reference (position, velocity, acceleration, yaw)."""
        xp = namespace(x, p_ref, v_ref, a_ref, yaw_ref)
        c, s = xp.cos(yaw_ref), xp.sin(yaw_ref)
        z, o = xp.zeros_like(c), xp.ones_like(c)
        R_ref = xp.stack([xp.stack([c, -s, z]), xp.stack([s, c, z]), xp.stack([z, z, o])])
        w_ref = xp.stack([z, z, z + yaw_rate])
        return self.command(x, p_ref, v_ref, a_ref, R_ref, w_ref,
                            xp.asarray(self.xi_hover), xp.zeros(3), xp.zeros(self.params.n_rotors))


def track_step(state, reference_state, gains, params, reference_input=None, Ts=0.01):
    """Rate command d(xi)/dt driving state toward reference_state (control period Ts)."""
    ctl = Controller(params, gains, Ts)
    u_ref = np.zeros(params.n_rotors) if reference_input is None else reference_input
    return ctl.track(np.asarray(state, dtype=float), np.asarray(reference_state, dtype=float),
                     np.asarray(u_ref, dtype=float))
