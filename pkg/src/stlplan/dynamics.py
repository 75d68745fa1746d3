"""Generically-tilted multirotor (GTMR) model.

State layout (flat vector): p(3) world position, eta(3) roll/pitch/yaw (ZYX),
v(3) world velocity, omega(3) body rates, xi(N_p) rotor forces in newtons.
The input is u = d(xi)/dt in N/s, held constant over each sample.
"""
import csv
from dataclasses import dataclass, field
import io
import warnings

import numpy as np

from ._backend import namespace

GRAVITY = 9.81
PITCH_GUARD = 1e-3


class SingularityError(ValueError):
    """Pitch too close to +-90 deg for the ZYX Euler-rate map."""


@dataclass(frozen=True)
class GtmrParams:
    m: float
    J: np.ndarray
    rotor_positions: np.ndarray   # (N_p, 3) body frame
    rotor_axes: np.ndarray        # (N_p, 3) unit vectors
    c_xi: np.ndarray              # (N_p,) force coefficient
    c_tau: np.ndarray             # (N_p,) drag-torque coefficient
    spin: np.ndarray              # (N_p,) +1 / -1
    xi_min: float = 0.29
    xi_max: float = 11.5
    g: float = GRAVITY

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        pos = np.atleast_2d(np.asarray(self.rotor_positions, dtype=float))
        axes = np.atleast_2d(np.asarray(self.rotor_axes, dtype=float))
        n = pos.shape[0]
        c_xi = np.broadcast_to(np.asarray(self.c_xi, dtype=float), (n,)).copy()
        c_tau = np.broadcast_to(np.asarray(self.c_tau, dtype=float), (n,)).copy()
        spin = np.broadcast_to(np.asarray(self.spin, dtype=float), (n,)).copy()
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.min(np.linalg.eigvalsh(J)) <= 0:
            raise ValueError("inertia must be a symmetric positive definite 3x3 matrix")
        if axes.shape != (n, 3) or pos.shape != (n, 3):
            raise ValueError("rotor positions and axes must both be (N_p, 3)")
        if n < 4:
            raise ValueError("need at least 4 rotors")
        if not np.allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12):
            raise ValueError("rotor axes must be unit vectors")
        if np.any(c_xi <= 0) or np.any(c_tau < 0):
            raise ValueError("rotor coefficients must be positive")
        if not 0 <= self.xi_min < self.xi_max:
            raise ValueError("need 0 <= xi_min < xi_max")
        for name, val in (("J", J), ("rotor_positions", pos), ("rotor_axes", axes),
                          ("c_xi", c_xi), ("c_tau", c_tau), ("spin", spin)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_rotors(self):
        return self.rotor_positions.shape[0]

    @property
    def n_states(self):
        return 12 + self.n_rotors


def default_hexarotor(radius=0.4):
    """Planar hexarotor with vertical axes and alternating spin."""
    ang = np.arange(6) * np.pi / 3
    pos = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(6)], axis=1)
    axes = np.tile([0.0, 0.0, 1.0], (6, 1))
    return GtmrParams(m=2.25, J=np.diag([2.07e-2, 2.10e-2, 3.10e-2]),
                      rotor_positions=pos, rotor_axes=axes,
                      c_xi=11.5e-4, c_tau=2.38e-5, spin=[1, -1, 1, -1, 1, -1])


def allocation_matrix(params):
    """6 x N_p map from rotor forces to body force (rows 0-2) and torque (rows 3-5)."""
    z = params.rotor_axes
    drag = (params.spin * params.c_tau / params.c_xi)[:, None] * z
    tau = np.cross(params.rotor_positions, z) + drag
    G = np.vstack([z.T, tau.T])
    rank = np.linalg.matrix_rank(G)
    if rank < 4:
        warnings.warn(f"allocation matrix has rank {rank} < 4", stacklevel=2)
    return G


def actuation_rank(params):
    return int(np.linalg.matrix_rank(allocation_matrix(params)))


def rotation_matrix(eta):
    """Body-to-world rotation R = Rz(yaw) Ry(pitch) Rx(roll)."""
    xp = namespace(eta)
    phi, th, psi = eta[0], eta[1], eta[2]
    cf, sf = xp.cos(phi), xp.sin(phi)
    ct, st = xp.cos(th), xp.sin(th)
    cp, sp = xp.cos(psi), xp.sin(psi)
    return xp.stack([
        xp.stack([cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf]),
        xp.stack([sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf]),
        xp.stack([-st, ct * sf, ct * cf]),
    ])


def _check_pitch(th):
    if abs(float(th)) >= np.pi / 2 - PITCH_GUARD:
        raise SingularityError(f"pitch {float(th):.6f} rad is within the Euler singularity guard")


def euler_rate_jacobian(eta):
    """T(eta) with d(eta)/dt = T(eta) omega for ZYX angles and body rates."""
    xp = namespace(eta)
    if xp is np:
        eta = np.asarray(eta, dtype=float)
        _check_pitch(eta[1])
    phi, th = eta[0], eta[1]
    cf, sf = xp.cos(phi), xp.sin(phi)
    ct, tt = xp.cos(th), xp.tan(th)
    one, zero = xp.ones_like(phi), xp.zeros_like(phi)
    return xp.stack([
        xp.stack([one, sf * tt, cf * tt]),
        xp.stack([zero, cf, -sf]),
        xp.stack([zero, sf / ct, cf / ct]),
    ])


class _Model:
    """Constant arrays derived from the parameters, cached per parameter object."""

    def __init__(self, params):
        self.params = params
        G = allocation_matrix(params)
        self.G = G
        self.Gf = G[:3]
        self.Gt = G[3:]
        self.J = params.J
        self.Jinv = np.linalg.inv(params.J)
        self.gvec = np.array([0.0, 0.0, -params.g])


_models = {}


def model(params):
    key = id(params)
    m = _models.get(key)
    if m is None or m.params is not params:
        m = _Model(params)
        _models[key] = m
    return m


def derivative(x, u, params):
    """Time derivative of the flat state under input u."""
    xp = namespace(x, u)
    if xp is np:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
    md = model(params)
    eta, v, w, xi = x[3:6], x[6:9], x[9:12], x[12:]
    R = rotation_matrix(eta)
    T = euler_rate_jacobian(eta)
    acc = md.gvec + R @ (md.Gf @ xi) / params.m
    Jw = md.J @ w
    wdot = md.Jinv @ (md.Gt @ xi - xp.cross(w, Jw))
    return xp.concatenate([v, T @ w, acc, wdot, u])


def step(x, u, Ts, params):
    """One classical RK4 step with u held constant."""
    k1 = derivative(x, u, params)
    k2 = derivative(x + 0.5 * Ts * k1, u, params)
    k3 = derivative(x + 0.5 * Ts * k2, u, params)
    k4 = derivative(x + Ts * k3, u, params)
    return x + (Ts / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def hover_forces(params):
    """Least-norm rotor forces balancing gravity at zero attitude."""
    md = model(params)
    wrench = np.array([0.0, 0.0, params.m * params.g, 0.0, 0.0, 0.0])
    z = params.rotor_axes
    if np.allclose(z, [0, 0, 1]):
        # vertical axes: try the equal split first, exact when torques cancel
        xi = np.full(params.n_rotors, params.m * params.g / params.n_rotors)
        if np.allclose(md.G @ xi, wrench, atol=1e-12):
            return xi
    return np.linalg.pinv(md.G) @ wrench


def hover_state(params, p=(0, 0, 0), yaw=0.0):
    x = np.zeros(params.n_states)
    x[0:3] = p
    x[5] = yaw
    x[12:] = hover_forces(params)
    return x


def propeller_speeds(xi, params):
    """Rotor speed in Hz: sqrt(Omega) with squared speed Omega = xi / c_xi."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ValueError("rotor forces must be non-negative")
    c = params.c_xi
    if np.all(c == c[0]) and xi.shape[-1:] != c.shape:
        c = c[0]
    return np.sqrt(xi / c)


def energy_per_sample(states, params):
    """L_k = sum c_xi Omega^3 + 1/2 (m |v|^2 + w^T J w) for each row of states."""
    xp = namespace(states)
    v = states[..., 6:9]
    w = states[..., 9:12]
    omega_sq = states[..., 12:] / params.c_xi     # Omega is the squared rotor speed
    power = xp.sum(params.c_xi * omega_sq ** 3, axis=-1)
    kin = 0.5 * (params.m * xp.sum(v * v, axis=-1) + xp.sum(w * (w @ params.J), axis=-1))
    return power + kin


def energy_term(traj, params):
    """(per-sample energy array, total over all samples)."""
    per = energy_per_sample(np.asarray(traj.states), params)
    return per, float(np.sum(per))


@dataclass
class Trajectory:
    states: np.ndarray      # (N+1, 12+N_p)
    inputs: np.ndarray      # (N, N_p)
    Ts: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise ValueError("states and inputs must be 2-D")
        if self.inputs.shape[0] != self.states.shape[0] - 1:
            raise ValueError("need one input per step: len(inputs) == len(states) - 1")
        if self.states.shape[1] != 12 + self.inputs.shape[1]:
            raise ValueError("state width must be 12 + rotor count")

    @property
    def N(self):
        return self.inputs.shape[0]

    @property
    def n_rotors(self):
        return self.inputs.shape[1]

    @property
    def times(self):
        return self.t0 + self.Ts * np.arange(self.N + 1)

    p = property(lambda self: self.states[:, 0:3])
    eta = property(lambda self: self.states[:, 3:6])
    v = property(lambda self: self.states[:, 6:9])
    omega = property(lambda self: self.states[:, 9:12])
    xi = property(lambda self: self.states[:, 12:])

    def rollout_residual(self, params):
        """Max deviation between stored states and re-integrated ones."""
        err = 0.0
        for k in range(self.N):
            nxt = step(self.states[k], self.inputs[k], self.Ts, params)
            err = max(err, float(np.max(np.abs(nxt - self.states[k + 1]))))
        return err

    def to_csv(self, path=None):
        """Write the trajectory CSV; returns the text when path is None.

        The final row has no following step, so its xidot entries are zero.
        """
        npr = self.n_rotors
        header = (["t", "p_x", "p_y", "p_z", "roll", "pitch", "yaw", "v_x", "v_y", "v_z",
                   "omega_x", "omega_y", "omega_z"]
                  + [f"xi_{i + 1}" for i in range(npr)]
                  + [f"xidot_{i + 1}" for i in range(npr)])
        u = np.vstack([self.inputs, np.zeros((1, npr))])
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for t, x, uk in zip(self.times, self.states, u):
            wr.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in uk])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text):
        if "\n" in str(path_or_text):
            text = str(path_or_text)
        else:
            with open(path_or_text, encoding="utf-8") as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 3:
            raise ValueError("trajectory CSV needs a header and at least two rows")
        header = rows[0]
        npr = sum(1 for h in header if h.startswith("xi_"))
        if header[0] != "t" or npr < 1 or len(header) != 13 + 2 * npr:
            raise ValueError("unexpected trajectory CSV header")
        try:
            data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        except ValueError as e:
            raise ValueError(f"malformed trajectory CSV: {e}") from None
        if data.ndim != 2 or data.shape[1] != len(header):
            raise ValueError("malformed trajectory CSV: ragged rows")
        t = data[:, 0]
        Ts = float(np.round(t[1] - t[0], 12))
        if not Ts > 0 or not np.allclose(np.diff(t), Ts, atol=1e-9):
            raise ValueError("trajectory CSV times must be uniformly spaced")
        return cls(states=data[:, 1:13 + npr], inputs=data[:-1, 13 + npr:], Ts=Ts, t0=float(t[0]))


def rollout(u, x0, params, Ts):
    """Integrate a (N, N_p) input sequence from x0; returns a Trajectory."""
    u = np.asarray(u, dtype=float)
    xs = np.empty((u.shape[0] + 1, params.n_states))
    xs[0] = x0
    for k in range(u.shape[0]):
        xs[k + 1] = step(xs[k], u[k], Ts, params)
    return Trajectory(xs, u, Ts)
