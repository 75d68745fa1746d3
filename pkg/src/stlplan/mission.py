"""Human-robot handover mission: scenario geometry, predicates and the mission formula.

Regions tied to the operator (visibility, preference, behind, handover) are
stored in a human-centric frame. A world point p maps into it by subtracting
the human position and rotating by minus the human yaw, so the boxes stay
axis-aligned whatever way the operator faces.

Every predicate group is split into scalar face margins (a box becomes six
half-space predicates) so the smooth semantics see the same min/max structure
as the exact one.
"""
from dataclasses import dataclass, field, replace
import importlib.resources
import json

import numpy as np

from ._backend import namespace, cummax_int
from .stl import (Always, And, Eventually, Interval, Next, Not, Or, Pred, PredicateTable,
                  Signal, Until, evaluate, required_horizon, robustness, smooth_robustness,
                  window_offsets)

FACES = ("x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi")
GROUPS = ("ws", "obs", "beh", "vr", "pr", "vel", "pro", "vis", "ho")
MIN_DISPLACEMENT = 1e-6


class ScenarioError(ValueError):
    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass(frozen=True)
class AxisAlignedBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(3)
        hi = np.asarray(self.upper, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise ValueError(f"box lower {lo.tolist()} must be below upper {hi.tolist()}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self):
        return 0.5 * (self.upper - self.lower)

    def shifted(self, d):
        return AxisAlignedBox(self.lower + d, self.upper + d)

    @classmethod
    def around(cls, center, half_width):
        c = np.asarray(center, dtype=float)
        return cls(c - half_width, c + half_width)


def face_margins(p, box):
    """(..., 6) margins p - lower and upper - p per axis, ordered as FACES."""
    xp = namespace(p)
    lo = p - box.lower
    hi = box.upper - p
    return xp.stack([lo[..., 0], hi[..., 0], lo[..., 1], hi[..., 1], lo[..., 2], hi[..., 2]],
                    axis=-1)


def box_membership_robustness(p, box):
    """Min face margin: positive inside the box, negative outside."""
    xp = namespace(p)
    if xp is np:
        p = np.asarray(p, dtype=float)
    return xp.min(face_margins(p, box), axis=-1)


def box_avoidance_robustness(p, box):
    return -box_membership_robustness(p, box)


def _safe_norm(v):
    xp = namespace(v)
    s = xp.sum(v * v, axis=-1)
    if xp is np:
        return np.sqrt(s)
    # keep the derivative finite at v = 0
    pos = s > 0
    return xp.where(pos, xp.sqrt(xp.where(pos, s, 1.0)), 0.0)


def speed_band_robustness(v, lo, hi):
    n = _safe_norm(v)
    xp = namespace(n)
    return xp.minimum(n - lo, hi - n)


def propeller_band_robustness(Omega, lo, hi):
    xp = namespace(Omega)
    return xp.min(xp.minimum(Omega - lo, hi - Omega), axis=-1)


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    xp = namespace(a)
    return np.pi - xp.mod(np.pi - a, 2 * np.pi)


def heading_alignment_robustness(p_k, p_prev, psi_k, gamma, psi_fallback=0.0):
    d = np.asarray(p_k, dtype=float) - np.asarray(p_prev, dtype=float)
    # the heading only depends on the horizontal displacement
    if np.hypot(d[0], d[1]) < MIN_DISPLACEMENT:
        psi_vis = psi_fallback
    else:
        psi_vis = np.arctan2(d[1], d[0])
    return gamma - abs(float(wrap_angle(psi_k - psi_vis)))


@dataclass(frozen=True)
class HumanPose:
    position: np.ndarray                     # (3,) or (B, 3)
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))  # (3,) or (B, 3) rad

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "attitude", np.asarray(self.attitude, dtype=float))

    @property
    def batched(self):
        return self.position.ndim == 2

    @property
    def yaw(self):
        return self.attitude[..., 2]


def to_human_frame(p, pose):
    """Map world points p (n, 3) into the human frame; (B, n, 3) for a batched pose."""
    xp = namespace(p)
    ph, yaw = pose.position, pose.yaw
    if pose.batched:
        ph = ph[:, None, :]
        yaw = yaw[:, None]
    d = p - ph
    c, s = np.cos(yaw), np.sin(yaw)
    x = c * d[..., 0] + s * d[..., 1]
    y = -s * d[..., 0] + c * d[..., 1]
    return xp.stack([x, y, d[..., 2]], axis=-1)


@dataclass(frozen=True)
class Scenario:
    workspace: AxisAlignedBox
    obstacles: tuple
    behind: AxisAlignedBox
    visibility_region: AxisAlignedBox
    preference_regions: tuple
    handover: AxisAlignedBox
    human_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    human_attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    T_N: float = 17.0
    T_vr: float = 5.0
    Ts: float = 0.1
    vel_min: float = 0.0
    vel_max: float = 0.4
    pro_min: float = 40.0 ** 2      # squared propeller speed, Hz^2
    pro_max: float = 80.0 ** 2
    gamma: float = np.deg2rad(30.0)
    p0: np.ndarray = field(default_factory=lambda: np.array([-1.8, 0.0, 1.0]))
    eta0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = ""

    def __post_init__(self):
        for k in ("human_position", "human_attitude", "p0", "eta0"):
            object.__setattr__(self, k, np.asarray(getattr(self, k), dtype=float).reshape(3))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "preference_regions", tuple(self.preference_regions))
        validate_scenario(self)

    @property
    def pose(self):
        return HumanPose(self.human_position, self.human_attitude)

    @property
    def N(self):
        n = self.T_N / self.Ts
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ScenarioError("timing.T_N", f"T_N={self.T_N} is not a multiple of T_s={self.Ts}")
        return int(round(n))

    def with_horizon(self, N):
        """Same scenario rescaled in time to N samples (T_vr scaled proportionally)."""
        T_N = N * self.Ts
        return replace(self, T_N=T_N, T_vr=self.T_vr * T_N / self.T_N)


def _world_box_corners(box, pose):
    c = np.array(np.meshgrid(*zip(box.lower, box.upper), indexing="ij")).reshape(3, -1).T
    yaw = float(pose.yaw)
    R = np.array([[np.cos(yaw), -np.sin(yaw), 0], [np.sin(yaw), np.cos(yaw), 0], [0, 0, 1]])
    return c @ R.T + pose.position


def validate_scenario(sc):
    if not 0 < sc.T_vr < sc.T_N:
        raise ScenarioError("timing", f"need 0 < T_vr < T_N, got T_vr={sc.T_vr}, T_N={sc.T_N}")
    if not sc.Ts > 0:
        raise ScenarioError("timing.T_s", "sampling period must be positive")
    if not 0 <= sc.vel_min < sc.vel_max:
        raise ScenarioError("comfort", "need 0 <= vel_min < vel_max")
    if not 0 <= sc.pro_min < sc.pro_max:
        raise ScenarioError("comfort", "need 0 <= prop_min_hz < prop_max_hz")
    if not 0 < sc.gamma <= np.pi:
        raise ScenarioError("comfort.gamma_deg", "gamma must lie in (0, 180] degrees")
    if len(sc.preference_regions) < 1:
        raise ScenarioError("preference_regions", "at least one region is required")
    for key in ("handover", "visibility_region"):
        corners = _world_box_corners(getattr(sc, key), sc.pose)
        ws = sc.workspace
        if np.any(corners < ws.lower - 1e-9) or np.any(corners > ws.upper + 1e-9):
            raise ScenarioError(key, "box must lie inside the workspace")


# --- scenario documents -----------------------------------------------------------

def _box_doc(b):
    return {"lower": [float(a) for a in b.lower], "upper": [float(a) for a in b.upper]}


def _vec(doc, path, n=3):
    try:
        v = [float(a) for a in doc]
    except (TypeError, ValueError):
        raise ScenarioError(path, f"expected a list of {n} numbers") from None
    if len(v) != n:
        raise ScenarioError(path, f"expected {n} numbers, got {len(v)}")
    return np.array(v)


def _box(doc, path):
    if not isinstance(doc, dict):
        raise ScenarioError(path, "expected an object with 'lower' and 'upper'")
    for k in ("lower", "upper"):
        if k not in doc:
            raise ScenarioError(f"{path}.{k}", "missing field")
    lo, hi = _vec(doc["lower"], f"{path}.lower"), _vec(doc["upper"], f"{path}.upper")
    if not np.all(lo < hi):
        raise ScenarioError(path, "lower must be below upper in every coordinate")
    return AxisAlignedBox(lo, hi)


def _num(doc, key, path, default):
    if key not in doc:
        return default
    try:
        return float(doc[key])
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}", "expected a number") from None


def _section(doc, key):
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ScenarioError(key, "expected an object")
    return sec


def load_scenario(doc):
    """Build a Scenario from a JSON document (dict, JSON text or file path)."""
    if isinstance(doc, str):
        if doc.lstrip().startswith("{"):
            doc = json.loads(doc)
        else:
            with open(doc, encoding="utf-8") as fh:
                doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "expected a JSON object")
    for key in ("workspace", "behind", "visibility_region", "preference_regions", "handover"):
        if key not in doc:
            raise ScenarioError(key, "missing required field")
    obstacles = doc.get("obstacles", [])
    prefs = doc["preference_regions"]
    if not isinstance(obstacles, list):
        raise ScenarioError("obstacles", "expected a list of boxes")
    if not isinstance(prefs, list) or not prefs:
        raise ScenarioError("preference_regions", "expected a non-empty list of boxes")
    human, timing = _section(doc, "human"), _section(doc, "timing")
    comfort, mrav = _section(doc, "comfort"), _section(doc, "mrav")
    try:
        return Scenario(
            workspace=_box(doc["workspace"], "workspace"),
            obstacles=tuple(_box(b, f"obstacles[{i}]") for i, b in enumerate(obstacles)),
            behind=_box(doc["behind"], "behind"),
            visibility_region=_box(doc["visibility_region"], "visibility_region"),
            preference_regions=tuple(_box(b, f"preference_regions[{i}]")
                                     for i, b in enumerate(prefs)),
            handover=_box(doc["handover"], "handover"),
            human_position=_vec(human.get("position", [0, 0, 0]), "human.position"),
            human_attitude=np.deg2rad(_vec(human.get("attitude_deg", [0, 0, 0]),
                                           "human.attitude_deg")),
            T_N=_num(timing, "T_N", "timing", 17.0),
            T_vr=_num(timing, "T_vr", "timing", 5.0),
            Ts=_num(timing, "T_s", "timing", 0.1),
            vel_min=_num(comfort, "vel_min", "comfort", 0.0),
            vel_max=_num(comfort, "vel_max", "comfort", 0.4),
            pro_min=_num(comfort, "prop_min_hz", "comfort", 40.0) ** 2,
            pro_max=_num(comfort, "prop_max_hz", "comfort", 80.0) ** 2,
            gamma=np.deg2rad(_num(comfort, "gamma_deg", "comfort", 30.0)),
            p0=_vec(mrav.get("p0", [-1.8, 0.0, 1.0]), "mrav.p0"),
            eta0=np.deg2rad(_vec(mrav.get("eta0_deg", [0, 0, 0]), "mrav.eta0_deg")),
            name=str(doc.get("name", "")),
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError("<root>", str(e)) from None


def save_scenario(sc):
    """Scenario as a JSON-ready dict; load_scenario(save_scenario(sc)) == sc."""
    doc = {}
    if sc.name:
        doc["name"] = sc.name
    doc.update({
        "workspace": _box_doc(sc.workspace),
        "obstacles": [_box_doc(b) for b in sc.obstacles],
        "behind": _box_doc(sc.behind),
        "visibility_region": _box_doc(sc.visibility_region),
        "preference_regions": [_box_doc(b) for b in sc.preference_regions],
        "handover": _box_doc(sc.handover),
        "human": {"position": sc.human_position.tolist(),
                  "attitude_deg": np.rad2deg(sc.human_attitude).tolist()},
        "timing": {"T_N": sc.T_N, "T_vr": sc.T_vr, "T_s": sc.Ts},
        "comfort": {"vel_min": sc.vel_min, "vel_max": sc.vel_max,
                    "prop_min_hz": float(np.sqrt(sc.pro_min)),
                    "prop_max_hz": float(np.sqrt(sc.pro_max)),
                    "gamma_deg": float(np.rad2deg(sc.gamma))},
        "mrav": {"p0": sc.p0.tolist(), "eta0_deg": np.rad2deg(sc.eta0).tolist()},
    })
    return doc


def scenarios_equal(a, b, tol=1e-12):
    da, db = save_scenario(a), save_scenario(b)
    return np.allclose(_flatten(da), _flatten(db), atol=tol, rtol=0) and \
        json.dumps(_shape(da)) == json.dumps(_shape(db))


def _flatten(doc):
    if isinstance(doc, dict):
        return [x for k in sorted(doc) if k != "name" for x in _flatten(doc[k])]
    if isinstance(doc, list):
        return [x for d in doc for x in _flatten(d)]
    return [float(doc)]


def _shape(doc):
    if isinstance(doc, dict):
        return {k: _shape(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_shape(v) for v in doc]
    return "n"


def bundled_scenario_names():
    root = importlib.resources.files("stlplan") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled(name="default"):
    root = importlib.resources.files("stlplan") / "scenarios"
    return load_scenario(json.loads((root / f"{name}.json").read_text(encoding="utf-8")))


# --- predicates ---------------------------------------------------------------------

def _positions(X, idx):
    return X[idx, 0:3]


def _box_face_fn(box, j, sign, pose=None):
    # sign=+1: inside margin of face j; sign=-1: outside margin
    def fn(X, idx):
        p = _positions(X, idx)
        if pose is not None:
            p = to_human_frame(p, pose)
        a = j // 2
        m = p[..., a] - box.lower[a] if j % 2 == 0 else box.upper[a] - p[..., a]
        return sign * m
    return fn


def _heading_table(X, yaw0):
    # psi_vis for every sample, reusing the last valid value over tiny displacements
    xp = namespace(X)
    d = X[1:, 0:2] - X[:-1, 0:2]
    valid = xp.sum(d * d, axis=-1) >= MIN_DISPLACEMENT ** 2
    dx = xp.where(valid, d[:, 0], 1.0)
    dy = xp.where(valid, d[:, 1], 0.0)
    raw = xp.concatenate([xp.full(1, yaw0), xp.arctan2(dy, dx)])
    ok = xp.concatenate([xp.ones(1, dtype=bool), valid])
    last = cummax_int(xp.where(ok, xp.arange(X.shape[0]), 0), xp)
    return raw[last]


def _vis_fn(gamma, yaw0, sign):
    def fn(X, idx):
        psi_vis = _heading_table(X, yaw0)[idx]
        e = wrap_angle(X[idx, 5] - psi_vis)
        return gamma + sign * e
    return fn


def _vel_fn(lo, hi, which):
    def fn(X, idx):
        n = _safe_norm(X[idx, 6:9])
        return n - lo if which == "lo" else hi - n
    return fn


def _pro_fn(q, c_xi, lo, hi, which):
    def fn(X, idx):
        om = X[idx, 12 + q] / c_xi
        return om - lo if which == "lo" else hi - om
    return fn


@dataclass
class MissionSpec:
    formula: object
    table: PredicateTable
    groups: dict            # group name -> sub-formula over which the group is reported
    scenario: Scenario
    pose: HumanPose

    def signal(self, traj):
        return mission_signal(traj, self.scenario, self.formula)


def build_table(sc, params, pose=None):
    """Predicate table for the scenario; pose overrides the nominal human pose."""
    pose = sc.pose if pose is None else pose
    t = PredicateTable()
    for j, f in enumerate(FACES):
        t.register(f"ws.{f}", _box_face_fn(sc.workspace, j, 1), f"workspace {f}", "ws")
    for i, ob in enumerate(sc.obstacles):
        for j, f in enumerate(FACES):
            t.register(f"obs{i + 1}.{f}", _box_face_fn(ob, j, -1),
                       f"outside obstacle {i + 1} past {f}", "obs")
    for j, f in enumerate(FACES):
        t.register(f"beh.{f}", _box_face_fn(sc.behind, j, -1, pose), f"outside behind {f}", "beh")
    for j, f in enumerate(FACES):
        t.register(f"vr.{f}", _box_face_fn(sc.visibility_region, j, 1, pose),
                   f"visibility {f}", "vr")
    for i, b in enumerate(sc.preference_regions):
        for j, f in enumerate(FACES):
            t.register(f"pr{i + 1}.{f}", _box_face_fn(b, j, 1, pose),
                       f"preference {i + 1} {f}", "pr")
    t.register("vel.lo", _vel_fn(sc.vel_min, sc.vel_max, "lo"), "speed above minimum", "vel")
    t.register("vel.hi", _vel_fn(sc.vel_min, sc.vel_max, "hi"), "speed below maximum", "vel")
    for q in range(params.n_rotors):
        for w in ("lo", "hi"):
            t.register(f"pro{q + 1}.{w}",
                       _pro_fn(q, float(params.c_xi[q]), sc.pro_min, sc.pro_max, w),
                       f"rotor {q + 1} squared speed {w}", "pro")
    t.register("vis.lo", _vis_fn(sc.gamma, float(sc.eta0[2]), 1.0), "heading error above -gamma", "vis")
    t.register("vis.hi", _vis_fn(sc.gamma, float(sc.eta0[2]), -1.0), "heading error below gamma", "vis")
    for j, f in enumerate(FACES):
        t.register(f"ho.{f}", _box_face_fn(sc.handover, j, 1, pose), f"handover {f}", "ho")
    return t


def _and_of(ids):
    ps = [Pred(i) for i in ids]
    return ps[0] if len(ps) == 1 else And(tuple(ps))


def _or_of(ids):
    ps = [Pred(i) for i in ids]
    return ps[0] if len(ps) == 1 else Or(tuple(ps))


def group_formulas(sc, params):
    """Instantaneous formula of each predicate group."""
    g = {}
    g["ws"] = _and_of([f"ws.{f}" for f in FACES])
    obs = [_or_of([f"obs{i + 1}.{f}" for f in FACES]) for i in range(len(sc.obstacles))]
    g["obs"] = None if not obs else (obs[0] if len(obs) == 1 else And(tuple(obs)))
    g["beh"] = _or_of([f"beh.{f}" for f in FACES])
    g["vr"] = _and_of([f"vr.{f}" for f in FACES])
    g["pr"] = _and_of([f"pr{i + 1}.{f}" for i in range(len(sc.preference_regions))
                       for f in FACES])
    g["vel"] = _and_of(["vel.lo", "vel.hi"])
    g["pro"] = _and_of([f"pro{q + 1}.{w}" for q in range(params.n_rotors) for w in ("lo", "hi")])
    g["vis"] = _and_of(["vis.lo", "vis.hi"])
    g["ho"] = _and_of([f"ho.{f}" for f in FACES])
    return g


def build_mission_formula(sc, params=None, pose=None):
    """Mission formula and its predicate table.

        G[0,T_N](ws & obs & beh)
        & ( (F[0,T_N-T_vr] G[0,T_vr] vr)
            U[0,T_N-T_vr] ( (pr & vel & pro & vis) & G[Ts,T_N-T_vr-Ts](ho -> X ho) ) )

    The unit offsets of the handover window are read as one sample period.
    """
    from .dynamics import default_hexarotor
    params = default_hexarotor() if params is None else params
    validate_scenario(sc)
    g = group_formulas(sc, params)
    Ts = sc.Ts
    span = sc.T_N - sc.T_vr
    safety_parts = [g["ws"]] + ([g["obs"]] if g["obs"] is not None else []) + [g["beh"]]
    safety = Always(Interval(0, sc.T_N), And(tuple(safety_parts)))
    dwell = Eventually(Interval(0, span), Always(Interval(0, sc.T_vr), g["vr"]))
    hold = Always(Interval(Ts, span - Ts), Or((Not(g["ho"]), Next(Interval(0, Ts), g["ho"]))))
    arrive = And((And((g["pr"], g["vel"], g["pro"], g["vis"])), hold))
    formula = And((safety, Until(Interval(0, span), dwell, arrive)))
    table = build_table(sc, params, pose)
    groups = {"ws": Always(Interval(0, sc.T_N), g["ws"]),
              "beh": Always(Interval(0, sc.T_N), g["beh"]),
              "vr": dwell, "pr": g["pr"], "vel": g["vel"], "pro": g["pro"], "vis": g["vis"],
              "ho": hold}
    if g["obs"] is not None:
        groups["obs"] = Always(Interval(0, sc.T_N), g["obs"])
    groups = {k: groups[k] for k in GROUPS if k in groups}
    return MissionSpec(formula, table, groups, sc, sc.pose if pose is None else pose)


def pad_states(states, n_total):
    """Repeat the final state so the array has n_total rows (vehicle holds its final pose)."""
    xp = namespace(states)
    extra = n_total - states.shape[0]
    if extra <= 0:
        return states
    return xp.concatenate([states, xp.repeat(states[-1:], extra, axis=0)], axis=0)


def mission_signal(traj, sc, formula):
    n_total = required_horizon(formula, sc.Ts) + 1
    return Signal(pad_states(np.asarray(traj.states), n_total), traj.Ts)


_INSTANT = ("pr", "vel", "pro", "vis")


def group_breakdown(traj, spec, lam=10.0):
    """Exact and smooth robustness of every predicate group at t = 0.

    Groups that the mission asserts at a single arrival instant are reported
    as their best value over the arrival window.
    """
    sig = spec.signal(traj)
    sc = spec.scenario
    out = {}
    for name, f in spec.groups.items():
        if name in _INSTANT:
            f = Eventually(Interval(0, sc.T_N - sc.T_vr), f)
        out[name] = {"exact": float(robustness(f, sig, 0, spec.table)),
                     "smooth": float(smooth_robustness(f, sig, 0, lam, spec.table))}
    return out


def arrival_index(traj, spec):
    """Sample at which the exact semantics place the handover arrival.

    This is the witness of the Until: the first j in its window maximizing
    min(arrive(j), min over i <= j of dwell(i)). Comfort limits apply from
    here to the end of the mission (the approach window).
    """
    until = spec.formula.children[1]
    sig = spec.signal(traj)
    a, b = window_offsets(until.interval, sig.Ts)
    right = evaluate(until.right, spec.table, sig.samples, sig.Ts, 0, b)
    left = np.minimum.accumulate(evaluate(until.left, spec.table, sig.samples, sig.Ts, 0, b))
    score = np.minimum(right, left)[a:]
    return a + int(np.argmax(score))
