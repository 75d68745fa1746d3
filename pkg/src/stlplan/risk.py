"""Mission risk under an uncertain human pose.

Poses are drawn from a Gaussian, the planned trajectory is scored against
every realization with smooth robustness, and the sample set is summarized by
an empirical CDF with distribution-free (DKW) confidence bounds on VaR and
CVaR. VaR is reported on the robustness samples themselves; CVaR on the loss
Z' = 1 - robustness, so larger CVaR means worse tails.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import dynamics as dyn
from .mission import HumanPose, build_mission_formula, pad_states
from .stl import evaluate, required_horizon


class CovarianceError(ValueError):
    pass


class RiskError(ValueError):
    pass


# positional covariance sets used in the handover study (diagonal, no vertical spread)
POSITION_VARIANCE_SETS = {1: 0.125, 2: 0.25, 3: 0.5, 4: 0.75}
NOMINAL_ATTITUDE_MEAN = (0.07, 0.07, 0.09)
NOMINAL_ATTITUDE_VAR = (0.09, 0.09, 0.52)


def _psd_factor(cov, name):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (3, 3) or not np.all(np.isfinite(cov)):
        raise CovarianceError(f"{name} must be a finite 3x3 matrix")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise CovarianceError(f"{name} is not symmetric")
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        d = np.diag(cov)
        if np.any(d < 0):
            raise CovarianceError(f"{name} has a negative variance")
        return np.diag(np.sqrt(d))
    w, V = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol:
        raise CovarianceError(f"{name} is not positive semi-definite (eigenvalue {w[0]:.3g})")
    L = V * np.sqrt(np.clip(w, 0.0, None))
    # coordinates with zero variance stay exactly at the mean
    L[np.diag(cov) == 0.0, :] = 0.0
    return L


@dataclass(frozen=True)
class PoseDistribution:
    mean: np.ndarray
    cov: np.ndarray
    attitude_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude_var: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude_stochastic: bool = False

    def __post_init__(self):
        for name in ("mean", "cov", "attitude_mean", "attitude_var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.mean.shape != (3,) or self.attitude_mean.shape != (3,):
            raise CovarianceError("means must have 3 components")
        if self.attitude_var.shape != (3,) or np.any(self.attitude_var < 0):
            raise CovarianceError("attitude variances must be 3 non-negative values")
        object.__setattr__(self, "_factor", _psd_factor(self.cov, "position covariance"))

    @property
    def factor(self):
        return self._factor

    @classmethod
    def isotropic_xy(cls, variance, mean=(0.0, 0.0, 0.0), attitude_mean=(0.0, 0.0, 0.0), **kw):
        return cls(np.asarray(mean, dtype=float), np.diag([variance, variance, 0.0]),
                   np.asarray(attitude_mean, dtype=float), **kw)

    @classmethod
    def study_set(cls, i, mean=(0.0, 0.0, 0.0), attitude_mean=(0.0, 0.0, 0.0),
                  attitude_stochastic=False):
        """Position covariance set i in {1, 2, 3, 4}; attitude fixed unless requested."""
        if i not in POSITION_VARIANCE_SETS:
            raise KeyError(f"no covariance set {i}")
        var = np.asarray(NOMINAL_ATTITUDE_VAR) if attitude_stochastic else np.zeros(3)
        return cls(np.asarray(mean, dtype=float),
                   np.diag([POSITION_VARIANCE_SETS[i]] * 2 + [0.0]),
                   np.asarray(attitude_mean, dtype=float), var, attitude_stochastic)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(),
                "attitude_mean": self.attitude_mean.tolist(),
                "attitude_var": self.attitude_var.tolist(),
                "attitude_stochastic": self.attitude_stochastic}


@dataclass(frozen=True)
class RiskConfig:
    K: int = 15000
    delta: float = 0.01
    betas: tuple = (0.70, 0.80, 0.90)
    seed: int = 0
    lam: float = 10.0
    bins: int = 50
    chunk: int = 250       # realizations evaluated together

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise RiskError("K must be an integer >= 2")
        if not 0 < self.delta < 1:
            raise RiskError("delta must lie in (0, 1)")
        if not self.betas or any(not 0 < b < 1 for b in self.betas):
            raise RiskError("every beta must lie in (0, 1)")
        if self.lam <= 0 or self.bins < 1 or self.chunk < 1:
            raise RiskError("lambda, bins and chunk must be positive")


@dataclass
class RiskReport:
    samples: np.ndarray
    bin_edges: np.ndarray
    probabilities: np.ndarray
    offset: float
    rows: list                 # one dict per beta
    config: RiskConfig = None
    distribution: PoseDistribution = None
    nominal: float = float("nan")

    def to_dict(self):
        return {
            "K": int(self.samples.size), "delta": self.config.delta, "seed": self.config.seed,
            "lambda": self.config.lam, "offset": self.offset, "nominal_robustness": self.nominal,
            "distribution": self.distribution.to_dict() if self.distribution else None,
            "sample_min": float(self.samples.min()), "sample_max": float(self.samples.max()),
            "sample_mean": float(self.samples.mean()),
            "rows": [{k: _jsonable(v) for k, v in r.items()} for r in self.rows],
            "histogram": {"bin_edges": self.bin_edges.tolist(),
                          "probability": self.probabilities.tolist()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        head = f"{'beta':>6} {'VaR_lo':>11} {'VaR':>11} {'VaR_hi':>11} " \
               f"{'CVaR_lo':>11} {'CVaR':>11} {'CVaR_hi':>11}"
        lines = [f"K = {self.samples.size}, delta = {self.config.delta}, "
                 f"offset = {self.offset:.6f}", head]
        for r in self.rows:
            lines.append(f"{r['beta']:>6.2f} {r['var_lower']:>11.6f} {r['var']:>11.6f} "
                         f"{r['var_upper']:>11.6f} {r['cvar_lower']:>11.6f} {r['cvar']:>11.6f} "
                         f"{r['cvar_upper']:>11.6f}")
        flags = sorted({f for r in self.rows for f in r["flags"]})
        if flags:
            lines.append("flags: " + ", ".join(flags))
        return "\n".join(lines) + "\n"

    def histogram_csv(self):
        centers = 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])
        out = ["bin_center,probability"]
        out += [f"{c!r},{p!r}" for c, p in zip(centers.tolist(), self.probabilities.tolist())]
        return "\n".join(out) + "\n"


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def realization_rng(seed, index):
    # counter-based: each realization has its own stream, independent of evaluation order
    return np.random.default_rng([int(seed), int(index)])


def sample_human_pose(dist, index, seed):
    """Pose realization number `index` for root seed `seed`."""
    rng = realization_rng(seed, index)
    z = rng.standard_normal(3)
    pos = dist.mean + dist.factor @ z
    pos = np.where(np.all(dist.factor == 0.0, axis=1), dist.mean, pos)
    if dist.attitude_stochastic:
        att = dist.attitude_mean + np.sqrt(dist.attitude_var) * rng.standard_normal(3)
    else:
        att = dist.attitude_mean.copy()
    return HumanPose(pos, att)


def sample_poses(dist, K, seed, start=0):
    """Batched pose for realizations start .. start+K-1."""
    poses = [sample_human_pose(dist, i, seed) for i in range(start, start + K)]
    return HumanPose(np.stack([p.position for p in poses]), np.stack([p.attitude for p in poses]))


def _signal(traj, formula, Ts):
    return pad_states(np.asarray(traj.states, dtype=float), required_horizon(formula, Ts) + 1)


def robustness_under_realization(traj, sc, pose, lam=10.0, params=None):
    """Smooth robustness of traj with the human at `pose` (held for the whole mission).

    A batched pose returns one value per realization.
    """
    params = dyn.default_hexarotor() if params is None else params
    spec = build_mission_formula(sc, params, pose)
    X = _signal(traj, spec.formula, sc.Ts)
    r = evaluate(spec.formula, spec.table, X, sc.Ts, 0, 0, lam=lam)[..., 0]
    return float(r) if np.ndim(r) == 0 else np.asarray(r)


def empirical_cdf(samples, alpha):
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise RiskError("empty sample set")
    return float(np.count_nonzero(s <= alpha)) / s.size


def bound_offset(K, delta):
    return math.sqrt(math.log(2.0 / delta) / (2.0 * K))


def _check(samples):
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size < 2:
        raise RiskError("need at least two samples")
    if not np.all(np.isfinite(s)):
        raise RiskError("samples must be finite")
    return s


def _infimum(s, cdf, shift, beta):
    # inf{alpha in samples : F(alpha) + shift >= beta}, compared literally
    ok = np.nonzero(cdf + shift >= beta)[0]
    return float(s[ok[0]]) if ok.size else math.inf


def var_bounds(samples, beta, delta):
    """(lower, upper, point) for VaR_beta; unreachable bounds come back as -inf / +inf."""
    s = _check(samples)
    K = s.size
    cdf = np.searchsorted(s, s, side="right") / K
    eps = bound_offset(K, delta)
    point = _infimum(s, cdf, 0.0, beta)
    lower = _infimum(s, cdf, eps, beta) if beta - eps > 0 else -math.inf
    upper = _infimum(s, cdf, -eps, beta) if beta + eps < 1 else math.inf
    return lower, upper, point


def _quantile_integral(s, a, b):
    """Integral over [a, b] of the empirical quantile function Q(u) = s[ceil(uK) - 1]."""
    K = s.size
    lo = np.arange(K) / K
    hi = np.arange(1, K + 1) / K
    width = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    return float(np.sum(width * s))


def _cvar_shifted(s, beta, shift):
    # tail mean of the quantile function shifted by `shift` in probability
    a = beta + shift
    if a < 0:
        return -math.inf, False
    if a >= 1:
        return float(s[-1]), True
    total = _quantile_integral(s, a, min(1.0, 1.0 + shift))
    if shift > 0:
        total += shift * s[-1]     # Q(u + shift) past u = 1 - shift is capped at the maximum
    return total / (1.0 - beta), shift > 0


def cvar_estimate(samples, beta, delta, return_flags=False):
    """(lower, upper, point) for CVaR_beta of a loss sample set.

    Point estimate: VaR + E[(Z - VaR)+] / (1 - beta), i.e. the mean of the
    worst (1 - beta) fraction of the empirical distribution. Bounds integrate
    the quantile function shifted by the DKW offset.
    """
    s = _check(samples)
    eps = bound_offset(s.size, delta)
    flags = []
    var = _infimum(s, np.searchsorted(s, s, side="right") / s.size, 0.0, beta)
    point = var + float(np.sum(np.clip(s - var, 0.0, None))) / (s.size * (1.0 - beta))
    lower, _ = _cvar_shifted(s, beta, -eps)
    upper, capped = _cvar_shifted(s, beta, eps)
    if math.isinf(lower):
        flags.append("lower CVaR bound unbounded")
    if capped:
        flags.append("upper CVaR bound capped at sample maximum")
    lower = min(lower, point)
    upper = max(upper, point)
    return (lower, upper, point, flags) if return_flags else (lower, upper, point)


def histogram(samples, bins=50):
    s = np.asarray(samples, dtype=float)
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(s, bins=bins, range=(lo, hi))
    return edges, counts / s.size


def risk_samples(traj, sc, dist, cfg, params=None):
    """Smooth robustness for realizations 0..K-1, evaluated in chunks of poses."""
    params = dyn.default_hexarotor() if params is None else params
    out = np.empty(cfg.K)
    for start in range(0, cfg.K, cfg.chunk):
        n = min(cfg.chunk, cfg.K - start)
        pose = sample_poses(dist, n, cfg.seed, start)
        out[start:start + n] = robustness_under_realization(traj, sc, pose, cfg.lam, params)
    return out


def summarize(samples, cfg, dist=None, nominal=float("nan")):
    s = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(s)):
        raise RiskError("non-finite robustness sample")
    edges, probs = histogram(s, cfg.bins)
    loss = 1.0 - s
    rows = []
    for b in cfg.betas:
        vl, vu, vp = var_bounds(s, b, cfg.delta)
        cl, cu, cp, flags = cvar_estimate(loss, b, cfg.delta, return_flags=True)
        if math.isinf(vl) or math.isinf(vu):
            flags = flags + ["VaR bound outside the adjustable range"]
        rows.append({"beta": float(b), "var_lower": vl, "var": vp, "var_upper": vu,
                     "cvar_lower": cl, "cvar": cp, "cvar_upper": cu, "flags": flags})
    return RiskReport(s, edges, probs, bound_offset(s.size, cfg.delta), rows, cfg, dist, nominal)


def run_risk_analysis(traj, sc, dist, cfg=None, params=None):
    cfg = RiskConfig() if cfg is None else cfg
    params = dyn.default_hexarotor() if params is None else params
    samples = risk_samples(traj, sc, dist, cfg, params)
    nominal = robustness_under_realization(traj, sc, sc.pose, cfg.lam, params)
    return summarize(samples, cfg, dist, nominal)
