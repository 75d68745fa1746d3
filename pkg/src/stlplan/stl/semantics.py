"""Exact and smooth robustness over sampled signals.

Evaluation is vectorized: each node returns its robustness over a whole
range of anchor indices at once, and temporal nodes gather the windows they
need from their children. The same code runs on numpy and jax arrays, which
is what lets the planner differentiate smooth robustness.
"""
import numpy as np

from .._backend import namespace, cummin, cumlogsumexp
from .formula import (And, Always, Eventually, HorizonError, Next, Not, Or, Pred,
                      StlError, TrueF, Until, next_offset, window_offsets)

# finite stand-in for the robustness of `true`; keeps smooth operators and
# gradients finite while dominating any physical margin
TOP = 1e9


def _check_values(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise StlError("smooth min/max of an empty set")
    if not np.all(np.isfinite(v)):
        raise StlError("smooth min/max needs finite values")
    return v.ravel()


def smooth_min(values, lam):
    """-(1/lam) log sum exp(-lam*v), shifted by the minimum to avoid overflow."""
    if not lam > 0:
        raise StlError("lambda must be positive")
    return float(_smin(_check_values(values), lam, np))


def smooth_max(values, lam):
    """Softmax-weighted mean sum(v e^{lam v}) / sum(e^{lam v}), shifted by the maximum."""
    if not lam > 0:
        raise StlError("lambda must be positive")
    return float(_smax(_check_values(values), lam, np))


def _smin(a, lam, xp):
    m = xp.min(a, axis=-1, keepdims=True)
    s = xp.sum(xp.exp(-lam * (a - m)), axis=-1)
    return m[..., 0] - xp.log(s) / lam


def _smax(a, lam, xp):
    m = xp.max(a, axis=-1, keepdims=True)
    w = xp.exp(lam * (a - m))
    return xp.sum(a * w, axis=-1) / xp.sum(w, axis=-1)


def _stack(vals, xp):
    if len(vals) == 1:
        return vals[0][..., None]
    return xp.stack(xp.broadcast_arrays(*vals), axis=-1)


class _Evaluator:
    def __init__(self, table, X, Ts, lam=None):
        self.table = table
        self.X = X
        self.Ts = Ts
        self.n = X.shape[0]
        self.lam = lam
        self.xp = namespace(X)

    # reductions along the last axis
    def vmin(self, a):
        return self.xp.min(a, axis=-1) if self.lam is None else _smin(a, self.lam, self.xp)

    def vmax(self, a):
        return self.xp.max(a, axis=-1) if self.lam is None else _smax(a, self.lam, self.xp)

    def windows(self, lo, hi, a, b):
        # index matrix: row r holds child positions of the window anchored at lo+r,
        # relative to a child array that starts at lo+a
        return np.arange(hi - lo + 1)[:, None] + np.arange(b - a + 1)[None, :]

    def ev(self, f, lo, hi):
        """Robustness of f anchored at each of lo..hi (inclusive)."""
        xp = self.xp
        if hi > self.n - 1:
            raise HorizonError(f"evaluation needs sample {hi}, signal ends at {self.n - 1}")
        if isinstance(f, Pred):
            idx = np.arange(lo, hi + 1)
            return self.table[f.id].fn(self.X, idx)
        if isinstance(f, TrueF):
            return xp.full(hi - lo + 1, TOP)
        if isinstance(f, Not):
            return -self.ev(f.child, lo, hi)
        if isinstance(f, And):
            return self.vmin(_stack([self.ev(c, lo, hi) for c in f.children], xp))
        if isinstance(f, Or):
            return self.vmax(_stack([self.ev(c, lo, hi) for c in f.children], xp))
        if isinstance(f, (Always, Eventually)):
            a, b = window_offsets(f.interval, self.Ts)
            c = self.ev(f.child, lo + a, hi + b)
            w = c[..., self.windows(lo, hi, a, b)]
            return self.vmin(w) if isinstance(f, Always) else self.vmax(w)
        if isinstance(f, Next):
            a = next_offset(f.interval, self.Ts)
            return self.ev(f.child, lo + a, hi + a)
        if isinstance(f, Until):
            return self.until(f, lo, hi)
        raise StlError(f"unknown formula node {type(f).__name__}")

    def until(self, f, lo, hi):
        xp = self.xp
        a, b = window_offsets(f.interval, self.Ts)
        right = self.ev(f.right, lo + a, hi + b)[..., self.windows(lo, hi, a, b)]
        # left over k..k+b for every anchor k, then a running min along the window
        left = self.ev(f.left, lo, hi + b)[..., self.windows(lo, hi, 0, b)]
        if self.lam is None:
            run = cummin(left, xp)
        else:
            run = -cumlogsumexp(-self.lam * left, xp) / self.lam
        run = run[..., a:]
        inner = _stack([right, run], xp)
        return self.vmax(self.vmin(inner))


def evaluate(f, table, X, Ts, lo, hi, lam=None):
    """Robustness array over anchors lo..hi; exact when lam is None, smooth otherwise."""
    table.check(f)
    return _Evaluator(table, X, Ts, lam).ev(f, lo, hi)


def robustness(f, s, k=0, table=None):
    """Exact robustness of f on signal s anchored at sample k."""
    if table is None:
        raise StlError("a predicate table is required")
    if k < 0:
        raise StlError("sample index must be >= 0")
    v = evaluate(f, table, s.samples, s.Ts, k, k)
    return v[..., 0] if np.ndim(v) > 1 else float(v[0])


def smooth_robustness(f, s, k=0, lam=10.0, table=None):
    """Smooth robustness: every min/max node, temporal ones included, smoothed with lam."""
    if table is None:
        raise StlError("a predicate table is required")
    if not lam > 0:
        raise StlError("lambda must be positive")
    if k < 0:
        raise StlError("sample index must be >= 0")
    v = evaluate(f, table, s.samples, s.Ts, k, k, lam=lam)
    if namespace(v) is not np:
        return v[..., 0]
    return v[..., 0] if np.ndim(v) > 1 else float(v[0])


def satisfied(f, s, k=0, table=None):
    return robustness(f, s, k, table) > 0


def argument_count(f, Ts):
    """Total number of arguments fed to min/max operators when f is evaluated once.

    Counts every node evaluation that the recursion performs, so nested
    temporal operators multiply. This is the A in the ln(A)/lam soundness margin.
    """
    return _count(f, Ts)


def _count(f, Ts):
    if isinstance(f, (Pred, TrueF)):
        return 0
    if isinstance(f, Not):
        return _count(f.child, Ts)
    if isinstance(f, (And, Or)):
        sub = [_count(c, Ts) for c in f.children]
        return sum(sub) + len(f.children)
    if isinstance(f, (Always, Eventually)):
        a, b = window_offsets(f.interval, Ts)
        w = b - a + 1
        return w * _count(f.child, Ts) + w
    if isinstance(f, Next):
        return _count(f.child, Ts)
    if isinstance(f, Until):
        a, b = window_offsets(f.interval, Ts)
        nl = _count(f.left, Ts)
        nr = _count(f.right, Ts)
        # b-a+1 candidates for the max; candidate j is a min over the right value
        # and the j+1 left values k..k+j (nested log-sum-exp mins flatten)
        args = (b - a + 1) + sum(j + 2 for j in range(a, b + 1))
        return args + (b - a + 1) * nr + (b + 1) * nl
    raise StlError(f"unknown formula node {type(f).__name__}")
