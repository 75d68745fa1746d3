"""Reference implementations used as test oracles.

The robustness evaluator here is a plain recursion over one anchor sample at
a time. Time windows are found by scanning sample times, not by the index
arithmetic of the library, and soft min/max go through scipy.
"""
import math

import numpy as np
from scipy.special import logsumexp, softmax

from stlplan.stl import (TOP, Always, And, Eventually, Interval, Next, Not, Or, Pred,
                         PredicateTable, TrueF, Until)

_EPS = 1e-9


def window(iv, Ts, k, n):
    """Sample indices j >= k whose time offset lies in [lo, hi]."""
    out = []
    j = k
    while (j - k) * Ts <= iv.hi + _EPS:
        if (j - k) * Ts >= iv.lo - _EPS:
            if j >= n:
                raise IndexError(f"window needs sample {j}, signal has {n}")
            out.append(j)
        j += 1
    return out


def _soft_min(vals, lam):
    v = np.asarray(vals, dtype=float)
    return float(-logsumexp(-lam * v) / lam)


def _soft_max(vals, lam):
    v = np.asarray(vals, dtype=float)
    return float(np.dot(softmax(lam * v), v))


def rho(f, X, Ts, table, k, lam=None):
    """Robustness of f at anchor k; exact when lam is None."""
    n = X.shape[0]
    mn = min if lam is None else (lambda vs: _soft_min(vs, lam))
    mx = max if lam is None else (lambda vs: _soft_max(vs, lam))

    def r(g, i):
        if isinstance(g, TrueF):
            return TOP
        if isinstance(g, Pred):
            if i >= n:
                raise IndexError(i)
            return float(table[g.id].fn(X, np.array([i]))[0])
        if isinstance(g, Not):
            return -r(g.child, i)
        if isinstance(g, And):
            return mn([r(c, i) for c in g.children])
        if isinstance(g, Or):
            return mx([r(c, i) for c in g.children])
        if isinstance(g, Always):
            return mn([r(g.child, j) for j in window(g.interval, Ts, i, n)])
        if isinstance(g, Eventually):
            return mx([r(g.child, j) for j in window(g.interval, Ts, i, n)])
        if isinstance(g, Next):
            js = [j for j in window(g.interval, Ts, i, n + 10**6) if j > i]
            if not js:
                raise ValueError("empty next window")
            if js[0] >= n:
                raise IndexError(js[0])
            return r(g.child, js[0])
        if isinstance(g, Until):
            cands = []
            for j in window(g.interval, Ts, i, n):
                lefts = [r(g.left, m) for m in range(i, j + 1)]
                if lam is None:
                    cands.append(min(r(g.right, j), min(lefts)))
                else:
                    # nested soft minima flatten into one log-sum-exp
                    cands.append(_soft_min([r(g.right, j)] + lefts, lam))
            return mx(cands)
        raise TypeError(type(g))

    return r(f, k)


def horizon(f, Ts):
    """Samples after the anchor that f reads, by brute force over window scans."""
    if isinstance(f, (TrueF, Pred)):
        return 0
    if isinstance(f, Not):
        return horizon(f.child, Ts)
    if isinstance(f, (And, Or)):
        return max(horizon(c, Ts) for c in f.children)
    if isinstance(f, Until):
        last = window(f.interval, Ts, 0, 10**6)[-1]
        return last + max(horizon(f.left, Ts), horizon(f.right, Ts))
    if isinstance(f, Next):
        js = [j for j in window(f.interval, Ts, 0, 10**6) if j > 0]
        return js[0] + horizon(f.child, Ts)
    last = window(f.interval, Ts, 0, 10**6)[-1]
    return last + horizon(f.child, Ts)


# -- random instances --------------------------------------------------------

DIM = 2
TS = 0.1


def _col(j, c, sign):
    if sign > 0:
        return lambda X, idx: X[idx, j] - c
    return lambda X, idx: c - X[idx, j]


def instance_table():
    t = PredicateTable()
    for j in range(DIM):
        t.register(f"a{j}", _col(j, 0.25 * j, 1))
        t.register(f"b{j}", _col(j, 0.5, -1))
    return t


PRED_IDS = [f"{p}{j}" for j in range(DIM) for p in "ab"]


def random_interval(rng, next_op=False):
    while True:
        iv = _draw_interval(rng, next_op)
        js = [j for j in window(iv, TS, 0, 10**6) if j > 0 or not next_op]
        if js:
            return iv


def _draw_interval(rng, next_op):
    lo = int(rng.integers(0, 4))
    hi = lo + int(rng.integers(0 if not next_op else 1, 5))
    if next_op and hi == 0:
        hi = 1
    # occasionally off-grid bounds, to exercise the rounding rule
    if rng.random() < 0.2:
        return Interval(lo * TS + 0.05 * (lo > 0), hi * TS + 0.05)
    return Interval(lo * TS, hi * TS)


def random_formula(rng, depth):
    if depth == 0 or rng.random() < 0.15:
        return Pred(PRED_IDS[int(rng.integers(len(PRED_IDS)))])
    kind = int(rng.integers(7))
    sub = lambda: random_formula(rng, depth - 1)   # noqa: E731
    if kind == 0:
        return Not(sub())
    if kind == 1:
        return And(tuple(sub() for _ in range(int(rng.integers(2, 4)))))
    if kind == 2:
        return Or(tuple(sub() for _ in range(int(rng.integers(2, 4)))))
    if kind == 3:
        return Always(random_interval(rng), sub())
    if kind == 4:
        return Eventually(random_interval(rng), sub())
    if kind == 5:
        return Next(random_interval(rng, next_op=True), sub())
    return Until(random_interval(rng), sub(), sub())


def random_instances(n, seed=0, max_depth=3, max_N=20, lo=-2.0, hi=2.0):
    """n (formula, X, k) triples with depth <= max_depth and N <= max_N."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        f = random_formula(rng, int(rng.integers(1, max_depth + 1)))
        h = horizon(f, TS)
        if h > max_N:
            continue
        N = int(rng.integers(max(h, 1), max_N + 1))
        k = int(rng.integers(0, N - h + 1))
        X = rng.uniform(lo, hi, size=(N + 1, DIM))
        out.append((f, X, k))
    return out


def argument_total(f, Ts):
    """Number of min/max arguments in the evaluation tree of f, counted by recursion."""
    if isinstance(f, (TrueF, Pred)):
        return 0
    if isinstance(f, (Not, Next)):
        return argument_total(f.child, Ts)
    if isinstance(f, (And, Or)):
        return len(f.children) + sum(argument_total(c, Ts) for c in f.children)
    js = window(f.interval, Ts, 0, 10**6)
    if isinstance(f, Until):
        total = 0
        for j in js:
            total += 1 + (j + 1) + 1      # outer max slot, j+1 lefts and the right
            total += argument_total(f.right, Ts)
        total += (js[-1] + 1) * argument_total(f.left, Ts)
        return total
    return len(js) * (1 + argument_total(f.child, Ts))


def math_isclose(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)
