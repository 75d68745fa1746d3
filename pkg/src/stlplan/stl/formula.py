"""STL abstract syntax, predicate tables, sampled signals and interval indexing."""
from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np


class StlError(ValueError):
    pass


class IntervalError(StlError):
    pass


class HorizonError(StlError):
    """A temporal window reaches past the last sample of the signal."""


class UnknownPredicateError(StlError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise IntervalError(f"interval bounds must be finite, got [{lo}, {hi}]")
        if lo < 0:
            raise IntervalError(f"interval lower bound must be >= 0, got {lo}")
        if lo > hi:
            raise IntervalError(f"interval lower bound {lo} exceeds upper bound {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


class Formula:
    """Base class of all formula nodes. Nodes are immutable and compare structurally."""

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)

    def __str__(self):
        from .parser import unparse
        return unparse(self)


@dataclass(frozen=True, eq=True, repr=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class Pred(Formula):
    id: str


@dataclass(frozen=True)
class Not(Formula):
    child: Formula


def _check_children(kind, children):
    children = tuple(children)
    if len(children) < 2:
        raise StlError(f"{kind} needs at least two children, got {len(children)}")
    return children


@dataclass(frozen=True)
class And(Formula):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", _check_children("And", self.children))


@dataclass(frozen=True)
class Or(Formula):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", _check_children("Or", self.children))


@dataclass(frozen=True)
class Always(Formula):
    interval: Interval
    child: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    interval: Interval
    child: Formula


@dataclass(frozen=True)
class Next(Formula):
    interval: Interval
    child: Formula


@dataclass(frozen=True)
class Until(Formula):
    interval: Interval
    left: Formula
    right: Formula


def implies(a, b):
    return Or((Not(a), b))


def conj(items):
    """And of a list, collapsing the single-item case."""
    items = list(items)
    return items[0] if len(items) == 1 else And(tuple(items))


def disj(items):
    items = list(items)
    return items[0] if len(items) == 1 else Or(tuple(items))


def children(f):
    if isinstance(f, (And, Or)):
        return f.children
    if isinstance(f, (Not, Always, Eventually, Next)):
        return (f.child,)
    if isinstance(f, Until):
        return (f.left, f.right)
    return ()


def depth(f):
    ch = children(f)
    return 0 if not ch else 1 + max(depth(c) for c in ch)


def predicate_ids(f):
    out = set()
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Pred):
            out.add(g.id)
        stack.extend(children(g))
    return out


@dataclass(frozen=True)
class Predicate:
    """Real-valued predicate mu(X, idx): X is the (N+1, d) sample array, idx an int array.

    Must return an array whose last axis matches idx. Leading axes are allowed
    (batched evaluation, e.g. one row per human-pose realization).
    """
    id: str
    fn: Callable
    name: str = ""
    group: str = ""


class PredicateTable:
    def __init__(self, predicates=()):
        self._preds = {}
        for p in predicates:
            self.add(p)

    def add(self, p):
        if p.id in self._preds:
            raise StlError(f"duplicate predicate id {p.id!r}")
        self._preds[p.id] = p
        return p

    def register(self, pid, fn, name="", group=""):
        return self.add(Predicate(pid, fn, name or pid, group))

    def __getitem__(self, pid):
        try:
            return self._preds[pid]
        except KeyError:
            raise UnknownPredicateError(f"unknown predicate {pid!r}") from None

    def __contains__(self, pid):
        return pid in self._preds

    def __iter__(self):
        return iter(self._preds.values())

    def __len__(self):
        return len(self._preds)

    def ids(self):
        return list(self._preds)

    def groups(self):
        out = {}
        for p in self._preds.values():
            out.setdefault(p.group or p.id, []).append(p.id)
        return out

    def check(self, f):
        missing = sorted(predicate_ids(f) - set(self._preds))
        if missing:
            raise UnknownPredicateError(f"unregistered predicates: {', '.join(missing)}")


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    Ts: float
    t0: float = 0.0

    def __post_init__(self):
        x = self.samples
        if not hasattr(x, "ndim"):
            x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise StlError("signal samples must be a (N+1, d) array")
        if x.shape[0] < 2:
            raise StlError("signal needs at least two samples (N >= 1)")
        if not self.Ts > 0:
            raise StlError("sampling period must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def N(self):
        return self.samples.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.Ts * np.arange(self.N + 1)


def _snap(x, tol=1e-9):
    # absorb float noise such as 0.3/0.1 = 2.9999999999999996
    r = round(x)
    return float(r) if abs(x - r) <= tol * max(1.0, abs(x)) else x


def window_offsets(iv, Ts):
    """Sample offsets (a, b) such that the window anchored at k covers k+a .. k+b."""
    a = math.ceil(_snap(iv.lo / Ts))
    b = math.floor(_snap(iv.hi / Ts))
    if a > b:
        raise IntervalError(f"interval [{iv.lo}, {iv.hi}] contains no sample at period {Ts}")
    return a, b


def next_offset(iv, Ts):
    a, b = window_offsets(iv, Ts)
    # a zero lower bound means "the following sample"
    a = max(a, 1)
    if a > b:
        raise IntervalError(f"next-interval [{iv.lo}, {iv.hi}] has no sample after the anchor")
    return a


def interval_to_samples(iv, Ts, k, n_samples=None):
    """Inclusive index range (first, last) of the window iv anchored at sample k."""
    if k < 0:
        raise StlError("sample index must be >= 0")
    a, b = window_offsets(iv, Ts)
    first, last = k + a, k + b
    if n_samples is not None and last > n_samples - 1:
        raise HorizonError(f"window [{iv.lo}, {iv.hi}] at k={k} needs sample {last}, "
                           f"signal ends at {n_samples - 1}")
    return first, last


def required_horizon(f, Ts):
    """Number of samples after the anchor that evaluating f needs."""
    if isinstance(f, (TrueF, Pred)):
        return 0
    if isinstance(f, Not):
        return required_horizon(f.child, Ts)
    if isinstance(f, (And, Or)):
        return max(required_horizon(c, Ts) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return window_offsets(f.interval, Ts)[1] + required_horizon(f.child, Ts)
    if isinstance(f, Next):
        return next_offset(f.interval, Ts) + required_horizon(f.child, Ts)
    if isinstance(f, Until):
        b = window_offsets(f.interval, Ts)[1]
        return b + max(required_horizon(f.left, Ts), required_horizon(f.right, Ts))
    raise StlError(f"unknown formula node {type(f).__name__}")
