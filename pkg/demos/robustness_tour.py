"""How exact and smooth robustness relate on a one-dimensional signal.

A scalar x(t) has to rise above 0.5 within one second and then stay above
zero for half a second. The exact score is a min/max recursion; the smooth
score replaces every min/max with a soft version controlled by lambda and
approaches the exact value from below as lambda grows.

    python demos/robustness_tour.py
"""
import numpy as np

from stlplan.stl import (PredicateTable, Signal, argument_count, parse_formula, robustness,
                         smooth_robustness)

Ts = 0.1
t = np.arange(0, 2.01, Ts)
x = np.tanh(3 * (t - 0.6))[:, None]

table = PredicateTable()
table.register("high", lambda X, idx: X[idx, 0] - 0.5)
table.register("pos", lambda X, idx: X[idx, 0])

f = parse_formula("F[0,1] (high & G[0,0.5] pos)", table)
sig = Signal(x, Ts)
exact = robustness(f, sig, 0, table)
A = argument_count(f, Ts)
print(f"exact robustness {exact:+.5f}  (soft operators see {A} arguments)")
for lam in (1, 3, 10, 30, 100, 300):
    s = smooth_robustness(f, sig, 0, lam, table)
    print(f"  lambda {lam:>4}: smooth {s:+.5f}   gap {exact - s:.5f}   "
          f"ln(A)/lambda {np.log(A) / lam:.5f}")

# shifting the rise later flips the sign once the window can no longer be met
for delay in (0.6, 0.9, 1.2):
    xd = np.tanh(3 * (t - delay))[:, None]
    print(f"rise at {delay:.1f} s -> exact {robustness(f, Signal(xd, Ts), 0, table):+.4f}")
